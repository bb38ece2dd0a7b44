#include "groupflow/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>

#include <zlib.h>

namespace groupflow {

namespace {

constexpr char kContainerMagic[8] = {'G', 'R', 'P', 'F', 'L', 'O', 'W', '\0'};
constexpr char kCheckpointMagic[8] = {'G', 'F', 'C', 'K', 'P', 'T', '1', '\0'};
constexpr std::uint32_t kByteOrderMarker = 0x01020304u;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  }
  void u8(std::uint8_t v) { buf.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f64(double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    u64(u);
  }
  void f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void crc() { u32(crc32_bytes(buf.data(), buf.size())); }

  std::vector<std::uint8_t> buf;
};

class Reader {
 public:
  Reader(const std::vector<std::uint8_t>& b, std::string what) : buf(b), name(std::move(what)) {}
  void need(std::size_t n) const {
    if (n > buf.size() || pos > buf.size() - n) throw Error(ErrorKind::Truncated, name + ": file is truncated");
  }
  void bytes(void* out, std::size_t n) {
    need(n);
    std::memcpy(out, buf.data() + pos, n);
    pos += n;
  }
  std::uint8_t u8() {
    need(1);
    return buf[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = std::uint16_t(buf[pos] | (buf[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(buf[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(buf[pos + std::size_t(i)]) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() {
    const std::uint64_t u = u64();
    double v;
    std::memcpy(&v, &u, 8);
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::size_t remaining() const { return buf.size() - pos; }

  const std::vector<std::uint8_t>& buf;
  std::string name;
  std::size_t pos = 0;
};

void verify_crc(const std::vector<std::uint8_t>& b, const std::string& name) {
  if (b.size() < 4) throw Error(ErrorKind::Truncated, name + ": file is truncated");
  const std::size_t body = b.size() - 4;
  std::uint32_t stored = 0;
  for (int i = 0; i < 4; ++i) stored |= std::uint32_t(b[body + std::size_t(i)]) << (8 * i);
  if (crc32_bytes(b.data(), body) != stored) throw Error(ErrorKind::Checksum, name + ": checksum mismatch");
}

std::size_t element_size(ElementType t) {
  switch (t) {
    case ElementType::F32: return 4;
    case ElementType::F64: return 8;
    case ElementType::U16: return 2;
  }
  return 0;
}

// Multiplies sizes, throwing instead of wrapping around.
std::size_t checked_mul(std::size_t a, std::size_t b, const std::string& name) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) {
    throw Error(ErrorKind::Format, name + ": size overflow in header");
  }
  return a * b;
}

std::vector<std::uint8_t> encode_header(const ContainerHeader& h, std::uint64_t payload) {
  Writer w;
  w.bytes(kContainerMagic, 8);
  w.u32(h.version);
  w.u32(kByteOrderMarker);
  w.u32(std::uint32_t(h.kind));
  w.u32(std::uint32_t(h.element));
  w.u32(h.channels);
  w.u32(h.group);
  w.u32(h.has_mask ? 1u : 0u);
  w.u32(0);  // reserved
  for (int a = 0; a < 3; ++a) w.u32(std::uint32_t(h.geom.dims[a]));
  for (int a = 0; a < 3; ++a) w.f64(h.geom.lo[a]);
  for (int a = 0; a < 3; ++a) w.f64(h.geom.hi[a]);
  w.u64(payload);
  return w.buf;
}

struct Decoded {
  ContainerHeader header;
  std::size_t voxels = 0;
  std::size_t payload_offset = 0;
};

Decoded decode_header(Reader& r) {
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kContainerMagic, 8) != 0) throw Error(ErrorKind::Format, r.name + ": not a groupflow container");
  Decoded d;
  auto& h = d.header;
  h.version = r.u32();
  if (h.version != 1) throw Error(ErrorKind::Unsupported, r.name + ": unsupported container version");
  if (r.u32() != kByteOrderMarker) throw Error(ErrorKind::Format, r.name + ": bad byte order marker");
  const std::uint32_t kind = r.u32();
  const std::uint32_t element = r.u32();
  if (kind < 1 || kind > 4) throw Error(ErrorKind::Format, r.name + ": unknown container kind");
  if (element < 1 || element > 3) throw Error(ErrorKind::Format, r.name + ": unknown element type");
  h.kind = ContainerKind(kind);
  h.element = ElementType(element);
  h.channels = r.u32();
  h.group = r.u32();
  const std::uint32_t mask = r.u32();
  if (mask > 1) throw Error(ErrorKind::Format, r.name + ": bad mask flag");
  h.has_mask = mask == 1;
  r.u32();
  std::size_t voxels = 1;
  for (int a = 0; a < 3; ++a) {
    const std::uint32_t n = r.u32();
    if (n == 0 || n > std::uint32_t(std::numeric_limits<int>::max())) {
      throw Error(ErrorKind::Format, r.name + ": bad grid dimension");
    }
    h.geom.dims[a] = int(n);
    voxels = checked_mul(voxels, n, r.name);
  }
  for (int a = 0; a < 3; ++a) h.geom.lo[a] = r.f64();
  for (int a = 0; a < 3; ++a) h.geom.hi[a] = r.f64();
  for (int a = 0; a < 3; ++a) {
    if (!std::isfinite(h.geom.lo[a]) || !std::isfinite(h.geom.hi[a]) || !(h.geom.hi[a] > h.geom.lo[a])) {
      throw Error(ErrorKind::Format, r.name + ": bad domain box");
    }
  }
  if (h.channels == 0 || h.channels > 64) throw Error(ErrorKind::Format, r.name + ": bad channel count");
  const std::uint64_t payload = r.u64();
  std::size_t expected = checked_mul(checked_mul(voxels, h.channels, r.name), element_size(h.element), r.name);
  if (h.has_mask) expected += voxels;
  if (payload != expected) throw Error(ErrorKind::Format, r.name + ": payload length does not match header");
  d.voxels = voxels;
  d.payload_offset = r.pos;
  return d;
}

std::string path_name(const std::filesystem::path& p) { return p.string(); }

void write_container(const std::filesystem::path& path, ContainerHeader h, const std::vector<double>* values,
                     const std::vector<std::uint16_t>* labels, const std::vector<std::uint8_t>* mask) {
  const std::size_t voxels = h.geom.size();
  h.has_mask = mask != nullptr;
  std::uint64_t payload = std::uint64_t(voxels) * h.channels * element_size(h.element) + (mask ? voxels : 0);
  Writer w;
  w.buf = encode_header(h, payload);
  if (values) {
    for (double v : *values) {
      if (h.element == ElementType::F32) {
        w.f32(float(v));
      } else {
        w.f64(v);
      }
    }
  }
  if (labels) {
    for (std::uint16_t v : *labels) w.u16(v);
  }
  if (mask) w.bytes(mask->data(), mask->size());
  w.crc();
  write_file_bytes(path, w.buf);
}

struct ContainerData {
  ContainerHeader header;
  std::vector<double> values;
  std::vector<std::uint16_t> labels;
  std::optional<std::vector<std::uint8_t>> mask;
};

ContainerData read_container(const std::filesystem::path& path, ContainerKind expected) {
  const auto bytes = read_file_bytes(path);
  const std::string name = path_name(path);
  Reader r(bytes, name);
  Decoded d = decode_header(r);
  if (d.header.kind != expected) throw Error(ErrorKind::Format, name + ": container holds a different kind of data");
  const std::size_t count = d.voxels * d.header.channels;
  const std::size_t payload = count * element_size(d.header.element) + (d.header.has_mask ? d.voxels : 0);
  r.need(payload + 4);
  if (r.remaining() != payload + 4) throw Error(ErrorKind::Format, name + ": trailing bytes after payload");
  verify_crc(bytes, name);
  ContainerData out;
  out.header = d.header;
  if (d.header.element == ElementType::U16) {
    out.labels.resize(count);
    for (auto& v : out.labels) v = r.u16();
  } else {
    out.values.resize(count);
    for (auto& v : out.values) v = d.header.element == ElementType::F32 ? double(r.f32()) : r.f64();
  }
  if (d.header.has_mask) {
    std::vector<std::uint8_t> m(d.voxels);
    r.bytes(m.data(), m.size());
    out.mask = std::move(m);
  }
  return out;
}

}  // namespace

ContainerHeader read_container_header(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  Reader r(bytes, path_name(path));
  return decode_header(r).header;
}

void write_volume(const std::filesystem::path& path, const Volume& v, ElementType element) {
  if (element == ElementType::U16) throw Error(ErrorKind::InvalidArgument, "volumes are stored as f32 or f64");
  ContainerHeader h;
  h.kind = ContainerKind::Volume;
  h.element = element;
  h.geom = v.geom;
  write_container(path, h, &v.data, nullptr, v.mask ? &*v.mask : nullptr);
}

Volume read_volume(const std::filesystem::path& path) {
  auto d = read_container(path, ContainerKind::Volume);
  if (d.header.channels != 1 || d.header.element == ElementType::U16) {
    throw Error(ErrorKind::Format, path_name(path) + ": volume must be a single real channel");
  }
  Volume v;
  v.geom = d.header.geom;
  v.data = std::move(d.values);
  v.mask = std::move(d.mask);
  return v;
}

void write_labels(const std::filesystem::path& path, const LabelVolume& v) {
  ContainerHeader h;
  h.kind = ContainerKind::Labels;
  h.element = ElementType::U16;
  h.geom = v.geom;
  write_container(path, h, nullptr, &v.labels, nullptr);
}

LabelVolume read_labels(const std::filesystem::path& path) {
  auto d = read_container(path, ContainerKind::Labels);
  if (d.header.channels != 1 || d.header.element != ElementType::U16) {
    throw Error(ErrorKind::Format, path_name(path) + ": labels must be a single u16 channel");
  }
  LabelVolume v;
  v.geom = d.header.geom;
  v.labels = std::move(d.labels);
  return v;
}

void write_dispfield(const std::filesystem::path& path, const DispField& f) {
  ContainerHeader h;
  h.kind = ContainerKind::Displacement;
  h.channels = 3;
  h.geom = f.geom;
  std::vector<double> values;
  values.reserve(f.data.size() * 3);
  for (const Vec3& d : f.data) values.insert(values.end(), {d[0], d[1], d[2]});
  write_container(path, h, &values, nullptr, nullptr);
}

DispField read_dispfield(const std::filesystem::path& path) {
  auto d = read_container(path, ContainerKind::Displacement);
  if (d.header.channels != 3 || d.header.element != ElementType::F64) {
    throw Error(ErrorKind::Format, path_name(path) + ": displacement fields are three f64 channels");
  }
  DispField f(d.header.geom);
  for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = Vec3(d.values[3 * i], d.values[3 * i + 1], d.values[3 * i + 2]);
  return f;
}

void write_liefield(const std::filesystem::path& path, const LieCoeffField& f) {
  ContainerHeader h;
  h.kind = ContainerKind::LieCoefficients;
  h.channels = std::uint32_t(f.channels());
  h.group = std::uint32_t(f.group);
  h.geom = f.geom;
  write_container(path, h, &f.data, nullptr, nullptr);
}

LieCoeffField read_liefield(const std::filesystem::path& path) {
  auto d = read_container(path, ContainerKind::LieCoefficients);
  if (d.header.group > 2 || d.header.element != ElementType::F64) {
    throw Error(ErrorKind::Format, path_name(path) + ": bad Lie field header");
  }
  const GroupKind kind = GroupKind(d.header.group);
  if (int(d.header.channels) != algebra_dim(kind)) {
    throw Error(ErrorKind::Format, path_name(path) + ": channel count does not match the group");
  }
  LieCoeffField f(d.header.geom, kind);
  f.data = std::move(d.values);
  return f;
}

void write_checkpoint(const std::filesystem::path& path, const SirenParams& p) {
  const auto& c = p.config;
  Writer w;
  w.bytes(kCheckpointMagic, 8);
  w.u32(1);
  w.u32(kByteOrderMarker);
  w.u32(std::uint32_t(c.in_dim));
  w.u32(std::uint32_t(c.hidden_dim));
  w.u32(std::uint32_t(c.n_blocks));
  w.u32(std::uint32_t(c.out_dim));
  w.u32(std::uint32_t(c.residual));
  w.u32(0);  // reserved
  w.f64(c.w0);
  w.u64(c.seed);
  w.u64(p.step);
  w.u64(std::uint64_t(p.theta.size()));
  for (const Eigen::VectorXd* v : {&p.theta, &p.adam_m, &p.adam_v}) {
    for (Eigen::Index i = 0; i < v->size(); ++i) w.f64((*v)[i]);
  }
  w.crc();
  write_file_bytes(path, w.buf);
}

SirenParams read_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string name = path_name(path);
  Reader r(bytes, name);
  char magic[8];
  r.bytes(magic, 8);
  if (std::memcmp(magic, kCheckpointMagic, 8) != 0) throw Error(ErrorKind::Format, name + ": not a checkpoint");
  if (r.u32() != 1) throw Error(ErrorKind::Unsupported, name + ": unsupported checkpoint version");
  if (r.u32() != kByteOrderMarker) throw Error(ErrorKind::Format, name + ": bad byte order marker");
  SirenConfig c;
  c.in_dim = int(r.u32());
  c.hidden_dim = int(r.u32());
  c.n_blocks = int(r.u32());
  c.out_dim = int(r.u32());
  const std::uint32_t residual = r.u32();
  if (residual > 1) throw Error(ErrorKind::Format, name + ": bad residual mode");
  c.residual = ResidualMode(residual);
  r.u32();
  c.w0 = r.f64();
  c.seed = r.u64();
  SirenParams p;
  p.step = r.u64();
  const std::uint64_t count = r.u64();
  if (c.in_dim < 1 || c.hidden_dim < 1 || c.n_blocks < 0 || c.out_dim < 1 || c.hidden_dim > (1 << 20) ||
      c.n_blocks > 1024 || c.in_dim > 64 || c.out_dim > 64) {
    throw Error(ErrorKind::Format, name + ": bad network shape");
  }
  if (count != std::uint64_t(parameter_count(c))) throw Error(ErrorKind::Format, name + ": parameter count mismatch");
  r.need(checked_mul(std::size_t(count), 24, name) + 4);
  if (r.remaining() != std::size_t(count) * 24 + 4) throw Error(ErrorKind::Format, name + ": trailing bytes");
  verify_crc(bytes, name);
  p.config = c;
  for (Eigen::VectorXd* v : {&p.theta, &p.adam_m, &p.adam_v}) {
    v->resize(Eigen::Index(count));
    for (Eigen::Index i = 0; i < v->size(); ++i) (*v)[i] = r.f64();
  }
  return p;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path, bool decompress_gzip) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    throw Error(ErrorKind::InputNotFound, "input not found: " + path_name(path));
  }
  if (decompress_gzip) {
    gzFile f = gzopen(path.string().c_str(), "rb");
    if (!f) throw Error(ErrorKind::Io, "cannot open " + path_name(path));
    std::vector<std::uint8_t> out;
    std::uint8_t chunk[1 << 16];
    for (;;) {
      const int n = gzread(f, chunk, sizeof(chunk));
      if (n < 0) {
        gzclose(f);
        throw Error(ErrorKind::Format, path_name(path) + ": corrupt compressed stream");
      }
      if (n == 0) break;
      out.insert(out.end(), chunk, chunk + n);
    }
    gzclose(f);
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path_name(path));
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path_name(path));
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw Error(ErrorKind::Io, "write failed: " + path_name(path));
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  write_file_bytes(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

std::uint32_t crc32_bytes(const std::uint8_t* data, std::size_t size) {
  uLong crc = crc32(0L, Z_NULL, 0);
  while (size > 0) {
    const uInt chunk = uInt(std::min<std::size_t>(size, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    size -= chunk;
  }
  return std::uint32_t(crc);
}

std::uint32_t file_crc32(const std::filesystem::path& path) {
  const auto b = read_file_bytes(path);
  return crc32_bytes(b.data(), b.size());
}

std::uint32_t file_adler32(const std::filesystem::path& path) {
  const auto b = read_file_bytes(path);
  uLong a = adler32(0L, Z_NULL, 0);
  std::size_t pos = 0;
  while (pos < b.size()) {
    const uInt chunk = uInt(std::min<std::size_t>(b.size() - pos, 1u << 30));
    a = adler32(a, b.data() + pos, chunk);
    pos += chunk;
  }
  return std::uint32_t(a);
}

std::string hex32(std::uint32_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(8, '0');
  for (int i = 7; i >= 0; --i, v >>= 4) s[std::size_t(i)] = digits[v & 0xF];
  return s;
}

}  // namespace groupflow
