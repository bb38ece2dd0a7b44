#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "groupflow/io.hpp"

namespace groupflow {

namespace {

constexpr std::size_t kHeaderSize = 348;

enum : int { kUint8 = 2, kInt16 = 4, kFloat32 = 16, kUint16 = 512 };

struct NiftiData {
  Dims dims{1, 1, 1};
  int datatype = 0;
  std::vector<double> values;
  bool integral = false;
};

bool is_gzip(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char magic[2] = {0, 0};
  in.read(reinterpret_cast<char*>(magic), 2);
  return in.gcount() == 2 && magic[0] == 0x1f && magic[1] == 0x8b;
}

class HeaderView {
 public:
  HeaderView(const std::vector<std::uint8_t>& b, bool swap) : b_(b), swap_(swap) {}
  std::int16_t i16(std::size_t off) const {
    std::uint16_t v;
    std::memcpy(&v, b_.data() + off, 2);
    if (swap_) v = std::uint16_t((v >> 8) | (v << 8));
    return std::int16_t(v);
  }
  std::int32_t i32(std::size_t off) const {
    std::uint32_t v;
    std::memcpy(&v, b_.data() + off, 4);
    if (swap_) v = __builtin_bswap32(v);
    return std::int32_t(v);
  }
  float f32(std::size_t off) const {
    const std::int32_t i = i32(off);
    float f;
    std::memcpy(&f, &i, 4);
    return f;
  }

 private:
  const std::vector<std::uint8_t>& b_;
  bool swap_;
};

NiftiData read_nifti(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) throw Error(ErrorKind::InputNotFound, "input not found: " + path.string());
  const auto bytes = read_file_bytes(path, is_gzip(path));
  const std::string name = path.string();
  if (bytes.size() < 4) throw Error(ErrorKind::Format, name + ": not a NIfTI-1 file");
  std::int32_t sizeof_hdr;
  std::memcpy(&sizeof_hdr, bytes.data(), 4);
  bool swap = false;
  if (sizeof_hdr != 348) {
    if (std::int32_t(__builtin_bswap32(std::uint32_t(sizeof_hdr))) != 348) {
      throw Error(ErrorKind::Format, name + ": not a NIfTI-1 file");
    }
    swap = true;
  }
  if (bytes.size() < kHeaderSize) throw Error(ErrorKind::Truncated, name + ": NIfTI header is truncated");
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) {
    if (std::memcmp(bytes.data() + 344, "ni1\0", 4) == 0) {
      throw Error(ErrorKind::Unsupported, name + ": two-file NIfTI (.hdr/.img) is not supported");
    }
    throw Error(ErrorKind::Format, name + ": bad NIfTI magic");
  }
  const HeaderView h(bytes, swap);
  const int ndim = h.i16(40);
  if (ndim < 1 || ndim > 7) throw Error(ErrorKind::Format, name + ": bad dim[0]");
  if (ndim > 4 || (ndim == 4 && h.i16(48) != 1)) {
    throw Error(ErrorKind::Unsupported, name + ": only scalar 3-D volumes are supported (dim[0] = " + std::to_string(ndim) + ")");
  }
  NiftiData out;
  std::size_t voxels = 1;
  for (int a = 0; a < 3; ++a) {
    const int n = a < ndim ? h.i16(std::size_t(42 + 2 * a)) : 1;
    if (n < 1) throw Error(ErrorKind::Format, name + ": bad grid dimension");
    out.dims[a] = n;
    voxels *= std::size_t(n);  // at most 32767^3, no overflow in 64 bits
  }
  out.datatype = h.i16(70);
  std::size_t bytes_per = 0;
  switch (out.datatype) {
    case kUint8: bytes_per = 1; break;
    case kInt16:
    case kUint16: bytes_per = 2; break;
    case kFloat32: bytes_per = 4; break;
    default: throw Error(ErrorKind::Unsupported, name + ": unsupported NIfTI datatype " + std::to_string(out.datatype));
  }
  out.integral = out.datatype != kFloat32;
  const float vox_offset = h.f32(108);
  if (!(vox_offset >= 348.0f) || vox_offset > float(bytes.size())) throw Error(ErrorKind::Format, name + ": bad vox_offset");
  const std::size_t offset = std::size_t(vox_offset);
  if (bytes.size() - offset < voxels * bytes_per) throw Error(ErrorKind::Truncated, name + ": NIfTI payload is truncated");

  double slope = h.f32(112);
  double inter = h.f32(116);
  const bool scaled = std::isfinite(slope) && slope != 0.0 && !(slope == 1.0 && inter == 0.0);
  if (!scaled) {
    slope = 1.0;
    inter = 0.0;
  } else {
    out.integral = false;
  }
  out.values.resize(voxels);
  const std::uint8_t* p = bytes.data() + offset;
  for (std::size_t i = 0; i < voxels; ++i) {
    double v = 0.0;
    switch (out.datatype) {
      case kUint8: v = p[i]; break;
      case kInt16: {
        std::uint16_t u;
        std::memcpy(&u, p + 2 * i, 2);
        if (swap) u = std::uint16_t((u >> 8) | (u << 8));
        v = std::int16_t(u);
        break;
      }
      case kUint16: {
        std::uint16_t u;
        std::memcpy(&u, p + 2 * i, 2);
        if (swap) u = std::uint16_t((u >> 8) | (u << 8));
        v = u;
        break;
      }
      case kFloat32: {
        std::uint32_t u;
        std::memcpy(&u, p + 4 * i, 4);
        if (swap) u = __builtin_bswap32(u);
        float f;
        std::memcpy(&f, &u, 4);
        v = f;
        break;
      }
    }
    out.values[i] = slope * v + inter;
    if (!std::isfinite(out.values[i])) throw Error(ErrorKind::NonFinite, name + ": non-finite intensity");
  }
  return out;
}

}  // namespace

Volume read_nifti_volume(const std::filesystem::path& path) {
  NiftiData d = read_nifti(path);
  Volume v(GridGeometry::fit_unit_cube(d.dims));
  v.data = std::move(d.values);
  return v;
}

LabelVolume read_nifti_labels(const std::filesystem::path& path) {
  NiftiData d = read_nifti(path);
  LabelVolume v(GridGeometry::fit_unit_cube(d.dims));
  for (std::size_t i = 0; i < d.values.size(); ++i) {
    const double x = d.values[i];
    if (x < 0.0 || x > 65535.0 || x != std::floor(x)) {
      throw Error(ErrorKind::Format, path.string() + ": label volume must hold non-negative integers");
    }
    v.labels[i] = std::uint16_t(x);
  }
  return v;
}

}  // namespace groupflow
