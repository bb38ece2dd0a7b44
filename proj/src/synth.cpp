#include "groupflow/synth.hpp"

#include <cmath>

#include <Eigen/Geometry>
#include <Eigen/LU>

#include "groupflow/parallel.hpp"

namespace groupflow {

void SynthConfig::validate() const {
  for (int d : control_grid) {
    if (d < 2) throw Error(ErrorKind::InvalidArgument, "control grid needs at least 2 points per axis");
  }
  if (!(max_angle >= 0.0 && max_angle < M_PI)) throw Error(ErrorKind::InvalidArgument, "max_angle must lie in [0, pi)");
  if (!(rotation_scale >= 0.0 && rotation_scale <= 1.0) || !(translation_scale >= 0.0 && translation_scale <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "sweep scales must lie in [0, 1]");
  }
  if (!(noise_sigma >= 0.0) || !(max_translation >= 0.0) || !(max_perturbation >= 0.0) || !(pad_fraction >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "synthetic magnitudes must be non-negative");
  }
}

namespace {

Vec3 random_direction(Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    Vec3 v(n(rng), n(rng), n(rng));
    const double len = v.norm();
    if (len > 1e-12) return v / len;
  }
}

}  // namespace

RigidSample sample_rigid(const SynthConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> sym(-1.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  RigidSample s;
  s.axis = random_direction(rng);
  s.angle = sym(rng) * cfg.max_angle * cfg.rotation_scale;
  const Vec3 dir = random_direction(rng);
  double length = unit(rng) * cfg.max_translation * cfg.translation_scale;
  if (cfg.fixed_angle) s.angle = *cfg.fixed_angle;
  if (cfg.fixed_translation) length = *cfg.fixed_translation;
  s.translation = length * dir;
  s.matrix = Mat4::Identity();
  s.matrix.block<3, 3>(0, 0) = Eigen::AngleAxisd(s.angle, s.axis).toRotationMatrix();
  s.matrix.block<3, 1>(0, 3) = s.translation;
  return s;
}

PolyharmonicSpline::PolyharmonicSpline(std::vector<Vec3> centers, const std::vector<Vec3>& values)
    : centers_(std::move(centers)) {
  const Eigen::Index n = Eigen::Index(centers_.size());
  if (values.size() != centers_.size() || n < 4) {
    throw Error(ErrorKind::InvalidArgument, "spline: need at least 4 centers with one value each");
  }
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n + 4, n + 4);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 4, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r = (centers_[std::size_t(i)] - centers_[std::size_t(j)]).norm();
      A(i, j) = r * r * r;
    }
    A(i, n) = 1.0;
    A(n, i) = 1.0;
    for (int a = 0; a < 3; ++a) {
      A(i, n + 1 + a) = centers_[std::size_t(i)][a];
      A(n + 1 + a, i) = centers_[std::size_t(i)][a];
    }
    rhs.row(i) = values[std::size_t(i)].transpose();
  }
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  weights_ = lu.solve(rhs);
  const double residual = (A * weights_ - rhs).norm();
  if (!weights_.allFinite() || residual > 1e-8 * (1.0 + rhs.norm())) {
    throw Error(ErrorKind::InvalidArgument, "spline system is singular (coincident control points?)");
  }
}

Vec3 PolyharmonicSpline::operator()(const Vec3& p) const {
  const std::size_t n = centers_.size();
  Vec3 out = Vec3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = (p - centers_[i]).norm();
    out += (r * r * r) * weights_.row(Eigen::Index(i)).transpose();
  }
  const Eigen::Index b = Eigen::Index(n);
  out += weights_.row(b).transpose();
  for (int a = 0; a < 3; ++a) out += p[a] * weights_.row(b + 1 + a).transpose();
  return out;
}

double PolyharmonicSpline::max_rbf_weight() const {
  return weights_.topRows(Eigen::Index(centers_.size())).cwiseAbs().maxCoeff();
}

std::vector<Vec3> control_points(const SynthConfig& cfg, const GridGeometry& geom) {
  std::vector<Vec3> pts;
  const auto& c = cfg.control_grid;
  for (int k = 0; k < c[2]; ++k) {
    for (int j = 0; j < c[1]; ++j) {
      for (int i = 0; i < c[0]; ++i) {
        const int idx[3] = {i, j, k};
        Vec3 p;
        for (int a = 0; a < 3; ++a) p[a] = geom.lo[a] + (geom.hi[a] - geom.lo[a]) * idx[a] / double(c[a] - 1);
        pts.push_back(p);
      }
    }
  }
  return pts;
}

GroundTruth generate_field(const SynthConfig& cfg, const GridGeometry& geom, Rng& rng) {
  cfg.validate();
  GroundTruth gt;
  const RigidSample rigid = sample_rigid(cfg, rng);
  gt.rigid = rigid.matrix;
  gt.control_points = control_points(cfg, geom);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const Vec3& p : gt.control_points) {
    const Vec3 dir = random_direction(rng);
    const double len = unit(rng) * cfg.max_perturbation;
    const Vec3 target = apply_homogeneous<double>(gt.rigid, p) + len * dir;
    gt.control_displacements.push_back(target - p);
  }
  const PolyharmonicSpline spline(gt.control_points, gt.control_displacements);
  gt.phi = DispField(geom);
  parallel_for(geom.size(), [&](std::size_t i) { gt.phi.data[i] = spline(geom.center(i)); });
  return gt;
}

namespace {

std::array<int, 3> pad_widths(const Dims& d, double frac) {
  return {int(std::lround(frac * d[0])), int(std::lround(frac * d[1])), int(std::lround(frac * d[2]))};
}

template <class T>
std::vector<T> pad_data(const std::vector<T>& src, const Dims& d, const std::array<int, 3>& p, const GridGeometry& out) {
  std::vector<T> dst(out.size(), T(0));
  for (int k = 0; k < d[2]; ++k) {
    for (int j = 0; j < d[1]; ++j) {
      for (int i = 0; i < d[0]; ++i) {
        dst[out.index(i + p[0], j + p[1], k + p[2])] =
            src[std::size_t(i) + std::size_t(d[0]) * (std::size_t(j) + std::size_t(d[1]) * std::size_t(k))];
      }
    }
  }
  return dst;
}

}  // namespace

Volume pad_volume(const Volume& v, double pad_fraction) {
  const auto p = pad_widths(v.geom.dims, pad_fraction);
  const GridGeometry g = GridGeometry::fit_unit_cube({v.geom.dims[0] + 2 * p[0], v.geom.dims[1] + 2 * p[1], v.geom.dims[2] + 2 * p[2]});
  Volume out(g);
  out.data = pad_data(v.data, v.geom.dims, p, g);
  if (v.mask) out.mask = pad_data(*v.mask, v.geom.dims, p, g);
  return out;
}

LabelVolume pad_labels(const LabelVolume& v, double pad_fraction) {
  const auto p = pad_widths(v.geom.dims, pad_fraction);
  const GridGeometry g = GridGeometry::fit_unit_cube({v.geom.dims[0] + 2 * p[0], v.geom.dims[1] + 2 * p[1], v.geom.dims[2] + 2 * p[2]});
  LabelVolume out(g);
  out.labels = pad_data(v.labels, v.geom.dims, p, g);
  return out;
}

SyntheticPair synthesize_pair(const Volume& reference, const SynthConfig& cfg, Rng& rng, const LabelVolume* labels) {
  cfg.validate();
  Volume padded = pad_volume(reference, cfg.pad_fraction);
  if (!padded.mask) {
    std::vector<std::uint8_t> m(padded.data.size());
    for (std::size_t i = 0; i < m.size(); ++i) m[i] = padded.data[i] != 0.0;
    padded.mask = std::move(m);
  }
  SyntheticPair pair;
  pair.truth = generate_field(cfg, padded.geom, rng);
  pair.fixed = warp_volume(padded, pair.truth.phi);
  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (double& x : pair.fixed.data) x += noise(rng);
  }
  pair.mask = *pair.fixed.mask;
  pair.moving = std::move(padded);
  if (labels) {
    require_same_geometry(labels->geom, reference.geom, "synthesize_pair labels");
    LabelVolume pl = pad_labels(*labels, cfg.pad_fraction);
    pair.fixed_labels = warp_labels(pl, pair.truth.phi);
    pair.moving_labels = std::move(pl);
  }
  return pair;
}

SynthConfig sweep_config(const SynthConfig& cfg, int i, int k, SweepKind kind) {
  const double s = k > 1 ? double(i) / double(k - 1) : 0.0;
  SynthConfig c = cfg;
  if (kind == SweepKind::Rotation) {
    c.fixed_angle = s * M_PI / 2.0;
    c.fixed_translation = 0.0;
  } else {
    c.fixed_angle = 0.0;
    c.fixed_translation = s * 0.2;  // 10% of the width 2 of the normalized domain
  }
  return c;
}

std::vector<SyntheticPair> sweep_magnitudes(const Volume& reference, const SynthConfig& cfg, int k, SweepKind kind,
                                            const LabelVolume* labels) {
  if (k < 1) throw Error(ErrorKind::InvalidArgument, "sweep needs k >= 1");
  std::vector<SyntheticPair> out;
  for (int i = 0; i < k; ++i) {
    Rng rng(cfg.seed);
    out.push_back(synthesize_pair(reference, sweep_config(cfg, i, k, kind), rng, labels));
  }
  return out;
}

namespace {

struct Blob {
  Vec3 center;
  Vec3 radii;
  double intensity;
};

// Smooth indicator of an ellipsoid: 1 inside, 0 outside, soft edge.
double soft_inside(const Vec3& x, const Vec3& c, const Vec3& r, double width) {
  const double f = (x - c).cwiseQuotient(r).norm() - 1.0;
  return 1.0 / (1.0 + std::exp(f / width));
}

}  // namespace

Phantom make_phantom(const Dims& dims, std::uint64_t seed) {
  const GridGeometry g = GridGeometry::fit_unit_cube(dims);
  Rng rng(seed);
  std::uniform_real_distribution<double> jitter(-0.04, 0.04);
  std::vector<Blob> blobs = {
      {{0.08, 0.05, 0.04}, {0.12, 0.26, 0.11}, 0.15},
      {{-0.32, 0.30, 0.10}, {0.18, 0.14, 0.20}, 0.85},
      {{0.36, -0.26, -0.20}, {0.20, 0.22, 0.15}, 0.75},
      {{-0.24, -0.42, 0.26}, {0.15, 0.12, 0.13}, 0.30},
      {{0.30, 0.46, 0.30}, {0.12, 0.15, 0.18}, 0.95},
  };
  for (auto& b : blobs) {
    for (int a = 0; a < 3; ++a) b.center[a] += jitter(rng);
  }
  const Vec3 head_c(0.0, 0.02, 0.0);
  const Vec3 head_r(0.70, 0.82, 0.68);
  const double width = 0.6 * g.spacing(0);
  Phantom p{Volume(g), LabelVolume(g)};
  std::vector<std::uint8_t> mask(g.size(), 0);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.center(i);
    const double head = soft_inside(x, head_c, head_r, width / head_r.minCoeff());
    double value = 0.5 + 0.08 * std::sin(3.0 * x[0] + 1.0) * std::cos(2.0 * x[1]) + 0.05 * x[2];
    int label = head > 0.5 ? 6 : 0;
    for (std::size_t b = 0; b < blobs.size(); ++b) {
      const double w = soft_inside(x, blobs[b].center, blobs[b].radii, width / blobs[b].radii.minCoeff());
      value += w * (blobs[b].intensity - value);
      if (w > 0.5 && head > 0.5) label = int(b) + 1;
    }
    const double intensity = head * value;
    p.image.data[i] = intensity < 1e-6 ? 0.0 : intensity;
    p.labels.labels[i] = std::uint16_t(label);
    mask[i] = head > 0.5;
  }
  p.image.mask = std::move(mask);
  return p;
}

}  // namespace groupflow
