#include "groupflow/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <string>

#include <Eigen/Dense>

#include "groupflow/parallel.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace groupflow {

int kernel_threads() {
  static const int threads = [] {
    int n = 1;
#ifdef _OPENMP
    n = omp_get_max_threads();
#endif
    if (const char* env = std::getenv("GROUPFLOW_THREADS")) {
      const int cap = std::atoi(env);
      if (cap > 0) n = std::min(n, cap);
    }
    return std::max(n, 1);
  }();
  return threads;
}

GridGeometry GridGeometry::fit_unit_cube(const Dims& dims) {
  for (int d : dims) {
    if (d < 1) throw Error(ErrorKind::InvalidArgument, "grid dims must be positive");
  }
  const int longest = *std::max_element(dims.begin(), dims.end());
  GridGeometry g;
  g.dims = dims;
  for (int a = 0; a < 3; ++a) {
    const double half = double(dims[a]) / double(longest);
    g.lo[a] = -half;
    g.hi[a] = half;
  }
  return g;
}

GridGeometry GridGeometry::resampled(const Dims& new_dims) const {
  for (int d : new_dims) {
    if (d < 1) throw Error(ErrorKind::InvalidArgument, "grid dims must be positive");
  }
  GridGeometry g = *this;
  g.dims = new_dims;
  return g;
}

std::array<int, 3> GridGeometry::ijk(std::size_t idx) const {
  const int i = int(idx % std::size_t(dims[0]));
  idx /= std::size_t(dims[0]);
  const int j = int(idx % std::size_t(dims[1]));
  const int k = int(idx / std::size_t(dims[1]));
  return {i, j, k};
}

Vec3 GridGeometry::center(int i, int j, int k) const {
  return {lo[0] + (i + 0.5) * spacing(0), lo[1] + (j + 0.5) * spacing(1),
          lo[2] + (k + 0.5) * spacing(2)};
}

Vec3 GridGeometry::center(std::size_t idx) const {
  const auto c = ijk(idx);
  return center(c[0], c[1], c[2]);
}

Vec3 GridGeometry::to_index(const Vec3& p) const {
  return {(p[0] - lo[0]) / spacing(0) - 0.5, (p[1] - lo[1]) / spacing(1) - 0.5,
          (p[2] - lo[2]) / spacing(2) - 0.5};
}

bool GridGeometry::operator==(const GridGeometry& o) const {
  return dims == o.dims && lo == o.lo && hi == o.hi;
}

void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what) {
  if (a != b) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + ": grid geometries differ");
  }
}

std::optional<std::size_t> MatrixField::first_invalid(double tol) const {
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (!is_group_element(group, data[i], tol)) return i;
  }
  return std::nullopt;
}

TrilinearStencil TrilinearStencil::at(const GridGeometry& g, const Vec3& p, bool with_derivative) {
  const Vec3 f = g.to_index(p);
  int base[3];
  double t[3];
  double dt[3];  // d t / d p along each axis
  for (int a = 0; a < 3; ++a) {
    const int n = g.dims[a];
    if (n == 1) {
      base[a] = 0;
      t[a] = 0.0;
      dt[a] = 0.0;
      continue;
    }
    double fa = f[a];
    const double nearest = std::nearbyint(fa);
    if (std::abs(fa - nearest) < 1e-10) fa = nearest;  // exact node reproduction
    double slope = 1.0 / g.spacing(a);
    if (!(fa > 0.0)) {
      fa = 0.0;
      slope = 0.0;
    } else if (fa >= double(n - 1)) {
      fa = double(n - 1);
      slope = 0.0;
    }
    int i0 = int(std::floor(fa));
    if (i0 > n - 2) i0 = n - 2;
    base[a] = i0;
    t[a] = fa - i0;
    dt[a] = slope;
  }
  TrilinearStencil s;
  int c = 0;
  for (int dz = 0; dz < 2; ++dz) {
    for (int dy = 0; dy < 2; ++dy) {
      for (int dx = 0; dx < 2; ++dx, ++c) {
        const int i = std::min(base[0] + dx, g.dims[0] - 1);
        const int j = std::min(base[1] + dy, g.dims[1] - 1);
        const int k = std::min(base[2] + dz, g.dims[2] - 1);
        s.index[c] = g.index(i, j, k);
        const double wx = dx ? t[0] : 1.0 - t[0];
        const double wy = dy ? t[1] : 1.0 - t[1];
        const double wz = dz ? t[2] : 1.0 - t[2];
        s.weight[c] = wx * wy * wz;
        if (with_derivative) {
          const double sx = dx ? dt[0] : -dt[0];
          const double sy = dy ? dt[1] : -dt[1];
          const double sz = dz ? dt[2] : -dt[2];
          s.dweight[c] = Vec3(sx * wy * wz, wx * sy * wz, wx * wy * sz);
        } else {
          s.dweight[c].setZero();
        }
      }
    }
  }
  return s;
}

double sample_trilinear(const Volume& v, const Vec3& p) {
  const auto s = TrilinearStencil::at(v.geom, p);
  double out = 0.0;
  for (int c = 0; c < 8; ++c) out += s.weight[c] * v.data[s.index[c]];
  return out;
}

void sample_trilinear(const LieCoeffField& f, const Vec3& p, double* out) {
  const int k = f.channels();
  const auto s = TrilinearStencil::at(f.geom, p);
  for (int ch = 0; ch < k; ++ch) out[ch] = 0.0;
  for (int c = 0; c < 8; ++c) {
    const double* src = f.at(s.index[c]);
    for (int ch = 0; ch < k; ++ch) out[ch] += s.weight[c] * src[ch];
  }
}

Vec3 sample_trilinear(const DispField& f, const Vec3& p) {
  const auto s = TrilinearStencil::at(f.geom, p);
  Vec3 out = Vec3::Zero();
  for (int c = 0; c < 8; ++c) out += s.weight[c] * f.data[s.index[c]];
  return out;
}

Mat4 interp_matrix_field(const MatrixField& mf, const Vec3& p) {
  const int k = algebra_dim(mf.group);
  const auto s = TrilinearStencil::at(mf.geom, p);
  double blend[kMaxAlgebraDim] = {};
  double coeffs[kMaxAlgebraDim];
  for (int c = 0; c < 8; ++c) {
    if (s.weight[c] == 0.0) continue;
    log_coeffs<double>(mf.group, mf.data[s.index[c]], coeffs);
    for (int ch = 0; ch < k; ++ch) blend[ch] += s.weight[c] * coeffs[ch];
  }
  return exp_coeffs<double>(mf.group, blend);
}

LieCoeffField log_field(const MatrixField& mf) {
  LieCoeffField out(mf.geom, mf.group);
  parallel_for(mf.data.size(), [&](std::size_t i) { log_coeffs<double>(mf.group, mf.data[i], out.at(i)); });
  return out;
}

MatrixField exp_field(const LieCoeffField& f) {
  MatrixField out(f.geom, f.group);
  parallel_for(out.data.size(), [&](std::size_t i) { out.data[i] = exp_coeffs<double>(f.group, f.at(i)); });
  return out;
}

DispField apply_matrix_field(const MatrixField& mf) {
  DispField out(mf.geom);
  parallel_for(out.data.size(), [&](std::size_t i) {
    const Vec3 x = mf.geom.center(i);
    out.data[i] = apply_homogeneous<double>(mf.data[i], x) - x;
  });
  return out;
}

namespace {

std::size_t nearest_index(const GridGeometry& g, const Vec3& p) {
  const Vec3 f = g.to_index(p);
  int c[3];
  for (int a = 0; a < 3; ++a) {
    c[a] = std::clamp(int(std::lround(f[a])), 0, g.dims[a] - 1);
  }
  return g.index(c[0], c[1], c[2]);
}

}  // namespace

Volume warp_volume(const Volume& v, const DispField& phi) {
  require_same_geometry(v.geom, phi.geom, "warp_volume");
  Volume out(v.geom);
  parallel_for(out.data.size(), [&](std::size_t i) {
    const Vec3 p = v.geom.center(i) + phi.data[i];
    out.data[i] = sample_trilinear(v, p);
  });
  if (v.mask) {
    std::vector<std::uint8_t> m(v.data.size());
    parallel_for(m.size(), [&](std::size_t i) {
      m[i] = (*v.mask)[nearest_index(v.geom, v.geom.center(i) + phi.data[i])];
    });
    out.mask = std::move(m);
  }
  return out;
}

LabelVolume warp_labels(const LabelVolume& v, const DispField& phi) {
  require_same_geometry(v.geom, phi.geom, "warp_labels");
  LabelVolume out(v.geom);
  parallel_for(out.labels.size(), [&](std::size_t i) {
    out.labels[i] = v.labels[nearest_index(v.geom, v.geom.center(i) + phi.data[i])];
  });
  return out;
}

WarpWithGradient warp_volume_with_gradient(const Volume& v, const DispField& phi) {
  require_same_geometry(v.geom, phi.geom, "warp_volume_with_gradient");
  WarpWithGradient out{Volume(v.geom), std::vector<Vec3>(v.data.size())};
  parallel_for(v.data.size(), [&](std::size_t i) {
    const Vec3 p = v.geom.center(i) + phi.data[i];
    const auto s = TrilinearStencil::at(v.geom, p, true);
    double value = 0.0;
    Vec3 grad = Vec3::Zero();
    for (int c = 0; c < 8; ++c) {
      value += s.weight[c] * v.data[s.index[c]];
      grad += s.dweight[c] * v.data[s.index[c]];
    }
    out.warped.data[i] = value;
    out.gradient[i] = grad;
  });
  if (v.mask) out.warped.mask = warp_volume(v, phi).mask;
  return out;
}

std::vector<Mat3> jacobian_central(const DispField& phi) {
  const auto& g = phi.geom;
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] < 3) throw Error(ErrorKind::InvalidArgument, "jacobian_central: need at least 3 voxels per axis");
  }
  std::vector<Mat3> out(g.size());
  parallel_for(g.size(), [&](std::size_t idx) {
    const auto c = g.ijk(idx);
    Mat3 J;
    for (int a = 0; a < 3; ++a) {
      auto lo_c = c;
      auto hi_c = c;
      if (c[a] > 0) --lo_c[a];
      if (c[a] < g.dims[a] - 1) ++hi_c[a];
      const std::size_t il = g.index(lo_c[0], lo_c[1], lo_c[2]);
      const std::size_t ih = g.index(hi_c[0], hi_c[1], hi_c[2]);
      const double dist = (hi_c[a] - lo_c[a]) * g.spacing(a);
      const Vec3 pl = g.center(lo_c[0], lo_c[1], lo_c[2]) + phi.data[il];
      const Vec3 ph = g.center(hi_c[0], hi_c[1], hi_c[2]) + phi.data[ih];
      J.col(a) = (ph - pl) / dist;
    }
    out[idx] = J;
  });
  return out;
}

DispField compose_displacements(const DispField& a, const DispField& b) {
  require_same_geometry(a.geom, b.geom, "compose_displacements");
  DispField out(b.geom);
  parallel_for(out.data.size(), [&](std::size_t i) {
    const Vec3 y = b.geom.center(i) + b.data[i];
    out.data[i] = b.data[i] + sample_trilinear(a, y);
  });
  return out;
}

Vec3 to_voxels(const GridGeometry& g, const Vec3& d) {
  return {d[0] / g.spacing(0), d[1] / g.spacing(1), d[2] / g.spacing(2)};
}

}  // namespace groupflow
