#pragma once

// Regular-grid containers and resampling.
//
// Voxel (i, j, k) of a grid with dims (nx, ny, nz) sits at the center of its
// cell inside the normalized box [lo, hi]; x runs fastest in linear indices.
// Sampling outside the box clamps to the boundary (constant extension).

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "groupflow/lie.hpp"

namespace groupflow {

using Dims = std::array<int, 3>;

struct GridGeometry {
  Dims dims{1, 1, 1};
  Vec3 lo{-1.0, -1.0, -1.0};
  Vec3 hi{1.0, 1.0, 1.0};

  /// Isotropic voxels; the longest edge spans [-1, 1], others are centered.
  static GridGeometry fit_unit_cube(const Dims& dims);
  /// Same box, different sampling (used for coarser velocity grids).
  GridGeometry resampled(const Dims& new_dims) const;

  std::size_t size() const {
    return std::size_t(dims[0]) * std::size_t(dims[1]) * std::size_t(dims[2]);
  }
  std::size_t index(int i, int j, int k) const {
    return std::size_t(i) + std::size_t(dims[0]) * (std::size_t(j) + std::size_t(dims[1]) * std::size_t(k));
  }
  std::array<int, 3> ijk(std::size_t idx) const;
  double spacing(int axis) const { return (hi[axis] - lo[axis]) / dims[axis]; }
  Vec3 spacing() const { return {spacing(0), spacing(1), spacing(2)}; }
  Vec3 center(int i, int j, int k) const;
  Vec3 center(std::size_t idx) const;
  /// Continuous index coordinates: voxel centers map to integers.
  Vec3 to_index(const Vec3& p) const;
  double volume() const { return (hi - lo).prod(); }

  bool operator==(const GridGeometry& o) const;
  bool operator!=(const GridGeometry& o) const { return !(*this == o); }
};

void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what);

struct Volume {
  GridGeometry geom;
  std::vector<double> data;
  std::optional<std::vector<std::uint8_t>> mask;

  Volume() = default;
  explicit Volume(const GridGeometry& g, double fill = 0.0) : geom(g), data(g.size(), fill) {}
};

struct LabelVolume {
  GridGeometry geom;
  std::vector<std::uint16_t> labels;

  LabelVolume() = default;
  explicit LabelVolume(const GridGeometry& g) : geom(g), labels(g.size(), 0) {}
};

/// Per-voxel algebra coordinates of a stationary velocity field at the identity.
struct LieCoeffField {
  GridGeometry geom;
  GroupKind group = GroupKind::T3;
  std::vector<double> data;  // size() * channels(), voxel-major

  LieCoeffField() = default;
  LieCoeffField(const GridGeometry& g, GroupKind kind)
      : geom(g), group(kind), data(g.size() * std::size_t(algebra_dim(kind)), 0.0) {}

  int channels() const { return algebra_dim(group); }
  double* at(std::size_t voxel) { return data.data() + voxel * std::size_t(channels()); }
  const double* at(std::size_t voxel) const { return data.data() + voxel * std::size_t(channels()); }
};

struct MatrixField {
  GridGeometry geom;
  GroupKind group = GroupKind::T3;
  std::vector<Mat4> data;

  MatrixField() = default;
  MatrixField(const GridGeometry& g, GroupKind kind)
      : geom(g), group(kind), data(g.size(), Mat4::Identity()) {}

  /// Index of the first voxel violating the group invariants, if any.
  std::optional<std::size_t> first_invalid(double tol = 1e-9) const;
};

/// Displacement phi(x) - x in normalized coordinates.
struct DispField {
  GridGeometry geom;
  std::vector<Vec3> data;

  DispField() = default;
  explicit DispField(const GridGeometry& g) : geom(g), data(g.size(), Vec3::Zero()) {}
};

/// Eight-corner trilinear stencil at a (possibly out-of-box) point. Weight
/// derivatives are with respect to the normalized coordinates of the point
/// and vanish along clamped axes.
struct TrilinearStencil {
  std::array<std::size_t, 8> index;
  std::array<double, 8> weight;
  std::array<Vec3, 8> dweight;

  static TrilinearStencil at(const GridGeometry& g, const Vec3& p, bool with_derivative = false);
};

double sample_trilinear(const Volume& v, const Vec3& p);
void sample_trilinear(const LieCoeffField& f, const Vec3& p, double* out);
Vec3 sample_trilinear(const DispField& f, const Vec3& p);

/// Lie-algebra interpolation of a matrix field: log of the 8 neighbours,
/// trilinear blend, exp.
Mat4 interp_matrix_field(const MatrixField& mf, const Vec3& p);

LieCoeffField log_field(const MatrixField& mf);
MatrixField exp_field(const LieCoeffField& f);

/// phi(x) = P M(x) (x, 1)^T, stored as phi(x) - x.
DispField apply_matrix_field(const MatrixField& mf);

/// out(x) = v(x + phi(x)); the mask is resampled nearest-neighbour.
Volume warp_volume(const Volume& v, const DispField& phi);
LabelVolume warp_labels(const LabelVolume& v, const DispField& phi);

/// Warped intensities plus the spatial gradient of the interpolant at every
/// sample point (normalized units), for back-propagation into phi.
struct WarpWithGradient {
  Volume warped;
  std::vector<Vec3> gradient;
};
WarpWithGradient warp_volume_with_gradient(const Volume& v, const DispField& phi);

/// D(x + phi(x)) per voxel: central differences inside, one-sided at faces.
std::vector<Mat3> jacobian_central(const DispField& phi);

/// (a o b)(x) - x = b(x) + a(x + b(x)) with a resampled trilinearly.
DispField compose_displacements(const DispField& a, const DispField& b);

/// Displacement converted to voxel units along each axis.
Vec3 to_voxels(const GridGeometry& g, const Vec3& d);

}  // namespace groupflow
