#pragma once

// Similarity and regularization terms with exact gradients with respect to
// the displacement field, and the (bidirectional) registration objective.

#include <array>
#include <vector>

#include "groupflow/field.hpp"

namespace groupflow {

struct LossConfig {
  double ncc_eps = 1e-5;
  double fold_eps = 0.01;
  double fold_weight = 0.0;
  double grad_weight = 0.0;
  double hess_weight = 0.0;
  bool bidirectional = false;

  void validate() const;
};

struct NccResult {
  double value = 0.0;
  std::vector<double> grad;  // d value / d T per voxel
};

/// 1 - <T - mean T, R - mean R> / sqrt(|T - mean T|^2 |R - mean R|^2 + eps)
/// with voxel means. When mask is given only voxels with mask != 0 count.
NccResult ncc_loss(const Volume& R, const Volume& T, double eps,
                   const std::vector<std::uint8_t>* mask = nullptr);

struct FieldLoss {
  double value = 0.0;
  std::vector<Vec3> grad;  // d value / d displacement per voxel
};

/// Jacobian determinants of the five tetrahedra of every cell, normalized so
/// that the undeformed cell gives 1 for each. Cells are ordered like voxels of
/// a (nx-1, ny-1, nz-1) grid, five consecutive entries per cell; the inner
/// tetrahedron comes first.
std::vector<double> tetra_determinants(const DispField& phi);

/// Per-cell determinant: volume-weighted average of its tetrahedra.
std::vector<double> cell_determinants(const DispField& phi);

/// |box| * mean over cells of max(eps - det, 0).
FieldLoss folding_penalty(const DispField& phi, double eps);
/// |box| * mean over cells of the squared forward differences along edges.
FieldLoss gradient_reg(const DispField& phi);
/// |box| * mean over voxels of the squared Frobenius norm of the Hessian of
/// every displacement component.
FieldLoss hessian_reg(const DispField& phi);

struct LossBreakdown {
  double similarity = 0.0;
  double folding = 0.0;
  double gradient = 0.0;
  double hessian = 0.0;
  double total = 0.0;
};

/// One direction: J(fixed, moving o phi) + weighted regularizers of phi.
struct DirectionalLoss {
  LossBreakdown parts;
  std::vector<Vec3> grad;
};
DirectionalLoss directional_loss(const Volume& fixed, const Volume& moving, const DispField& phi,
                                 const LossConfig& cfg);

struct ObjectiveResult {
  double value = 0.0;
  LossBreakdown forward;
  LossBreakdown backward;  // zero unless bidirectional
  std::vector<Vec3> grad_phi;
  std::vector<Vec3> grad_phi_inv;  // empty unless bidirectional
};

/// Unidirectional: L(phi; I1, I2). Bidirectional: (L(phi; I1, I2) +
/// L(phi_inv; I2, I1)) / 2, which requires phi_inv.
ObjectiveResult objective(const Volume& I1, const Volume& I2, const DispField& phi,
                          const DispField* phi_inv, const LossConfig& cfg);

/// Mean squared displacement difference in voxel units over the mask (all
/// voxels when mask is null); used for fitting deformations directly.
FieldLoss displacement_mse(const DispField& phi, const DispField& target,
                           const std::vector<std::uint8_t>* mask = nullptr);

}  // namespace groupflow
