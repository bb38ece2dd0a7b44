#pragma once

// Integration of the matrix-group flow dM/dt = hat(nu(P M xbar)) M, M(0) = I.

#include <vector>

#include "groupflow/field.hpp"

namespace groupflow {

struct FlowConfig {
  int n_squarings = 7;
  GroupKind group = GroupKind::SE3;

  void validate() const;
};

/// Algebra fields nu_0 .. nu_n of the generalized scaling-and-squaring
/// iteration. nu_n is the log of the time-1 matrix field.
struct FlowTape {
  std::vector<LieCoeffField> stages;

  int n_squarings() const { return int(stages.size()) - 1; }
  const LieCoeffField& final_log() const { return stages.back(); }
};

/// Generalized scaling and squaring on algebra coordinates:
///   nu_0 = 2^-n nu,
///   nu_{j+1}(x) = log(exp(Int(nu_j, P exp(nu_j(x)) xbar)) exp(nu_j(x))).
/// With keep_stages = false only nu_n is retained.
FlowTape integrate_velocity(const LieCoeffField& v, int n_squarings, bool keep_stages = true);

/// Reverse pass: gradient with respect to v given the gradient with respect
/// to the final log field. Requires a tape recorded with keep_stages.
LieCoeffField integrate_velocity_backward(const FlowTape& tape, const LieCoeffField& grad_final);

MatrixField scaling_and_squaring(const LieCoeffField& v, const FlowConfig& cfg);

/// Classical SVF scaling and squaring on displacement vectors (T3 only).
DispField classical_scaling_and_squaring(const LieCoeffField& v, const FlowConfig& cfg);

/// Reference integrators on the continuous (trilinearly interpolated) field.
MatrixField exponential_scheme(const LieCoeffField& v, int steps, double T);
/// Forward Euler in the embedding space; results are not projected to the group.
MatrixField euler_scheme(const LieCoeffField& v, int steps, double T);

LieCoeffField invert_velocity(const LieCoeffField& v);

/// phi(x) - x with phi(x) = P exp(Int(log_final, x)) xbar, evaluated at the
/// voxel centers of target (which may be finer than the velocity grid).
DispField displacement_from_log(const LieCoeffField& log_final, const GridGeometry& target);
LieCoeffField displacement_from_log_backward(const LieCoeffField& log_final,
                                             const GridGeometry& target,
                                             const std::vector<Vec3>& grad_disp);

/// (phi_a o phi_b)(x) - x where phi_a is given by its final log field and is
/// evaluated by Lie-algebra interpolation at the points x + b(x).
DispField compose_with_log_field(const LieCoeffField& log_a, const DispField& b);

struct InverseConsistency {
  double forward_backward = 0.0;  // mean |phi_v o phi_-v - id|, voxels
  double backward_forward = 0.0;  // mean |phi_-v o phi_v - id|, voxels
};
InverseConsistency forward_backward_error(const LieCoeffField& v, const FlowConfig& cfg);

/// max_x || M(x, 2T) - M(P M(x,T) xbar, T) M(x,T) ||_F with every factor from
/// the exponential scheme using `steps` steps per integration. The outer
/// factor is integrated from the displaced point itself.
double decomposition_residual(const LieCoeffField& v, double T, int steps);

}  // namespace groupflow
