#pragma once

// Registration driver: theta -> network -> post-scale -> velocity field ->
// scaling and squaring -> deformation (and inverse) -> loss, optimized with
// full-batch ADAM.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "groupflow/flow.hpp"
#include "groupflow/loss.hpp"
#include "groupflow/siren.hpp"

namespace groupflow {

struct RegistrationConfig {
  GroupKind group = GroupKind::SE3;
  SirenConfig siren;  // out_dim is forced to the algebra dimension
  FlowConfig flow;
  LossConfig loss;
  PostScale post_scale;
  double lr = 1e-3;
  int iterations = 120;
  std::optional<Dims> eval_grid;  // velocity grid; image grid when empty
  std::uint64_t seed = 0;

  void validate() const;
  /// Copy with group-dependent fields made consistent (siren.out_dim,
  /// flow.group, siren.seed).
  RegistrationConfig normalized() const;
};

enum class Experiment { Fitting, Synthetic, InterPatient, DeskFitting, DeskSynthetic };

std::string_view to_string(Experiment e);
Experiment parse_experiment(std::string_view name);

/// Hyperparameter bundles. The full-scale presets carry the tuned values
/// (w0, lr, sf) per group; the desk presets are small-network, coarse-grid
/// variants sharing one set of hyperparameters across groups.
RegistrationConfig preset(Experiment e, GroupKind group);

/// Network evaluated at the centers of geom, post-scaled.
LieCoeffField make_velocity_field(const SirenParams& params, const PostScale& ps,
                                  const GridGeometry& geom, GroupKind group);

/// Band-limited random velocity field: a freshly initialized network whose
/// output layer is redrawn, then rescaled so the largest translational
/// coefficient is `amplitude` and the largest rotational (and scale)
/// coefficient is `amplitude` radians.
LieCoeffField random_velocity_field(const GridGeometry& geom, GroupKind group, double amplitude,
                                    std::uint64_t seed);

/// Loss on the deformation(s): returns value and gradients with respect to
/// phi (and phi_inv when the chain is bidirectional).
struct DeformationLoss {
  double value = 0.0;
  LossBreakdown forward;
  LossBreakdown backward;
  std::vector<Vec3> grad_phi;
  std::vector<Vec3> grad_phi_inv;
};
using DeformationLossFn = std::function<DeformationLoss(const DispField& phi, const DispField* phi_inv)>;

struct ChainEvaluation {
  DeformationLoss loss;
  Eigen::VectorXd grad;  // with respect to params.theta
  LieCoeffField velocity;
  LieCoeffField log_forward;
  LieCoeffField log_backward;  // empty unless bidirectional
  DispField phi;
  DispField phi_inv;  // empty unless bidirectional
};

/// One full forward and reverse pass of the chain on image grid `image`.
ChainEvaluation evaluate_chain(const SirenParams& params, const RegistrationConfig& cfg,
                               const GridGeometry& image, bool bidirectional,
                               const DeformationLossFn& loss, bool with_gradient = true);

struct IterationRecord {
  int iteration = 0;
  LossBreakdown forward;
  LossBreakdown backward;
  double total = 0.0;
};

struct RegistrationResult {
  DispField phi;
  DispField phi_inv;  // always computed from the negated velocity
  LieCoeffField velocity;
  SirenParams params;
  LossBreakdown final_forward;
  LossBreakdown final_backward;
  double final_loss = 0.0;
  std::vector<IterationRecord> trace;  // iterates 0..iterations
  double fb_error = 0.0;               // voxels, image grid
  double bf_error = 0.0;
  double negdet_fraction = 0.0;
  double wall_seconds = 0.0;
};

using ProgressFn = std::function<void(const IterationRecord&)>;

/// Registers moving image I2 to fixed image I1 (I2 o phi ~ I1).
RegistrationResult register_images(const Volume& I1, const Volume& I2, const RegistrationConfig& cfg,
                                   const ProgressFn& progress = nullptr);

/// Fits the chain to a target displacement with the mean squared voxel
/// error as loss (masked when mask is given).
RegistrationResult fit_deformation(const DispField& target, const RegistrationConfig& cfg,
                                   const std::vector<std::uint8_t>* mask = nullptr,
                                   const ProgressFn& progress = nullptr);

/// Generic driver used by both entry points.
RegistrationResult optimize(const GridGeometry& image, const RegistrationConfig& cfg, bool bidirectional,
                            const DeformationLossFn& loss, const ProgressFn& progress = nullptr);

}  // namespace groupflow
