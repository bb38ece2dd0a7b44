#pragma once

// Synthetic ground-truth deformations: a global rigid motion plus random
// control-point perturbations, densified with a polyharmonic spline.

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

#include "groupflow/field.hpp"

namespace groupflow {

using Rng = std::mt19937_64;

struct SynthConfig {
  Dims control_grid{7, 7, 7};
  double max_angle = 0.7853981633974483;  // pi / 4
  double max_translation = 0.1;
  double max_perturbation = 0.05;
  double noise_sigma = 0.01;
  double rotation_scale = 1.0;
  double translation_scale = 1.0;
  double pad_fraction = 0.1;  // zero padding per side, fraction of each dim
  // Sweeps replace the random magnitudes (the random directions are kept).
  std::optional<double> fixed_angle;
  std::optional<double> fixed_translation;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RigidSample {
  Vec3 axis;
  double angle = 0.0;
  Vec3 translation;
  Mat4 matrix;
};

/// Draws axis, angle, translation direction and length. Always consumes the
/// same number of random numbers regardless of the scales.
RigidSample sample_rigid(const SynthConfig& cfg, Rng& rng);

/// Polyharmonic spline r^3 with a linear polynomial tail, one system for all
/// three displacement components.
class PolyharmonicSpline {
 public:
  PolyharmonicSpline(std::vector<Vec3> centers, const std::vector<Vec3>& values);
  Vec3 operator()(const Vec3& p) const;
  /// Largest |weight|, for checking reproduction of affine maps.
  double max_rbf_weight() const;

 private:
  std::vector<Vec3> centers_;
  Eigen::MatrixXd weights_;  // (n + 4) x 3
};

struct GroundTruth {
  DispField phi;
  Mat4 rigid = Mat4::Identity();
  std::vector<Vec3> control_points;
  std::vector<Vec3> control_displacements;
};

std::vector<Vec3> control_points(const SynthConfig& cfg, const GridGeometry& geom);
GroundTruth generate_field(const SynthConfig& cfg, const GridGeometry& geom, Rng& rng);

/// Zero padding by round(pad_fraction * dim) voxels per side; the mask (if
/// any) is padded with zeros.
Volume pad_volume(const Volume& v, double pad_fraction);
LabelVolume pad_labels(const LabelVolume& v, double pad_fraction);

/// fixed = template (padded reference warped by phi_syn plus noise),
/// moving = padded reference. Registering moving to fixed recovers phi_syn.
struct SyntheticPair {
  Volume fixed;
  Volume moving;
  std::optional<LabelVolume> fixed_labels;
  std::optional<LabelVolume> moving_labels;
  GroundTruth truth;
  std::vector<std::uint8_t> mask;  // foreground of the fixed image
};

SyntheticPair synthesize_pair(const Volume& reference, const SynthConfig& cfg, Rng& rng,
                              const LabelVolume* labels = nullptr);

enum class SweepKind { Rotation, Translation };

/// k pairs with magnitude s = i / (k - 1) (s = 0 for k = 1), all from the
/// same seed. Rotation: angle s * 90 degrees, no global translation.
/// Translation: length s * 10% of the domain width, no rotation.
std::vector<SyntheticPair> sweep_magnitudes(const Volume& reference, const SynthConfig& cfg, int k,
                                            SweepKind kind, const LabelVolume* labels = nullptr);
SynthConfig sweep_config(const SynthConfig& cfg, int i, int k, SweepKind kind);

/// Head-like test volume: smooth ellipsoidal tissue with labelled internal
/// structures on a zero background; mask marks the foreground.
struct Phantom {
  Volume image;
  LabelVolume labels;
};
Phantom make_phantom(const Dims& dims, std::uint64_t seed = 0);

}  // namespace groupflow
