#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "groupflow/field.hpp"

namespace groupflow {

/// sqrt of the mean squared displacement difference over the mask, in voxel
/// units. A null mask selects every voxel.
double masked_rmse(const DispField& a, const DispField& b, const std::vector<std::uint8_t>* mask = nullptr);

struct DiceResult {
  std::map<int, double> per_label;  // labels present in at least one input
  double mean = 0.0;
};

/// Per-label overlap 2|A n B| / (|A| + |B|); label 0 is background.
DiceResult dice(const LabelVolume& A, const LabelVolume& B);

/// Mean SSIM over all 7^3 windows fully inside the volume (smaller windows
/// on thin volumes). Both inputs are rescaled jointly to [0, 1] first.
double ssim(const Volume& a, const Volume& b);

/// Fraction of tetrahedra (five per cell) whose determinant is <= threshold.
double negdet_fraction(const DispField& phi, double threshold = 0.0);

struct MetricsReport {
  std::optional<double> rmse_voxels;
  std::optional<DiceResult> dice_forward;
  std::optional<DiceResult> dice_backward;
  std::optional<double> ssim;
  std::optional<double> negdet_fraction;
  std::optional<double> fb_error;
  std::optional<double> bf_error;

  std::string to_json() const;
  static std::string csv_header();
  std::string csv_row(const std::string& name) const;
};

}  // namespace groupflow
