#pragma once

// Sinusoidal coordinate network producing algebra coordinates, its
// reverse-mode gradient, post-scaling and the ADAM optimizer.
//
// Layout: h1 = sin(w0 W1 x + b1), then n_blocks residual blocks
// h <- sin(W h + b) + h, then out = Wout h + bout.

#include <cstdint>
#include <vector>

#include <Eigen/Core>

#include "groupflow/lie.hpp"

namespace groupflow {

enum class ResidualMode {
  PerBlock,     // each block adds its input to its output (default)
  FirstToLast,  // plain sine blocks; first-layer output added before the last layer
};

struct SirenConfig {
  int in_dim = 3;
  int hidden_dim = 512;
  int n_blocks = 4;
  int out_dim = 6;
  double w0 = 1.0;
  std::uint64_t seed = 0;
  ResidualMode residual = ResidualMode::PerBlock;

  void validate() const;
};

struct SirenParams {
  SirenConfig config;
  Eigen::VectorXd theta;   // all weights and biases, see LayerView
  Eigen::VectorXd adam_m;  // first moment, same shape as theta
  Eigen::VectorXd adam_v;  // second moment
  std::uint64_t step = 0;

  std::size_t size() const { return std::size_t(theta.size()); }
};

/// Offsets of one affine layer inside the flat parameter vector. Weights are
/// stored column-major with shape (out, in).
struct LayerView {
  Eigen::Index weight_offset;
  Eigen::Index bias_offset;
  int in;
  int out;
};

/// first layer, blocks..., output layer
std::vector<LayerView> layer_layout(const SirenConfig& cfg);
Eigen::Index parameter_count(const SirenConfig& cfg);

SirenParams init_siren(const SirenConfig& cfg);

/// Activations kept for the backward pass. Columns are samples.
struct SirenCache {
  Eigen::MatrixXd input;                // in x N
  std::vector<Eigen::MatrixXd> pre;     // pre-activations of the sine layers
  std::vector<Eigen::MatrixXd> hidden;  // input of each block and of the output layer
};

/// coords: 3 x N. Returns out_dim x N.
Eigen::MatrixXd siren_forward(const SirenParams& params, const Eigen::MatrixXd& coords,
                              SirenCache* cache = nullptr);

/// Gradient of sum <upstream, output> with respect to theta.
Eigen::VectorXd siren_backward(const SirenParams& params, const SirenCache& cache,
                               const Eigen::MatrixXd& upstream);

struct PostScale {
  double translational = 1.0;
  double rotational = 1.0;
  double scale_channel = 1.0;

  void validate() const;
  double factor(int channel) const {
    return channel < 3 ? translational : (channel < 6 ? rotational : scale_channel);
  }
};

/// Channel-wise scaling following the algebra coordinate layout. Also the
/// adjoint (the map is diagonal).
Eigen::MatrixXd apply_post_scale(const Eigen::MatrixXd& raw, const PostScale& ps);

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Bias-corrected ADAM update of params.theta; throws NonFinite on a
/// non-finite gradient.
void adam_step(SirenParams& params, const Eigen::VectorXd& grad, const AdamOptions& opt);

}  // namespace groupflow
