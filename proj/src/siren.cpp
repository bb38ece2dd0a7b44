#include "groupflow/siren.hpp"

#include <cmath>
#include <random>

namespace groupflow {

void SirenConfig::validate() const {
  if (in_dim < 1 || hidden_dim < 1 || n_blocks < 0 || out_dim < 1) {
    throw Error(ErrorKind::InvalidArgument, "siren: dimensions must be positive");
  }
  if (!std::isfinite(w0)) throw Error(ErrorKind::InvalidArgument, "siren: w0 must be finite");
}

void PostScale::validate() const {
  if (!(translational >= 0.0) || !(rotational >= 0.0) || !(scale_channel >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "post-scale factors must be non-negative");
  }
}

std::vector<LayerView> layer_layout(const SirenConfig& cfg) {
  std::vector<LayerView> layers;
  Eigen::Index offset = 0;
  auto add = [&](int in, int out) {
    LayerView v{offset, offset + Eigen::Index(in) * out, in, out};
    offset = v.bias_offset + out;
    layers.push_back(v);
  };
  add(cfg.in_dim, cfg.hidden_dim);
  for (int b = 0; b < cfg.n_blocks; ++b) add(cfg.hidden_dim, cfg.hidden_dim);
  add(cfg.hidden_dim, cfg.out_dim);
  return layers;
}

Eigen::Index parameter_count(const SirenConfig& cfg) {
  const auto layers = layer_layout(cfg);
  return layers.back().bias_offset + layers.back().out;
}

namespace {

using ConstMatMap = Eigen::Map<const Eigen::MatrixXd>;
using ConstVecMap = Eigen::Map<const Eigen::VectorXd>;

ConstMatMap weight(const SirenParams& p, const LayerView& l) {
  return ConstMatMap(p.theta.data() + l.weight_offset, l.out, l.in);
}

ConstVecMap bias(const SirenParams& p, const LayerView& l) {
  return ConstVecMap(p.theta.data() + l.bias_offset, l.out);
}

}  // namespace

SirenParams init_siren(const SirenConfig& cfg) {
  cfg.validate();
  SirenParams p;
  p.config = cfg;
  p.theta = Eigen::VectorXd::Zero(parameter_count(cfg));
  p.adam_m = Eigen::VectorXd::Zero(p.theta.size());
  p.adam_v = Eigen::VectorXd::Zero(p.theta.size());

  std::mt19937_64 rng(cfg.seed);
  auto fill = [&](Eigen::Index offset, Eigen::Index count, double bound) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index i = 0; i < count; ++i) p.theta[offset + i] = dist(rng);
  };
  const auto layers = layer_layout(cfg);
  for (std::size_t li = 0; li < layers.size(); ++li) {
    const auto& l = layers[li];
    const Eigen::Index nw = Eigen::Index(l.in) * l.out;
    if (li + 1 == layers.size()) {
      fill(l.weight_offset, nw, 1e-4);
      fill(l.bias_offset, l.out, 1e-4);
    } else if (li == 0) {
      fill(l.weight_offset, nw, 1.0 / l.in);
      fill(l.bias_offset, l.out, 1.0 / std::sqrt(double(l.in)));
    } else {
      fill(l.weight_offset, nw, std::sqrt(6.0 / l.in));
      fill(l.bias_offset, l.out, 1.0 / std::sqrt(double(l.in)));
    }
  }
  return p;
}

Eigen::MatrixXd siren_forward(const SirenParams& params, const Eigen::MatrixXd& coords,
                              SirenCache* cache) {
  const auto& cfg = params.config;
  if (coords.rows() != cfg.in_dim) {
    throw Error(ErrorKind::DimensionMismatch, "siren_forward: coordinate dimension mismatch");
  }
  const auto layers = layer_layout(cfg);
  if (cache) {
    cache->input = coords;
    cache->pre.clear();
    cache->hidden.clear();
  }
  Eigen::MatrixXd z = (cfg.w0 * (weight(params, layers[0]) * coords)).colwise() + bias(params, layers[0]);
  Eigen::MatrixXd first = z.array().sin().matrix();
  if (cache) cache->pre.push_back(std::move(z));
  Eigen::MatrixXd h = first;
  for (int b = 0; b < cfg.n_blocks; ++b) {
    const auto& l = layers[std::size_t(b) + 1];
    Eigen::MatrixXd zb = (weight(params, l) * h).colwise() + bias(params, l);
    Eigen::MatrixXd out = zb.array().sin().matrix();
    if (cfg.residual == ResidualMode::PerBlock) out += h;
    if (cache) {
      cache->hidden.push_back(std::move(h));
      cache->pre.push_back(std::move(zb));
    }
    h = std::move(out);
  }
  if (cfg.residual == ResidualMode::FirstToLast) h += first;
  const auto& last = layers.back();
  Eigen::MatrixXd y = (weight(params, last) * h).colwise() + bias(params, last);
  if (cache) cache->hidden.push_back(std::move(h));
  return y;
}

Eigen::VectorXd siren_backward(const SirenParams& params, const SirenCache& cache,
                               const Eigen::MatrixXd& upstream) {
  const auto& cfg = params.config;
  const auto layers = layer_layout(cfg);
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.theta.size());
  auto gw = [&](const LayerView& l) {
    return Eigen::Map<Eigen::MatrixXd>(grad.data() + l.weight_offset, l.out, l.in);
  };
  auto gb = [&](const LayerView& l) { return Eigen::Map<Eigen::VectorXd>(grad.data() + l.bias_offset, l.out); };

  const auto& last = layers.back();
  gw(last) = upstream * cache.hidden.back().transpose();
  gb(last) = upstream.rowwise().sum();
  Eigen::MatrixXd gh = weight(params, last).transpose() * upstream;

  // gradient reaching the first-layer output
  Eigen::MatrixXd g_first;
  if (cfg.residual == ResidualMode::FirstToLast) g_first = gh;
  for (int b = cfg.n_blocks - 1; b >= 0; --b) {
    const auto& l = layers[std::size_t(b) + 1];
    const Eigen::MatrixXd& zb = cache.pre[std::size_t(b) + 1];
    const Eigen::MatrixXd& hin = cache.hidden[std::size_t(b)];
    const Eigen::MatrixXd gz = (gh.array() * zb.array().cos()).matrix();
    gw(l) = gz * hin.transpose();
    gb(l) = gz.rowwise().sum();
    Eigen::MatrixXd gin = weight(params, l).transpose() * gz;
    if (cfg.residual == ResidualMode::PerBlock) gin += gh;
    gh = std::move(gin);
  }
  if (cfg.residual == ResidualMode::FirstToLast) {
    gh += g_first;
  }
  const auto& l0 = layers.front();
  const Eigen::MatrixXd gz0 = (gh.array() * cache.pre.front().array().cos()).matrix();
  gw(l0) = cfg.w0 * (gz0 * cache.input.transpose());
  gb(l0) = gz0.rowwise().sum();
  return grad;
}

Eigen::MatrixXd apply_post_scale(const Eigen::MatrixXd& raw, const PostScale& ps) {
  Eigen::MatrixXd out = raw;
  for (Eigen::Index r = 0; r < raw.rows(); ++r) out.row(r) *= ps.factor(int(r));
  return out;
}

void adam_step(SirenParams& params, const Eigen::VectorXd& grad, const AdamOptions& opt) {
  if (grad.size() != params.theta.size()) {
    throw Error(ErrorKind::DimensionMismatch, "adam_step: gradient size mismatch");
  }
  if (!grad.allFinite()) throw Error(ErrorKind::NonFinite, "adam_step: non-finite gradient");
  params.step += 1;
  const double t = double(params.step);
  params.adam_m = opt.beta1 * params.adam_m + (1.0 - opt.beta1) * grad;
  params.adam_v = opt.beta2 * params.adam_v + (1.0 - opt.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(opt.beta1, t);
  const double c2 = 1.0 - std::pow(opt.beta2, t);
  params.theta.array() -=
      opt.lr * (params.adam_m.array() / c1) / ((params.adam_v.array() / c2).sqrt() + opt.eps);
}

}  // namespace groupflow
