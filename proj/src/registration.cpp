#include "groupflow/registration.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <string>

#include "groupflow/metrics.hpp"

namespace groupflow {

void RegistrationConfig::validate() const {
  if (iterations < 1) throw Error(ErrorKind::InvalidArgument, "iterations must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidArgument, "learning rate must be positive");
  siren.validate();
  flow.validate();
  loss.validate();
  post_scale.validate();
  if (eval_grid) {
    for (int d : *eval_grid) {
      if (d < 2) throw Error(ErrorKind::InvalidArgument, "velocity grid needs at least 2 voxels per axis");
    }
  }
}

RegistrationConfig RegistrationConfig::normalized() const {
  RegistrationConfig c = *this;
  c.siren.out_dim = algebra_dim(group);
  c.siren.in_dim = 3;
  c.siren.seed = seed;
  c.flow.group = group;
  return c;
}

std::string_view to_string(Experiment e) {
  switch (e) {
    case Experiment::Fitting: return "fitting";
    case Experiment::Synthetic: return "synthetic";
    case Experiment::InterPatient: return "inter-patient";
    case Experiment::DeskFitting: return "desk-fitting";
    case Experiment::DeskSynthetic: return "desk-synthetic";
  }
  return "?";
}

Experiment parse_experiment(std::string_view name) {
  for (Experiment e : {Experiment::Fitting, Experiment::Synthetic, Experiment::InterPatient,
                       Experiment::DeskFitting, Experiment::DeskSynthetic}) {
    if (name == to_string(e)) return e;
  }
  throw Error(ErrorKind::InvalidArgument, "unknown preset '" + std::string(name) + "'");
}

namespace {

struct Tuned {
  double w0;
  double lr;
  double sf;
};

Tuned tuned(Experiment e, GroupKind g) {
  const int gi = g == GroupKind::T3 ? 0 : (g == GroupKind::SE3 ? 1 : 2);
  static const Tuned fitting[3] = {{4.85, 0.017, 0.009}, {4.12, 0.007, 0.006}, {4.89, 0.009, 0.017}};
  static const Tuned synthetic[3] = {{1.1e-4, 3.8e-5, 0.053}, {2.8e-3, 0.001, 0.058}, {2.8e-3, 0.001, 0.058}};
  static const Tuned inter[3] = {{15.18, 0.004, 0.006}, {13.11, 0.005, 0.002}, {13.92, 0.008, 0.018}};
  switch (e) {
    case Experiment::Fitting: return fitting[gi];
    case Experiment::Synthetic: return synthetic[gi];
    case Experiment::InterPatient: return inter[gi];
    default: break;
  }
  return {};
}

}  // namespace

RegistrationConfig preset(Experiment e, GroupKind group) {
  RegistrationConfig c;
  c.group = group;
  c.iterations = 120;
  c.flow.n_squarings = 7;
  switch (e) {
    case Experiment::Fitting:
    case Experiment::Synthetic:
    case Experiment::InterPatient: {
      const Tuned t = tuned(e, group);
      c.siren.w0 = t.w0;
      c.lr = t.lr;
      c.post_scale = {t.sf, t.sf, t.sf};
      if (e == Experiment::Synthetic) c.loss.hess_weight = 2e-5;
      if (e == Experiment::InterPatient) {
        c.loss.grad_weight = 0.1;
        c.loss.fold_weight = 200.0;
      }
      break;
    }
    case Experiment::DeskFitting:
    case Experiment::DeskSynthetic:
      c.siren.hidden_dim = 64;
      c.siren.w0 = 1.0;
      c.lr = 0.005;
      c.post_scale = {0.5, 0.5, 0.5};
      c.eval_grid = Dims{16, 16, 16};
      if (e == Experiment::DeskSynthetic) c.loss.hess_weight = 2e-5;
      break;
  }
  return c.normalized();
}

LieCoeffField make_velocity_field(const SirenParams& params, const PostScale& ps, const GridGeometry& geom,
                                  GroupKind group) {
  const int k = algebra_dim(group);
  if (params.config.out_dim != k) {
    throw Error(ErrorKind::DimensionMismatch, "network output size does not match the group");
  }
  Eigen::MatrixXd coords(3, Eigen::Index(geom.size()));
  for (std::size_t i = 0; i < geom.size(); ++i) coords.col(Eigen::Index(i)) = geom.center(i);
  const Eigen::MatrixXd scaled = apply_post_scale(siren_forward(params, coords), ps);
  LieCoeffField v(geom, group);
  Eigen::Map<Eigen::MatrixXd>(v.data.data(), k, Eigen::Index(geom.size())) = scaled;
  return v;
}

LieCoeffField random_velocity_field(const GridGeometry& geom, GroupKind group, double amplitude,
                                    std::uint64_t seed) {
  if (!(amplitude >= 0.0)) throw Error(ErrorKind::InvalidArgument, "amplitude must be non-negative");
  SirenConfig sc;
  sc.hidden_dim = 32;
  sc.n_blocks = 2;
  sc.w0 = 1.0;
  sc.out_dim = algebra_dim(group);
  sc.seed = seed;
  SirenParams params = init_siren(sc);
  const LayerView last = layer_layout(sc).back();
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (Eigen::Index i = last.weight_offset; i < last.weight_offset + Eigen::Index(last.in) * last.out; ++i) {
    params.theta[i] = u(rng);
  }
  LieCoeffField v = make_velocity_field(params, PostScale{1.0, 1.0, 1.0}, geom, group);
  const int k = v.channels();
  // Rescale channel groups independently: translation, rotation, scale.
  for (int lo : {0, 3, 6}) {
    if (lo >= k) break;
    const int hi = lo == 3 ? std::min(k, 6) : std::min(k, lo + 3);
    double peak = 0.0;
    for (std::size_t i = 0; i < geom.size(); ++i) {
      for (int c = lo; c < hi; ++c) peak = std::max(peak, std::abs(v.at(i)[c]));
    }
    if (peak == 0.0) continue;
    for (std::size_t i = 0; i < geom.size(); ++i) {
      for (int c = lo; c < hi; ++c) v.at(i)[c] *= amplitude / peak;
    }
  }
  return v;
}

ChainEvaluation evaluate_chain(const SirenParams& params, const RegistrationConfig& cfg_in,
                               const GridGeometry& image, bool bidirectional,
                               const DeformationLossFn& loss, bool with_gradient) {
  const RegistrationConfig cfg = cfg_in.normalized();
  const GroupKind group = cfg.group;
  const int k = algebra_dim(group);
  const GridGeometry vgeom = cfg.eval_grid ? image.resampled(*cfg.eval_grid) : image;
  const Eigen::Index n = Eigen::Index(vgeom.size());

  Eigen::MatrixXd coords(3, n);
  for (Eigen::Index i = 0; i < n; ++i) coords.col(i) = vgeom.center(std::size_t(i));
  SirenCache cache;
  const Eigen::MatrixXd raw = siren_forward(params, coords, with_gradient ? &cache : nullptr);

  ChainEvaluation out;
  out.velocity = LieCoeffField(vgeom, group);
  Eigen::Map<Eigen::MatrixXd>(out.velocity.data.data(), k, n) = apply_post_scale(raw, cfg.post_scale);
  for (double c : out.velocity.data) {
    if (!std::isfinite(c)) throw Error(ErrorKind::NonFinite, "velocity field contains non-finite values");
  }

  FlowTape fwd = integrate_velocity(out.velocity, cfg.flow.n_squarings, with_gradient);
  out.phi = displacement_from_log(fwd.final_log(), image);
  FlowTape bwd;
  if (bidirectional) {
    bwd = integrate_velocity(invert_velocity(out.velocity), cfg.flow.n_squarings, with_gradient);
    out.phi_inv = displacement_from_log(bwd.final_log(), image);
  }
  out.loss = loss(out.phi, bidirectional ? &out.phi_inv : nullptr);
  if (!std::isfinite(out.loss.value)) throw Error(ErrorKind::NonFinite, "loss is not finite");
  out.log_forward = fwd.final_log();
  if (bidirectional) out.log_backward = bwd.final_log();
  if (!with_gradient) return out;

  LieCoeffField grad_v = integrate_velocity_backward(
      fwd, displacement_from_log_backward(fwd.final_log(), image, out.loss.grad_phi));
  if (bidirectional) {
    const LieCoeffField g_inv = integrate_velocity_backward(
        bwd, displacement_from_log_backward(bwd.final_log(), image, out.loss.grad_phi_inv));
    for (std::size_t i = 0; i < grad_v.data.size(); ++i) grad_v.data[i] -= g_inv.data[i];
  }
  const Eigen::MatrixXd grad_raw =
      apply_post_scale(Eigen::Map<const Eigen::MatrixXd>(grad_v.data.data(), k, n), cfg.post_scale);
  out.grad = siren_backward(params, cache, grad_raw);
  return out;
}

RegistrationResult optimize(const GridGeometry& image, const RegistrationConfig& cfg_in, bool bidirectional,
                            const DeformationLossFn& loss, const ProgressFn& progress) {
  const RegistrationConfig cfg = cfg_in.normalized();
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  RegistrationResult result;
  result.params = init_siren(cfg.siren);
  const AdamOptions adam{cfg.lr};

  auto record = [&](int it, const ChainEvaluation& ev) {
    IterationRecord rec{it, ev.loss.forward, ev.loss.backward, ev.loss.value};
    result.trace.push_back(rec);
    if (progress) progress(rec);
  };
  auto guarded = [&](int it, bool with_gradient) {
    try {
      return evaluate_chain(result.params, cfg, image, bidirectional, loss, with_gradient);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " (iteration " + std::to_string(it) + ")");
    }
  };

  for (int it = 0; it < cfg.iterations; ++it) {
    const ChainEvaluation ev = guarded(it, true);
    record(it, ev);
    try {
      adam_step(result.params, ev.grad, adam);
    } catch (const Error& e) {
      throw Error(e.kind(), std::string(e.what()) + " (iteration " + std::to_string(it) + ")");
    }
  }
  ChainEvaluation last = guarded(cfg.iterations, false);
  record(cfg.iterations, last);

  result.velocity = last.velocity;
  result.final_forward = last.loss.forward;
  result.final_backward = last.loss.backward;
  result.final_loss = last.loss.value;
  result.phi = std::move(last.phi);
  LieCoeffField log_bwd = bidirectional
                              ? std::move(last.log_backward)
                              : integrate_velocity(invert_velocity(result.velocity), cfg.flow.n_squarings, false)
                                    .final_log();
  result.phi_inv = bidirectional ? std::move(last.phi_inv) : displacement_from_log(log_bwd, image);

  const DispField fb = compose_with_log_field(last.log_forward, result.phi_inv);
  const DispField bf = compose_with_log_field(log_bwd, result.phi);
  for (std::size_t i = 0; i < image.size(); ++i) {
    result.fb_error += to_voxels(image, fb.data[i]).norm();
    result.bf_error += to_voxels(image, bf.data[i]).norm();
  }
  result.fb_error /= double(image.size());
  result.bf_error /= double(image.size());
  bool has_cells = true;
  for (int d : image.dims) has_cells = has_cells && d >= 2;
  if (has_cells) result.negdet_fraction = negdet_fraction(result.phi);
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

RegistrationResult register_images(const Volume& I1, const Volume& I2, const RegistrationConfig& cfg,
                                   const ProgressFn& progress) {
  require_same_geometry(I1.geom, I2.geom, "register_images");
  for (const Volume* v : {&I1, &I2}) {
    for (double x : v->data) {
      if (!std::isfinite(x)) throw Error(ErrorKind::NonFinite, "input image contains non-finite intensities");
    }
  }
  const LossConfig lc = cfg.loss;
  DeformationLossFn fn = [&I1, &I2, lc](const DispField& phi, const DispField* phi_inv) {
    ObjectiveResult r = objective(I1, I2, phi, phi_inv, lc);
    DeformationLoss out;
    out.value = r.value;
    out.forward = r.forward;
    out.backward = r.backward;
    out.grad_phi = std::move(r.grad_phi);
    out.grad_phi_inv = std::move(r.grad_phi_inv);
    return out;
  };
  return optimize(I1.geom, cfg, cfg.loss.bidirectional, fn, progress);
}

RegistrationResult fit_deformation(const DispField& target, const RegistrationConfig& cfg,
                                   const std::vector<std::uint8_t>* mask, const ProgressFn& progress) {
  DeformationLossFn fn = [&target, mask](const DispField& phi, const DispField*) {
    FieldLoss l = displacement_mse(phi, target, mask);
    DeformationLoss out;
    out.value = l.value;
    out.forward.similarity = l.value;
    out.forward.total = l.value;
    out.grad_phi = std::move(l.grad);
    return out;
  };
  return optimize(target.geom, cfg, false, fn, progress);
}

}  // namespace groupflow
