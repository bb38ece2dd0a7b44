#include "groupflow/selftest.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "groupflow/loss.hpp"
#include "groupflow/registration.hpp"

namespace groupflow {

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(3);
  os << v;
  return os.str();
}

SuiteResult exp_log_suite(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst_exp = 0.0;
  double worst_log = 0.0;
  for (GroupKind kind : {GroupKind::T3, GroupKind::SE3, GroupKind::SIM3}) {
    const auto& desc = GroupDescriptor::get(kind);
    const int k = algebra_dim(kind);
    for (int t = 0; t < 500; ++t) {
      AlgebraCoeffs a(k);
      for (int i = 0; i < k; ++i) a[i] = u(rng);
      if (k >= 6) {
        Vec3 w(a[3], a[4], a[5]);
        if (w.norm() > 0.0) w *= std::abs(u(rng)) * (M_PI - 0.1) / w.norm();
        a.segment<3>(3) = w;
      }
      const Mat4 E = exp_group(desc, a);
      const Mat4 S = exp_series_oracle(hat(desc, a), 30);
      worst_exp = std::max(worst_exp, (E - S).norm() / (1.0 + E.norm()));
      worst_log = std::max(worst_log, (log_group(desc, E) - a).norm());
    }
  }
  return {"exp/log oracle", worst_exp < 1e-10 && worst_log < 1e-9,
          "max exp error " + fmt(worst_exp) + ", max log error " + fmt(worst_log)};
}

Volume smooth_volume(const GridGeometry& g, double phase) {
  Volume v(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.center(i);
    v.data[i] = std::sin(2.0 * x[0] + phase) * std::cos(1.5 * x[1]) + 0.5 * std::sin(2.5 * x[2] - phase) + 0.2 * x[0] * x[1];
  }
  return v;
}

SuiteResult gradient_suite(std::mt19937_64& rng) {
  const GridGeometry image = GridGeometry::fit_unit_cube({7, 7, 7});
  const Volume I1 = smooth_volume(image, 0.0);
  const Volume I2 = smooth_volume(image, 0.4);
  double worst = 0.0;
  for (GroupKind kind : {GroupKind::T3, GroupKind::SE3, GroupKind::SIM3}) {
    RegistrationConfig cfg;
    cfg.group = kind;
    cfg.siren.hidden_dim = 8;
    cfg.siren.n_blocks = 2;
    cfg.siren.w0 = 1.0;
    cfg.post_scale = {0.3, 0.3, 0.3};
    cfg.flow.n_squarings = 3;
    cfg.eval_grid = Dims{5, 5, 5};
    cfg.loss.fold_weight = 0.5;
    cfg.loss.fold_eps = 1.5;
    cfg.loss.grad_weight = 0.01;
    cfg.loss.hess_weight = 1e-4;
    cfg.loss.bidirectional = true;
    cfg.seed = rng();
    cfg = cfg.normalized();
    SirenParams params = init_siren(cfg.siren);
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const auto last = layer_layout(cfg.siren).back();
    for (Eigen::Index i = last.weight_offset; i < params.theta.size(); ++i) params.theta[i] = u(rng);
    const LossConfig lc = cfg.loss;
    DeformationLossFn fn = [&, lc](const DispField& phi, const DispField* inv) {
      ObjectiveResult r = objective(I1, I2, phi, inv, lc);
      return DeformationLoss{r.value, r.forward, r.backward, std::move(r.grad_phi), std::move(r.grad_phi_inv)};
    };
    const auto ev = evaluate_chain(params, cfg, image, true, fn);
    for (int dir = 0; dir < 3; ++dir) {
      Eigen::VectorXd d = Eigen::VectorXd::NullaryExpr(params.theta.size(), [&] { return u(rng); });
      d.normalize();
      const double h = 1e-6;
      SirenParams p = params;
      p.theta = params.theta + h * d;
      const double fp = evaluate_chain(p, cfg, image, true, fn, false).loss.value;
      p.theta = params.theta - h * d;
      const double fm = evaluate_chain(p, cfg, image, true, fn, false).loss.value;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = ev.grad.dot(d);
      worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
    }
  }
  return {"end-to-end gradient", worst < 1e-4, "max relative error " + fmt(worst)};
}

SuiteResult decomposition_suite(std::mt19937_64& rng) {
  const GridGeometry g = GridGeometry::fit_unit_cube({6, 6, 6});
  std::uniform_real_distribution<double> u(-0.4, 0.4);
  double worst = 0.0;
  for (GroupKind kind : {GroupKind::SE3, GroupKind::SIM3}) {
    LieCoeffField v(g, kind);
    std::vector<double> a(std::size_t(v.channels()));
    for (double& c : a) c = u(rng);
    for (std::size_t i = 0; i < g.size(); ++i) std::copy(a.begin(), a.end(), v.at(i));
    worst = std::max(worst, decomposition_residual(v, 0.5, 8));
  }
  return {"decomposition (constant field)", worst < 1e-9, "max residual " + fmt(worst)};
}

SuiteResult loss_kernel_suite() {
  const GridGeometry g = GridGeometry::fit_unit_cube({6, 6, 6});
  DispField constant(g);
  DispField affine(g);
  DispField reflection(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.center(i);
    constant.data[i] = Vec3(0.1, -0.2, 0.05);
    affine.data[i] = Vec3(0.1 * x[0] + 0.2 * x[1], -0.1 * x[2], 0.3 * x[0]) + Vec3(0.01, 0.0, -0.02);
    reflection.data[i] = -2.0 * x;
  }
  const double eps = 0.01;
  const double rg = gradient_reg(constant).value;
  const double rh = hessian_reg(affine).value;
  const double fold_id = folding_penalty(DispField(g), eps).value;
  const double fold_ref = folding_penalty(reflection, eps).value;
  const bool ok = rg == 0.0 && std::abs(rh) < 1e-20 && fold_id == 0.0 &&
                  std::abs(fold_ref - (1.0 + eps) * g.volume()) < 1e-9;
  return {"loss kernels", ok,
          "R_g(const) " + fmt(rg) + ", R_h(affine) " + fmt(rh) + ", fold(reflection) " + fmt(fold_ref)};
}

}  // namespace

std::vector<SuiteResult> run_selftest(unsigned seed) {
  std::mt19937_64 rng(seed);
  std::vector<SuiteResult> out;
  auto guarded = [&](auto&& fn, const char* name) {
    try {
      out.push_back(fn());
    } catch (const std::exception& e) {
      out.push_back({name, false, e.what()});
    }
  };
  guarded([&] { return exp_log_suite(rng); }, "exp/log oracle");
  guarded([&] { return gradient_suite(rng); }, "end-to-end gradient");
  guarded([&] { return decomposition_suite(rng); }, "decomposition (constant field)");
  guarded([&] { return loss_kernel_suite(); }, "loss kernels");
  return out;
}

}  // namespace groupflow
