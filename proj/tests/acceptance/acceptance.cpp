// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion numbers
// as arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "groupflow/config.hpp"
#include "groupflow/flow.hpp"
#include "groupflow/io.hpp"
#include "groupflow/loss.hpp"
#include "groupflow/metrics.hpp"
#include "groupflow/registration.hpp"
#include "groupflow/synth.hpp"

using namespace groupflow;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string format(const char* f, ...) __attribute__((format(printf, 1, 2)));
std::string format(const char* f, ...) {
  char buf[1024];
  va_list args;
  va_start(args, f);
  std::vsnprintf(buf, sizeof buf, f, args);
  va_end(args);
  return buf;
}

void note(const std::string& s) {
  std::printf("  %s\n", s.c_str());
  std::fflush(stdout);
}

AlgebraCoeffs random_coeffs(GroupKind kind, std::mt19937_64& rng, double max_angle) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int k = algebra_dim(kind);
  AlgebraCoeffs a(k);
  for (int i = 0; i < k; ++i) a[i] = u(rng);
  Vec3 w(a[3], a[4], a[5]);
  w *= std::abs(u(rng)) * max_angle / w.norm();
  a.segment<3>(3) = w;
  return a;
}

Volume smooth_volume(const GridGeometry& g, double phase) {
  Volume v(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.center(i);
    v.data[i] = std::sin(2.0 * x[0] + phase) * std::cos(1.5 * x[1]) + 0.5 * std::sin(2.5 * x[2] - phase) + 0.2 * x[0] * x[1];
  }
  return v;
}

DispField random_disp(const GridGeometry& g, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  DispField d(g);
  for (auto& v : d.data) v = Vec3(u(rng), u(rng), u(rng));
  return d;
}

// ---- 1 ------------------------------------------------------------------------

Outcome lie_oracle() {
  std::mt19937_64 rng(2024);
  double worst_exp = 0.0, worst_log = 0.0;
  for (GroupKind kind : {GroupKind::SE3, GroupKind::SIM3}) {
    const auto& desc = GroupDescriptor::get(kind);
    for (int s = 0; s < 10000; ++s) {
      const AlgebraCoeffs a = random_coeffs(kind, rng, M_PI - 0.1);
      const Mat4 E = exp_group(desc, a);
      worst_exp = std::max(worst_exp, (E - exp_series_oracle(hat(desc, a), 30)).norm());
      worst_log = std::max(worst_log, (log_group(desc, E) - a).norm());
    }
  }
  return {worst_exp < 1e-10 && worst_log < 1e-9,
          format("max |exp - series| = %.3g (< 1e-10), max |log(exp a) - a| = %.3g (< 1e-9)", worst_exp, worst_log)};
}

// ---- 2 ------------------------------------------------------------------------

// Least-squares slope of log2(error) against n over n = 2..last_n, where
// last_n is the final n before stagnation: every step up to it reduces the
// error by at least 10%. At least three points enter the fit.
double pre_stagnation_slope(const std::vector<double>& err, int& last_n) {
  last_n = 2;
  while (last_n < 10 && err[std::size_t(last_n + 1)] < 0.9 * err[std::size_t(last_n)]) ++last_n;
  last_n = std::max(last_n, 4);
  double mx = 0, my = 0;
  const int count = last_n - 1;
  for (int n = 2; n <= last_n; ++n) {
    mx += n;
    my += std::log2(err[std::size_t(n)]);
  }
  mx /= count;
  my /= count;
  double num = 0, den = 0;
  for (int n = 2; n <= last_n; ++n) {
    num += (n - mx) * (std::log2(err[std::size_t(n)]) - my);
    den += (n - mx) * (n - mx);
  }
  return num / den;
}

Outcome integrator_inverse() {
  const GridGeometry g = GridGeometry::fit_unit_cube({32, 32, 32});
  bool pass = true;
  std::string detail;
  for (GroupKind kind : {GroupKind::SE3, GroupKind::T3}) {
    const LieCoeffField v = random_velocity_field(g, kind, 0.2, 1);
    std::vector<double> err(11, 0.0);
    double fb7 = 0.0, bf7 = 0.0;
    for (int n = 2; n <= 10; ++n) {
      const InverseConsistency e = forward_backward_error(v, {n, kind});
      err[std::size_t(n)] = 0.5 * (e.forward_backward + e.backward_forward);
      if (n == 7) {
        fb7 = e.forward_backward;
        bf7 = e.backward_forward;
      }
    }
    int last = 0;
    const double slope = pre_stagnation_slope(err, last);
    std::ostringstream curve;
    for (int n = 2; n <= 10; ++n) curve << (n > 2 ? " " : "") << format("%.3g", err[std::size_t(n)]);
    note(std::string(to_string(kind)) + " error n=2..10: " + curve.str());
    const bool ok = fb7 < 0.05 && bf7 < 0.05 && slope < -0.3;
    pass = pass && ok;
    detail += format("%s%s fb(7)=%.4f bf(7)=%.4f slope(n=2..%d)=%.2f", detail.empty() ? "" : "; ",
                     std::string(to_string(kind)).c_str(), fb7, bf7, last, slope);
  }
  return {pass, detail + " (need < 0.05 voxels and slope < -0.3)"};
}

// ---- 3 ------------------------------------------------------------------------

Outcome decomposition() {
  const GridGeometry g = GridGeometry::fit_unit_cube({16, 16, 16});
  AlgebraCoeffs a(7);
  a << 0.1, 0.2, -0.3, 0.5, -0.2, 0.1, 0.05;
  LieCoeffField c(g, GroupKind::SIM3);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int k = 0; k < 7; ++k) c.at(i)[k] = a[k];
  const double r_const = decomposition_residual(c, 1.0, 16);
  bool pass = r_const < 1e-9;
  std::string detail = format("constant: %.3g (< 1e-9)", r_const);
  for (GroupKind kind : {GroupKind::SE3, GroupKind::SIM3}) {
    const LieCoeffField v = random_velocity_field(g, kind, 0.4, 6);
    const double r16 = decomposition_residual(v, 1.0, 16);
    const double r64 = decomposition_residual(v, 1.0, 64);
    const double r256 = decomposition_residual(v, 1.0, 256);
    pass = pass && r64 < r16 && r256 < r64;
    detail += format("; %s 16/64/256: %.3g > %.3g > %.3g", std::string(to_string(kind)).c_str(), r16, r64, r256);
  }
  return {pass, detail};
}

// ---- 4 ------------------------------------------------------------------------

Outcome gradient_check() {
  const GridGeometry image = GridGeometry::fit_unit_cube({8, 8, 8});
  const Volume I1 = smooth_volume(image, 0.0);
  const Volume I2 = smooth_volume(image, 0.3);
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  double worst = 0.0;
  int checked = 0;
  for (GroupKind kind : {GroupKind::T3, GroupKind::SE3, GroupKind::SIM3}) {
    RegistrationConfig cfg = preset(Experiment::DeskSynthetic, kind);
    cfg.siren.hidden_dim = 8;
    cfg.siren.n_blocks = 2;
    cfg.flow.n_squarings = 3;
    cfg.eval_grid = Dims{5, 6, 5};
    cfg.post_scale = {0.3, 0.3, 0.3};
    cfg.loss.fold_weight = 0.3;
    cfg.loss.fold_eps = 1.5;  // every cell inside the hinge, so the objective is smooth
    cfg.loss.grad_weight = 0.05;
    cfg.loss.hess_weight = 1e-3;
    cfg.loss.bidirectional = kind != GroupKind::T3;
    cfg = cfg.normalized();
    SirenParams params = init_siren(cfg.siren);
    const auto last = layer_layout(cfg.siren).back();
    for (Eigen::Index i = last.weight_offset; i < params.theta.size(); ++i) params.theta[i] = 0.4 * u(rng);
    const LossConfig lc = cfg.loss;
    DeformationLossFn fn = [&, lc](const DispField& phi, const DispField* inv) {
      ObjectiveResult r = objective(I1, I2, phi, inv, lc);
      return DeformationLoss{r.value, r.forward, r.backward, std::move(r.grad_phi), std::move(r.grad_phi_inv)};
    };
    const auto ev = evaluate_chain(params, cfg, image, lc.bidirectional, fn);
    for (int dir = 0; dir < 20; ++dir) {
      const Eigen::VectorXd d = Eigen::VectorXd::NullaryExpr(params.theta.size(), [&] { return u(rng); }).normalized();
      const double h = 1e-6;
      SirenParams p = params;
      p.theta = params.theta + h * d;
      const double fp = evaluate_chain(p, cfg, image, lc.bidirectional, fn, false).loss.value;
      p.theta = params.theta - h * d;
      const double fm = evaluate_chain(p, cfg, image, lc.bidirectional, fn, false).loss.value;
      const double fd = (fp - fm) / (2 * h);
      const double an = ev.grad.dot(d);
      worst = std::max(worst, std::abs(an - fd) / std::max({std::abs(fd), std::abs(an), 1e-8}));
      ++checked;
    }
  }
  return {worst < 1e-4, format("%d directions over T3/SE3/SIM3, max relative error %.3g (< 1e-4)", checked, worst)};
}

// ---- 5 ------------------------------------------------------------------------

Outcome exact_representation() {
  const GridGeometry g = GridGeometry::fit_unit_cube({32, 32, 32});
  SynthConfig sc;
  sc.fixed_angle = M_PI / 4;
  sc.fixed_translation = 0.05;
  sc.max_perturbation = 0.0;
  Rng rng(3);
  const GroundTruth gt = generate_field(sc, g, rng);
  double rmse[2];
  int i = 0;
  for (GroupKind kind : {GroupKind::SE3, GroupKind::T3}) {
    const RegistrationConfig cfg = preset(Experiment::DeskFitting, kind);
    const RegistrationResult r = fit_deformation(gt.phi, cfg);
    rmse[i] = masked_rmse(r.phi, gt.phi);
    note(format("%s: rmse %.4f voxels after %d iterations (%.0f s)", std::string(to_string(kind)).c_str(), rmse[i],
                cfg.iterations, r.wall_seconds));
    ++i;
  }
  return {rmse[0] < 0.1 && rmse[1] > rmse[0],
          format("45 deg rigid target: SE3 %.4f voxels (< 0.1), T3 %.4f (> SE3)", rmse[0], rmse[1])};
}

// ---- 6 ------------------------------------------------------------------------

struct SweepRow {
  double initial = 0.0, se3 = 0.0, t3 = 0.0;
};

SweepRow register_pair(const SyntheticPair& p) {
  SweepRow row;
  row.initial = masked_rmse(DispField(p.truth.phi.geom), p.truth.phi, &p.mask);
  for (GroupKind kind : {GroupKind::SE3, GroupKind::T3}) {
    const RegistrationResult r = register_images(p.fixed, p.moving, preset(Experiment::DeskSynthetic, kind));
    (kind == GroupKind::SE3 ? row.se3 : row.t3) = masked_rmse(r.phi, p.truth.phi, &p.mask);
  }
  return row;
}

Outcome sweep_ordering() {
  const Phantom ph = make_phantom({26, 26, 26}, 0);
  SynthConfig sc;
  sc.seed = 7;
  bool pass = true;
  std::string detail;

  const auto rot = sweep_magnitudes(ph.image, sc, 10, SweepKind::Rotation, &ph.labels);
  int wins = 0, gated = 0;
  for (int i = 4; i < 10; ++i) {
    const SweepRow row = register_pair(rot[std::size_t(i)]);
    note(format("rotation %2d deg: initial %.3f  se3 %.3f  t3 %.3f", 10 * i, row.initial, row.se3, row.t3));
    ++gated;
    if (row.se3 < row.t3) ++wins;
  }
  pass = wins == gated;
  detail = format("rotation >= 40 deg: SE3 lower on %d/%d pairs", wins, gated);

  const auto tr = sweep_magnitudes(ph.image, sc, 10, SweepKind::Translation, &ph.labels);
  double worst_ratio = 1.0;
  for (int i = 0; i < 10; ++i) {
    const SweepRow row = register_pair(tr[std::size_t(i)]);
    const double ratio = std::max(row.se3, row.t3) / std::min(row.se3, row.t3);
    note(format("translation %.3f: initial %.3f  se3 %.3f  t3 %.3f  ratio %.2f", 0.2 * i / 9.0, row.initial, row.se3,
                row.t3, ratio));
    worst_ratio = std::max(worst_ratio, ratio);
  }
  pass = pass && worst_ratio <= 2.0;
  detail += format("; no-rotation sweep worst SE3/T3 ratio %.2f (<= 2)", worst_ratio);
  return {pass, detail};
}

// ---- 7 ------------------------------------------------------------------------

Outcome loss_kernels() {
  const GridGeometry g = GridGeometry::fit_unit_cube({9, 8, 7});
  DispField constant(g), affine(g), reflect(g);
  Mat3 A;
  A << 0.1, -0.2, 0.05, 0.3, 0.0, -0.1, 0.02, 0.2, -0.15;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.center(i);
    constant.data[i] = Vec3(0.3, -0.2, 0.1);
    affine.data[i] = A * x + Vec3(0.1, 0.2, -0.3);
    reflect.data[i] = Vec3(-2 * x[0], 0, 0);
  }
  const double eps = 0.01;
  const double rg = gradient_reg(constant).value;
  const double rh = hessian_reg(affine).value;
  const double f_id = folding_penalty(DispField(g), eps).value;
  const double f_ref = folding_penalty(reflect, eps).value;
  const double expected = (1 + eps) * g.volume();
  const bool pass = rg == 0.0 && rh < 1e-20 && f_id == 0.0 && std::abs(f_ref - expected) < 1e-9;
  return {pass, format("R_g(const) = %.3g, R_h(affine) = %.3g, fold(id) = %.3g, fold(reflect) - (1+eps)|Omega| = %.3g",
                       rg, rh, f_id, f_ref - expected)};
}

// ---- 8 ------------------------------------------------------------------------

Outcome metric_oracles() {
  const GridGeometry g = GridGeometry::fit_unit_cube({16, 12, 12});
  LabelVolume a(g), b(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const auto ijk = g.ijk(i);
    const bool yz = ijk[1] >= 2 && ijk[1] < 10 && ijk[2] >= 2 && ijk[2] < 10;
    if (yz && ijk[0] >= 2 && ijk[0] < 10) a.labels[i] = 1;
    if (yz && ijk[0] >= 6 && ijk[0] < 14) b.labels[i] = 1;
  }
  const double d = dice(a, b).mean;
  const GridGeometry c = GridGeometry::fit_unit_cube({10, 10, 10});
  DispField zero(c), offset(c), reflect(c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    offset.data[i] = Vec3(2 * c.spacing(0), 0, 0);
    reflect.data[i] = Vec3(-2 * c.center(i)[0], 0, 0);
  }
  const double r = masked_rmse(zero, offset);
  const double n = negdet_fraction(reflect);
  return {d == 0.5 && r == 2.0 && n == 1.0,
          format("Dice(half overlap) = %.17g, RMSE(2-voxel offset) = %.17g, negdet(reflection) = %.17g", d, r, n)};
}

// ---- 9 ------------------------------------------------------------------------

Outcome bidirectional_symmetry() {
  const GridGeometry g = GridGeometry::fit_unit_cube({16, 16, 16});
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-1, 1);
  Volume I1(g), I2(g);
  for (double& x : I1.data) x = u(rng);
  for (double& x : I2.data) x = u(rng);
  const DispField phi = random_disp(g, rng, 0.03);
  const DispField inv = random_disp(g, rng, 0.03);
  LossConfig lc;
  lc.fold_weight = 100.0;
  lc.fold_eps = 0.5;
  lc.grad_weight = 0.1;
  lc.hess_weight = 1e-3;
  lc.bidirectional = true;
  const double a = objective(I1, I2, phi, &inv, lc).value;
  const double b = objective(I2, I1, inv, &phi, lc).value;
  return {std::abs(a - b) <= 1e-12, format("|L(I1,I2,phi,phi_inv) - L(I2,I1,phi_inv,phi)| = %.3g (value %.6g)",
                                           std::abs(a - b), a)};
}

// ---- 10 -----------------------------------------------------------------------

Outcome determinism_serialization() {
  const fs::path dir = fs::temp_directory_path() / ("groupflow_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  bool pass = true;
  std::vector<std::string> failures;
  auto require = [&](bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
    pass = pass && ok;
  };

  const Phantom ph = make_phantom({12, 12, 12}, 4);
  SynthConfig sc;
  sc.seed = 21;
  Rng r1(sc.seed), r2(sc.seed);
  const SyntheticPair p = synthesize_pair(ph.image, sc, r1, &ph.labels);
  const SyntheticPair q = synthesize_pair(ph.image, sc, r2, &ph.labels);
  require(p.fixed.data == q.fixed.data && p.truth.phi.data == q.truth.phi.data, "synthetic pairs");

  RegistrationConfig cfg = preset(Experiment::DeskSynthetic, GroupKind::SE3);
  cfg.iterations = 8;
  cfg.siren.hidden_dim = 32;
  cfg.loss.bidirectional = true;
  cfg = cfg.normalized();
  const RegistrationResult a = register_images(p.fixed, p.moving, cfg);
  const RegistrationResult b = register_images(q.fixed, q.moving, cfg);
  bool traces = a.trace.size() == b.trace.size();
  for (std::size_t i = 0; traces && i < a.trace.size(); ++i) traces = a.trace[i].total == b.trace[i].total;
  require(traces, "loss traces");
  std::vector<std::uint32_t> sums[2];
  int run = 0;
  for (const RegistrationResult* r : {&a, &b}) {
    const fs::path d = dir / ("run" + std::to_string(run));
    fs::create_directories(d);
    write_dispfield(d / "phi.gfd", r->phi);
    write_dispfield(d / "phi_inv.gfd", r->phi_inv);
    write_liefield(d / "velocity.gfa", r->velocity);
    write_checkpoint(d / "network.gfc", r->params);
    for (const char* f : {"phi.gfd", "phi_inv.gfd", "velocity.gfa", "network.gfc"})
      sums[run].push_back(file_adler32(d / f));
    ++run;
  }
  require(sums[0] == sums[1], "output checksums");

  // Bitwise round trips of every format.
  auto same_bytes_after_rewrite = [&](const fs::path& f, const std::function<void(const fs::path&)>& rewrite) {
    const fs::path g = f.string() + ".again";
    rewrite(g);
    return read_file_bytes(f) == read_file_bytes(g);
  };
  const fs::path d = dir / "formats";
  fs::create_directories(d);
  write_volume(d / "v.gfv", p.fixed);
  const Volume v = read_volume(d / "v.gfv");
  require(v.data == p.fixed.data && v.mask == p.fixed.mask, "volume f64");
  require(same_bytes_after_rewrite(d / "v.gfv", [&](const fs::path& o) { write_volume(o, v); }), "volume bytes");
  Volume f32 = p.fixed;
  for (double& x : f32.data) x = double(float(x));
  write_volume(d / "f.gfv", f32, ElementType::F32);
  require(read_volume(d / "f.gfv").data == f32.data, "volume f32");
  write_labels(d / "l.gfl", *p.fixed_labels);
  require(read_labels(d / "l.gfl").labels == p.fixed_labels->labels, "labels");
  write_dispfield(d / "d.gfd", p.truth.phi);
  require(read_dispfield(d / "d.gfd").data == p.truth.phi.data, "displacement");
  for (GroupKind kind : {GroupKind::T3, GroupKind::SE3, GroupKind::SIM3}) {
    const LieCoeffField lf = random_velocity_field(ph.image.geom, kind, 0.3, 5);
    write_liefield(d / "a.gfa", lf);
    const LieCoeffField back = read_liefield(d / "a.gfa");
    require(back.data == lf.data && back.group == kind, "lie field");
  }
  const SirenParams cp = read_checkpoint(dir / "run0" / "network.gfc");
  require(cp.theta == a.params.theta && cp.adam_m == a.params.adam_m && cp.adam_v == a.params.adam_v &&
              cp.step == a.params.step,
          "checkpoint");
  RunConfig rc;
  rc.registration = cfg;
  require(dump_config(parse_config(dump_config(rc))) == dump_config(rc), "config");
  fs::remove_all(dir);

  std::string detail = format("%zu-step traces identical, %zu output checksums identical, 8 formats round-trip",
                              a.trace.size(), sums[0].size());
  if (!failures.empty()) {
    detail = "failed:";
    for (const auto& f : failures) detail += " " + f;
  }
  return {pass, detail};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"Lie-group oracle equivalence", lie_oracle},
      {"integrator invertibility", integrator_inverse},
      {"decomposition condition", decomposition},
      {"end-to-end gradient check", gradient_check},
      {"exact-representation property", exact_representation},
      {"rotation-sweep breakdown ordering", sweep_ordering},
      {"loss-kernel exactness", loss_kernels},
      {"metric oracles", metric_oracles},
      {"bidirectional symmetry", bidirectional_symmetry},
      {"determinism and serialization", determinism_serialization},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!selected.empty() && !selected.count(id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s criterion %d (%s): %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += o.pass ? 0 : 1;
  }
  std::printf("%d failed\n", failed);
  return failed == 0 ? 0 : 1;
}
