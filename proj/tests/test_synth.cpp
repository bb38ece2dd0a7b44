#include <doctest.h>

#include <set>

#include "groupflow/metrics.hpp"
#include "groupflow/synth.hpp"
#include "support.hpp"

using namespace groupflow;

namespace {

Volume smooth_reference(const Dims& dims) {
  Volume v = gft::smooth_volume(GridGeometry::fit_unit_cube(dims));
  for (double& x : v.data) x += 2.0;  // strictly positive so the mask covers everything
  return v;
}

}  // namespace

TEST_CASE("synth: rigid sampling") {
  SynthConfig cfg;
  cfg.rotation_scale = 0.0;
  cfg.translation_scale = 0.0;
  Rng rng(1);
  CHECK(sample_rigid(cfg, rng).matrix == Mat4::Identity());

  SynthConfig fixed;
  fixed.fixed_angle = M_PI / 2;
  fixed.fixed_translation = 0.0;
  const RigidSample s = sample_rigid(fixed, rng);
  CHECK(s.angle == M_PI / 2);
  Mat3 K;
  K << 0, -s.axis[2], s.axis[1], s.axis[2], 0, -s.axis[0], -s.axis[1], s.axis[0], 0;
  const Mat3 rodrigues = Mat3::Identity() + K + K * K;  // sin = 1, 1 - cos = 1
  CHECK((s.matrix.topLeftCorner<3, 3>() - rodrigues).norm() < 1e-14);
  CHECK(s.matrix.topRightCorner<3, 1>().isZero(0.0));

  Vec3 mean = Vec3::Zero();
  SynthConfig def;
  for (int i = 0; i < 10000; ++i) {
    const RigidSample r = sample_rigid(def, rng);
    CHECK(std::abs(r.axis.norm() - 1.0) < 1e-12);
    CHECK(std::abs(r.angle) <= def.max_angle);
    CHECK(r.translation.norm() <= def.max_translation);
    mean += r.axis;
  }
  mean /= 10000.0;
  CHECK(mean.cwiseAbs().maxCoeff() < 0.05);

  // The number of draws does not depend on the scales.
  Rng a(5), b(5);
  SynthConfig scaled;
  scaled.rotation_scale = 0.3;
  sample_rigid(scaled, a);
  sample_rigid(def, b);
  CHECK(a() == b());
}

TEST_CASE("synth: polyharmonic spline") {
  const GridGeometry g = GridGeometry::fit_unit_cube({12, 10, 8});
  SynthConfig cfg;
  const auto pts = control_points(cfg, g);
  REQUIRE(pts.size() == 343);
  CHECK((pts.front() - g.lo).norm() < 1e-15);
  CHECK((pts.back() - g.hi).norm() < 1e-15);

  Rng rng(3);
  const GroundTruth gt = generate_field(cfg, g, rng);
  const PolyharmonicSpline spline(gt.control_points, gt.control_displacements);
  for (std::size_t i = 0; i < pts.size(); ++i) CHECK((spline(pts[i]) - gt.control_displacements[i]).norm() < 1e-8);

  // Affine data is reproduced by the polynomial tail alone.
  Mat3 A;
  A << 0.1, 0.2, 0.0, -0.1, 0.3, 0.1, 0.2, 0.0, -0.2;
  std::vector<Vec3> values;
  for (const Vec3& p : pts) values.push_back(A * p + Vec3(0.1, -0.2, 0.3));
  const PolyharmonicSpline affine(pts, values);
  CHECK(affine.max_rbf_weight() < 1e-8);
  CHECK((affine(Vec3(0.13, -0.27, 0.31)) - (A * Vec3(0.13, -0.27, 0.31) + Vec3(0.1, -0.2, 0.3))).norm() < 1e-8);
  CHECK_THROWS_AS(PolyharmonicSpline(std::vector<Vec3>(5, Vec3::Zero()), std::vector<Vec3>(5, Vec3::Zero())), Error);
}

TEST_CASE("synth: dense fields") {
  const GridGeometry g = GridGeometry::fit_unit_cube({10, 10, 10});
  SynthConfig none;
  none.max_perturbation = 0.0;
  none.rotation_scale = 0.0;
  none.translation_scale = 0.0;
  Rng r0(1);
  for (const Vec3& d : generate_field(none, g, r0).phi.data) CHECK(d.norm() < 1e-10);

  SynthConfig rigid;
  rigid.max_perturbation = 0.0;
  Rng r1(2);
  const GroundTruth gt = generate_field(rigid, g, r1);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.center(i);
    worst = std::max(worst, (gt.phi.data[i] - (apply_homogeneous<double>(gt.rigid, x) - x)).norm());
  }
  CHECK(worst < 1e-8);

  Rng a(7), b(7);
  CHECK(generate_field(SynthConfig{}, g, a).phi.data == generate_field(SynthConfig{}, g, b).phi.data);
}

TEST_CASE("synth: pairs") {
  const Volume ref = smooth_reference({10, 10, 10});
  SynthConfig zero;
  zero.max_perturbation = 0.0;
  zero.rotation_scale = 0.0;
  zero.translation_scale = 0.0;
  zero.noise_sigma = 0.0;
  Rng rng(1);
  const SyntheticPair p = synthesize_pair(ref, zero, rng);
  const Volume padded = pad_volume(ref, 0.1);
  CHECK(padded.geom.dims == Dims{12, 12, 12});
  REQUIRE(p.fixed.data.size() == padded.data.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < padded.data.size(); ++i) worst = std::max(worst, std::abs(p.fixed.data[i] - padded.data[i]));
  CHECK(worst < 1e-9);
  CHECK(p.moving.data == padded.data);

  // Pure translation: the template samples the padded reference at x + t.
  SynthConfig shift = zero;
  shift.fixed_angle = 0.0;
  shift.fixed_translation = 0.05;
  Rng r2(4);
  const SyntheticPair q = synthesize_pair(ref, shift, r2);
  const Vec3 t = q.truth.rigid.topRightCorner<3, 1>();
  CHECK(t.norm() == doctest::Approx(0.05));
  const auto& g = q.fixed.geom;
  for (int k = 3; k < 9; ++k)
    for (int j = 3; j < 9; ++j)
      for (int i = 3; i < 9; ++i) {
        const std::size_t idx = g.index(i, j, k);
        CHECK((q.truth.phi.data[idx] - t).norm() < 1e-9);
        CHECK(q.fixed.data[idx] == doctest::Approx(sample_trilinear(q.moving, g.center(idx) + t)).epsilon(1e-9));
      }
}

TEST_CASE("synth: noise level") {
  const Volume ref = smooth_reference({54, 54, 54});
  SynthConfig cfg;
  cfg.noise_sigma = 0.01;
  Rng a(9), b(9);
  const SyntheticPair noisy = synthesize_pair(ref, cfg, a);
  SynthConfig quiet = cfg;
  quiet.noise_sigma = 0.0;
  const SyntheticPair clean = synthesize_pair(ref, quiet, b);
  CHECK(noisy.fixed.geom.dims[0] >= 64);
  double s = 0.0, s2 = 0.0;
  const double n = double(noisy.fixed.data.size());
  for (std::size_t i = 0; i < noisy.fixed.data.size(); ++i) {
    const double d = noisy.fixed.data[i] - clean.fixed.data[i];
    s += d;
    s2 += d * d;
  }
  const double sd = std::sqrt(s2 / n - (s / n) * (s / n));
  CHECK(sd >= 0.009);
  CHECK(sd <= 0.011);
}

TEST_CASE("synth: magnitude sweeps") {
  const Phantom ph = make_phantom({16, 16, 16}, 2);
  SynthConfig cfg;
  cfg.seed = 3;
  const auto one = sweep_magnitudes(ph.image, cfg, 1, SweepKind::Rotation);
  REQUIRE(one.size() == 1);
  CHECK(one[0].truth.rigid == Mat4::Identity());

  const auto rot = sweep_magnitudes(ph.image, cfg, 10, SweepKind::Rotation, &ph.labels);
  REQUIRE(rot.size() == 10);
  double previous = -1.0;
  for (int i = 0; i < 10; ++i) {
    const Mat3 R = rot[std::size_t(i)].truth.rigid.topLeftCorner<3, 3>();
    const double angle = std::acos(std::clamp((R.trace() - 1.0) / 2.0, -1.0, 1.0));
    CHECK(angle * 180.0 / M_PI == doctest::Approx(10.0 * i).epsilon(1e-9));
    CHECK(rot[std::size_t(i)].truth.rigid.topRightCorner<3, 1>().isZero(0.0));
    const auto& p = rot[std::size_t(i)];
    const double initial = masked_rmse(DispField(p.truth.phi.geom), p.truth.phi, &p.mask);
    CHECK(initial > previous);
    previous = initial;
    REQUIRE(p.fixed_labels.has_value());
  }

  const auto tr = sweep_magnitudes(ph.image, cfg, 10, SweepKind::Translation);
  for (int i = 0; i < 10; ++i) {
    const Mat4& M = tr[std::size_t(i)].truth.rigid;
    CHECK((M.topLeftCorner<3, 3>() - Mat3::Identity()).norm() < 1e-15);
    CHECK(M.topRightCorner<3, 1>().norm() == doctest::Approx(0.2 * i / 9.0));
  }
  CHECK_THROWS_AS(sweep_magnitudes(ph.image, cfg, 0, SweepKind::Rotation), Error);
}

TEST_CASE("synth: phantom") {
  const Phantom a = make_phantom({20, 22, 18}, 1);
  const Phantom b = make_phantom({20, 22, 18}, 1);
  CHECK(a.image.data == b.image.data);
  CHECK(a.labels.labels == b.labels.labels);
  REQUIRE(a.image.mask.has_value());
  std::set<int> present;
  for (auto l : a.labels.labels) present.insert(l);
  CHECK(present == std::set<int>{0, 1, 2, 3, 4, 5, 6});
  for (std::size_t i = 0; i < a.image.data.size(); ++i) {
    if (a.labels.labels[i] != 0) CHECK((*a.image.mask)[i] == 1);
    if (!(*a.image.mask)[i]) CHECK(a.image.data[i] < 0.5);
  }
}
