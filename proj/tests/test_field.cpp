#include <doctest.h>

#include "groupflow/field.hpp"
#include "support.hpp"

using namespace groupflow;

TEST_CASE("field: unit-cube geometry") {
  const GridGeometry g = GridGeometry::fit_unit_cube({8, 12, 6});
  CHECK(g.lo[1] == -1.0);
  CHECK(g.hi[1] == 1.0);
  for (int a = 0; a < 3; ++a) {
    CHECK(g.spacing(a) == doctest::Approx(2.0 / 12));
    CHECK(g.lo[a] == doctest::Approx(-g.hi[a]));
    CHECK(g.hi[a] - g.lo[a] <= 2.0 + 1e-15);
  }
  const Vec3 c = g.center(3, 5, 1);
  CHECK(c[0] == doctest::Approx(g.lo[0] + 3.5 * g.spacing(0)));
  CHECK((g.to_index(c) - Vec3(3, 5, 1)).norm() < 1e-12);
  for (std::size_t i : {std::size_t(0), std::size_t(77), g.size() - 1}) {
    const auto ijk = g.ijk(i);
    CHECK(g.index(ijk[0], ijk[1], ijk[2]) == i);
  }
  CHECK(g.resampled({4, 6, 3}).hi == g.hi);
}

TEST_CASE("field: trilinear sampling") {
  const GridGeometry g = GridGeometry::fit_unit_cube({5, 6, 7});
  Volume v(g);
  auto tri = [](const Vec3& x) { return 1.0 + 2 * x[0] - x[1] + 0.5 * x[2] + 0.3 * x[0] * x[1] - 0.7 * x[0] * x[1] * x[2]; };
  for (std::size_t i = 0; i < g.size(); ++i) v.data[i] = tri(g.center(i));
  CHECK(sample_trilinear(v, g.center(2, 3, 4)) == v.data[g.index(2, 3, 4)]);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vec3 first = g.center(0, 0, 0), last = g.center(4, 5, 6);
  for (int t = 0; t < 200; ++t) {
    const Vec3 p = first + (last - first).cwiseProduct(Vec3(u(rng), u(rng), u(rng)));
    CHECK(sample_trilinear(v, p) == doctest::Approx(tri(p)).epsilon(1e-12));
  }
  // Clamping: far outside equals the nearest boundary voxel.
  CHECK(sample_trilinear(v, Vec3(10.0, -10.0, 10.0)) == doctest::Approx(v.data[g.index(4, 0, 6)]));

  LieCoeffField f(g, GroupKind::SE3);
  for (std::size_t i = 0; i < g.size(); ++i)
    for (int c = 0; c < 6; ++c) f.at(i)[c] = c * tri(g.center(i));
  double out[6];
  const Vec3 p(0.11, -0.23, 0.07);
  sample_trilinear(f, p, out);
  for (int c = 0; c < 6; ++c) CHECK(out[c] == doctest::Approx(c * tri(p)).epsilon(1e-12));
}

TEST_CASE("field: stencil derivatives match finite differences") {
  const GridGeometry g = GridGeometry::fit_unit_cube({6, 6, 6});
  Volume v = gft::smooth_volume(g);
  const Vec3 p(0.13, -0.41, 0.29);
  const auto st = TrilinearStencil::at(g, p, true);
  Vec3 grad = Vec3::Zero();
  for (int c = 0; c < 8; ++c) grad += st.dweight[std::size_t(c)] * v.data[st.index[std::size_t(c)]];
  const double h = 1e-6;
  for (int a = 0; a < 3; ++a) {
    Vec3 e = Vec3::Zero();
    e[a] = h;
    const double fd = (sample_trilinear(v, p + e) - sample_trilinear(v, p - e)) / (2 * h);
    CHECK(grad[a] == doctest::Approx(fd).epsilon(1e-6));
  }
}

TEST_CASE("field: matrix-field interpolation in the algebra") {
  const auto& se3 = GroupDescriptor::get(GroupKind::SE3);
  std::mt19937_64 rng(2);
  const GridGeometry g = GridGeometry::fit_unit_cube({4, 4, 4});
  MatrixField constant(g, GroupKind::SE3);
  const Mat4 M = exp_group(se3, gft::random_coeffs(GroupKind::SE3, rng, 2.0));
  for (auto& m : constant.data) m = M;
  CHECK((interp_matrix_field(constant, Vec3(0.1, 0.2, -0.3)) - M).norm() < 1e-9);

  MatrixField varied(g, GroupKind::SE3);
  for (auto& m : varied.data) m = exp_group(se3, gft::random_coeffs(GroupKind::SE3, rng, 2.0));
  CHECK((interp_matrix_field(varied, g.center(1, 2, 3)) - varied.data[g.index(1, 2, 3)]).norm() < 1e-9);
  for (int t = 0; t < 20; ++t) {
    CHECK(is_group_element(GroupKind::SE3, interp_matrix_field(varied, gft::random_coeffs(GroupKind::T3, rng).head<3>())));
  }

  // Parallel generators: the blend follows the one-parameter subgroup.
  const GridGeometry line = GridGeometry::fit_unit_cube({2, 1, 1});
  MatrixField two(line, GroupKind::SE3);
  AlgebraCoeffs a(6);
  a << 0.2, -0.1, 0.3, 0.4, 0.2, -0.5;
  two.data[0] = exp_group(se3, a);
  two.data[1] = exp_group(se3, AlgebraCoeffs(2.5 * a));
  const double s = 0.3;
  const Vec3 p = (1 - s) * line.center(0, 0, 0) + s * line.center(1, 0, 0);
  CHECK((interp_matrix_field(two, p) - exp_group(se3, AlgebraCoeffs((1 - s + 2.5 * s) * a))).norm() < 1e-12);
}

TEST_CASE("field: applying matrix fields") {
  const GridGeometry g = GridGeometry::fit_unit_cube({4, 5, 3});
  CHECK(apply_matrix_field(MatrixField(g, GroupKind::SE3)).data == DispField(g).data);
  MatrixField t(g, GroupKind::T3);
  for (auto& m : t.data) m.topRightCorner<3, 1>() = Vec3(0.1, -0.2, 0.3);
  for (const Vec3& d : apply_matrix_field(t).data) CHECK((d - Vec3(0.1, -0.2, 0.3)).norm() < 1e-15);

  const auto& se3 = GroupDescriptor::get(GroupKind::SE3);
  AlgebraCoeffs r(6);
  r << 0, 0, 0, 0.3, -0.5, 0.2;
  const Mat4 R = exp_group(se3, r);
  MatrixField rot(g, GroupKind::SE3);
  for (auto& m : rot.data) m = R;
  const DispField d = apply_matrix_field(rot);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.center(i);
    CHECK((d.data[i] - (R.topLeftCorner<3, 3>() - Mat3::Identity()) * x).norm() < 1e-15);
  }

  // log/exp field round trip.
  const LieCoeffField lf = log_field(rot);
  const MatrixField back = exp_field(lf);
  for (std::size_t i = 0; i < g.size(); ++i) CHECK((back.data[i] - R).norm() < 1e-14);
}

TEST_CASE("field: warping") {
  const GridGeometry g = GridGeometry::fit_unit_cube({8, 8, 8});
  const Volume v = gft::smooth_volume(g);
  CHECK(warp_volume(v, DispField(g)).data == v.data);

  DispField shift(g);
  for (auto& d : shift.data) d = Vec3(g.spacing(0), 0, 0);
  const Volume w = warp_volume(v, shift);
  for (int k = 0; k < 8; ++k)
    for (int j = 0; j < 8; ++j)
      for (int i = 0; i < 7; ++i) CHECK(w.data[g.index(i, j, k)] == doctest::Approx(v.data[g.index(i + 1, j, k)]).epsilon(1e-12));

  // Small translation and its analytic inverse.
  DispField fwd(g), bwd(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    fwd.data[i] = Vec3(0.013, -0.007, 0.004);
    bwd.data[i] = -fwd.data[i];
  }
  const Volume round = warp_volume(warp_volume(v, fwd), bwd);
  double worst = 0.0;
  for (int k = 1; k < 7; ++k)
    for (int j = 1; j < 7; ++j)
      for (int i = 1; i < 7; ++i) worst = std::max(worst, std::abs(round.data[g.index(i, j, k)] - v.data[g.index(i, j, k)]));
  CHECK(worst < 3e-2);  // two trilinear resamplings on an 8^3 grid

  LabelVolume labels(g);
  for (std::size_t i = 0; i < g.size(); ++i) labels.labels[i] = std::uint16_t(i % 7);
  CHECK(warp_labels(labels, DispField(g)).labels == labels.labels);
}

TEST_CASE("field: warp gradient matches finite differences") {
  const GridGeometry g = GridGeometry::fit_unit_cube({6, 6, 6});
  const Volume v = gft::smooth_volume(g);
  std::mt19937_64 rng(4);
  DispField phi = gft::random_disp(g, rng, 0.1);
  const auto wg = warp_volume_with_gradient(v, phi);
  const double h = 1e-7;
  for (std::size_t i : {std::size_t(7), std::size_t(100), std::size_t(180)}) {
    for (int a = 0; a < 3; ++a) {
      DispField p = phi, m = phi;
      p.data[i][a] += h;
      m.data[i][a] -= h;
      const double fd = (warp_volume(v, p).data[i] - warp_volume(v, m).data[i]) / (2 * h);
      CHECK(wg.gradient[i][a] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("field: central Jacobians") {
  const GridGeometry g = GridGeometry::fit_unit_cube({6, 6, 6});
  for (const Mat3& J : jacobian_central(DispField(g))) CHECK((J - Mat3::Identity()).norm() < 1e-12);
  Mat3 A;
  A << 0.1, 0.2, -0.3, 0.05, -0.1, 0.2, 0.3, 0.0, 0.1;
  DispField lin(g), rot(g);
  const Mat3 R = exp_group(GroupDescriptor::get(GroupKind::SE3), (AlgebraCoeffs(6) << 0, 0, 0, 0.4, 0.1, -0.7).finished())
                     .topLeftCorner<3, 3>();
  for (std::size_t i = 0; i < g.size(); ++i) {
    lin.data[i] = A * g.center(i);
    rot.data[i] = (R - Mat3::Identity()) * g.center(i);
  }
  const auto JL = jacobian_central(lin);
  const auto JR = jacobian_central(rot);
  for (int k = 1; k < 5; ++k)
    for (int j = 1; j < 5; ++j)
      for (int i = 1; i < 5; ++i) {
        const std::size_t idx = g.index(i, j, k);
        CHECK((JL[idx] - (Mat3::Identity() + A)).norm() < 1e-12);
        CHECK((JR[idx] - R).norm() < 1e-12);
        CHECK(JR[idx].determinant() == doctest::Approx(1.0).epsilon(1e-12));
      }
}

TEST_CASE("field: displacement composition") {
  const GridGeometry g = GridGeometry::fit_unit_cube({5, 5, 5});
  DispField a(g), b(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    a.data[i] = Vec3(0.1, 0.0, -0.05);
    b.data[i] = Vec3(-0.02, 0.03, 0.01);
  }
  for (const Vec3& d : compose_displacements(a, b).data) CHECK((d - Vec3(0.08, 0.03, -0.04)).norm() < 1e-15);
  CHECK(to_voxels(g, Vec3(g.spacing(0), 0, -2 * g.spacing(2))) .isApprox(Vec3(1, 0, -2)));
}

TEST_CASE("field: geometry mismatches are reported") {
  const Volume a(GridGeometry::fit_unit_cube({4, 4, 4}));
  const Volume b(GridGeometry::fit_unit_cube({4, 4, 5}));
  try {
    require_same_geometry(a.geom, b.geom, "test");
    FAIL("expected mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DimensionMismatch);
  }
}
