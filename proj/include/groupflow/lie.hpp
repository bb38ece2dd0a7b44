#pragma once

// Matrix groups T(3), SE(3) and SIM(3) in 4x4 homogeneous form.
//
// Algebra coordinates are laid out as
//   [ t0 t1 t2 | w0 w1 w2 | lambda ]
// translation first, then so(3) axis-angle coordinates (SE3/SIM3), then the
// log-scale (SIM3 only). hat() maps them to
//   [ lambda*I + [w]x   t ]
//   [ 0                 0 ].
//
// exp/log are templates on the scalar type so the same closed forms can be
// evaluated with forward-mode dual numbers (ceres::Jet) to obtain exact local
// Jacobians for reverse-mode differentiation through the flow.

#include <array>
#include <cmath>
#include <string>
#include <string_view>
#include <type_traits>

#include <Eigen/Core>
#include <Eigen/LU>

#include "groupflow/error.hpp"

namespace groupflow {

using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

template <class S>
using Mat3T = Eigen::Matrix<S, 3, 3>;
template <class S>
using Mat4T = Eigen::Matrix<S, 4, 4>;
template <class S>
using Vec3T = Eigen::Matrix<S, 3, 1>;

enum class GroupKind { T3, SE3, SIM3 };

inline constexpr int kMaxAlgebraDim = 7;

/// Fixed-capacity algebra coordinate vector (length 3, 6 or 7).
using AlgebraCoeffs = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxAlgebraDim, 1>;

constexpr int algebra_dim(GroupKind kind) {
  switch (kind) {
    case GroupKind::T3: return 3;
    case GroupKind::SE3: return 6;
    case GroupKind::SIM3: return 7;
  }
  return 0;
}

std::string_view to_string(GroupKind kind);
GroupKind parse_group_kind(std::string_view name);

struct GroupDescriptor {
  GroupKind kind;
  int algebra_dim;
  std::array<Mat4, kMaxAlgebraDim> generators;  // first algebra_dim are used

  static const GroupDescriptor& get(GroupKind kind);
};

Mat4 hat(const GroupDescriptor& g, const AlgebraCoeffs& a);
AlgebraCoeffs vee(const GroupDescriptor& g, const Mat4& A);
Mat4 exp_group(const GroupDescriptor& g, const AlgebraCoeffs& a);
AlgebraCoeffs log_group(const GroupDescriptor& g, const Mat4& M);

/// Partial sum sum_{i=0..terms} A^i / i!. Reference for tests only.
Mat4 exp_series_oracle(const Mat4& A, int terms);

/// Checks the homogeneous last row and, for SE3/SIM3, orthonormality (up to
/// a positive scale for SIM3) of the linear block.
bool is_group_element(GroupKind kind, const Mat4& M, double tol = 1e-9);

// Threshold on theta below which the Rodrigues coefficients switch to Taylor
// expansions, and the rotation-angle limit of the principal logarithm.
inline constexpr double kSmallAngle = 1e-4;
inline constexpr double kLogAngleLimit = M_PI - 1e-6;

namespace detail {

template <class S>
Mat3T<S> skew(const S& x, const S& y, const S& z) {
  Mat3T<S> W;
  W << S(0.0), -z, y, z, S(0.0), -x, -y, x, S(0.0);
  return W;
}

template <class S>
double plain(const S& s) {
  if constexpr (std::is_arithmetic_v<S>) {
    return s;
  } else {
    return s.a;
  }
}

// mu_m(l) = int_0^1 s^m e^{l s} ds
template <class S>
S exp_moment(int m, const S& l) {
  using std::exp;
  const double al = std::abs(plain(l));
  if (al < 2.0) {
    const int terms = al < 0.1 ? 12 : 48;
    S sum(0.0);
    S term(1.0);  // l^k / k!
    for (int k = 0; k < terms; ++k) {
      sum += term / double(m + k + 1);
      term = term * l / double(k + 1);
    }
    return sum;
  }
  const S el = exp(l);
  S mu = (el - 1.0) / l;
  for (int j = 1; j <= m; ++j) mu = (el - double(j) * mu) / l;
  return mu;
}

// Rotation part: R = I + A W + B W^2.
template <class S>
void rotation_coeffs(const S& theta_sq, S& A, S& B) {
  using std::cos;
  using std::sin;
  using std::sqrt;
  if (plain(theta_sq) < kSmallAngle * kSmallAngle) {
    A = 1.0 - theta_sq / 6.0 + theta_sq * theta_sq / 120.0;
    B = 0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0;
    return;
  }
  const S theta = sqrt(theta_sq);
  const S half_sin = sin(0.5 * theta);
  A = sin(theta) / theta;
  B = 2.0 * half_sin * half_sin / theta_sq;
}

// V = a I + b W + c W^2 with V = int_0^1 e^{s lambda} exp(s W) ds; for SE3
// (lambda = 0) this is the usual left Jacobian of SO(3).
template <class S>
void v_coeffs(const S& lambda, const S& theta_sq, bool with_scale, S& a, S& b,
              S& c) {
  using std::cos;
  using std::exp;
  using std::sin;
  using std::sqrt;
  const double l = plain(lambda);
  const double t2 = plain(theta_sq);
  if (!with_scale) {
    // Pure SE3 path; keeps lambda out of the expressions entirely.
    a = S(1.0);
    if (t2 < kSmallAngle * kSmallAngle) {
      b = 0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0;
      c = 1.0 / 6.0 - theta_sq / 120.0 + theta_sq * theta_sq / 5040.0;
    } else {
      const S theta = sqrt(theta_sq);
      const S half_sin = sin(0.5 * theta);
      b = 2.0 * half_sin * half_sin / theta_sq;
      c = (theta - sin(theta)) / (theta_sq * theta);
    }
    return;
  }
  if (l * l + t2 < 1e-2) {
    // Joint series in lambda and theta around the degenerate point.
    a = exp_moment(0, lambda);
    b = S(0.0);
    c = S(0.0);
    S tpow(1.0);
    double fact_odd = 1.0;   // (2j+1)!
    double fact_even = 2.0;  // (2j+2)!
    for (int j = 0; j < 5; ++j) {
      const double sign = (j % 2 == 0) ? 1.0 : -1.0;
      b += sign * tpow * exp_moment(2 * j + 1, lambda) / fact_odd;
      c += sign * tpow * exp_moment(2 * j + 2, lambda) / fact_even;
      tpow = tpow * theta_sq;
      fact_odd *= double((2 * j + 2) * (2 * j + 3));
      fact_even *= double((2 * j + 3) * (2 * j + 4));
    }
    return;
  }
  if (t2 < kSmallAngle * kSmallAngle) {
    a = exp_moment(0, lambda);
    b = exp_moment(1, lambda) - theta_sq * exp_moment(3, lambda) / 6.0;
    c = exp_moment(2, lambda) / 2.0 - theta_sq * exp_moment(4, lambda) / 24.0;
    return;
  }
  const S theta = sqrt(theta_sq);
  const S el = exp(lambda);
  const S st = sin(theta);
  const S ct = cos(theta);
  const S r2 = lambda * lambda + theta_sq;
  a = exp_moment(0, lambda);
  b = (el * (lambda * st - theta * ct) + theta) / (theta * r2);
  const S int_cos = (el * (lambda * ct + theta * st) - lambda) / r2;
  c = (a - int_cos) / theta_sq;
}

// Coefficients of V^{-1} = ai I + bi W + ci W^2 given V = a I + b W + c W^2,
// using W^3 = -theta^2 W.
template <class S>
void v_inverse_coeffs(const S& a, const S& b, const S& c, const S& theta_sq,
                      S& ai, S& bi, S& ci) {
  ai = 1.0 / a;
  const S p = a - theta_sq * c;
  const S d = p * p + theta_sq * b * b;
  bi = -ai * b * a / d;
  ci = ai * (b * b - c * p) / d;
}

}  // namespace detail

/// Closed-form exponential of the algebra element with coordinates a[0..k).
template <class S>
Mat4T<S> exp_coeffs(GroupKind kind, const S* a) {
  Mat4T<S> M = Mat4T<S>::Identity();
  const Vec3T<S> t(a[0], a[1], a[2]);
  if (kind == GroupKind::T3) {
    M.template block<3, 1>(0, 3) = t;
    return M;
  }
  const Mat3T<S> W = detail::skew(a[3], a[4], a[5]);
  const Mat3T<S> W2 = W * W;
  const S theta_sq = a[3] * a[3] + a[4] * a[4] + a[5] * a[5];
  S A, B;
  detail::rotation_coeffs(theta_sq, A, B);
  Mat3T<S> R = Mat3T<S>::Identity() + A * W + B * W2;
  const S lambda = (kind == GroupKind::SIM3) ? a[6] : S(0.0);
  S va, vb, vc;
  detail::v_coeffs(lambda, theta_sq, kind == GroupKind::SIM3, va, vb, vc);
  const Mat3T<S> V = va * Mat3T<S>::Identity() + vb * W + vc * W2;
  if (kind == GroupKind::SIM3) {
    using std::exp;
    R *= exp(lambda);
  }
  M.template block<3, 3>(0, 0) = R;
  M.template block<3, 1>(0, 3) = V * t;
  return M;
}

/// Principal logarithm; writes algebra_dim(kind) coordinates to out.
/// Throws ErrorKind::LogDomain when the rotation angle reaches pi.
template <class S>
void log_coeffs(GroupKind kind, const Mat4T<S>& M, S* out) {
  using std::atan2;
  using std::exp;
  using std::log;
  using std::sqrt;
  const Vec3T<S> u = M.template block<3, 1>(0, 3);
  if (kind == GroupKind::T3) {
    out[0] = u[0];
    out[1] = u[1];
    out[2] = u[2];
    return;
  }
  Mat3T<S> R = M.template block<3, 3>(0, 0);
  S lambda(0.0);
  if (kind == GroupKind::SIM3) {
    const S det = R.determinant();
    if (!(detail::plain(det) > 0.0)) {
      throw Error(ErrorKind::LogDomain, "SIM3 log: non-positive scale");
    }
    lambda = log(det) / 3.0;
    R *= 1.0 / exp(lambda);
  }
  const Vec3T<S> v(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));
  const S s_sq = 0.25 * v.squaredNorm();  // sin^2(theta)
  const S cos_t = 0.5 * (R.trace() - 1.0);
  S factor;  // theta / (2 sin theta)
  S theta_sq;
  if (detail::plain(s_sq) < 1e-6 && detail::plain(cos_t) > 0.0) {
    factor = 0.5 * (1.0 + s_sq / 6.0 + 3.0 * s_sq * s_sq / 40.0 +
                    5.0 * s_sq * s_sq * s_sq / 112.0);
    const S asin_s = 2.0 * factor;  // asin(s)/s
    theta_sq = asin_s * asin_s * s_sq;
  } else {
    const S s = sqrt(s_sq);
    const S theta = atan2(s, cos_t);
    if (detail::plain(theta) >= kLogAngleLimit) {
      throw Error(ErrorKind::LogDomain,
                  "rotation angle too close to pi for the principal logarithm");
    }
    factor = theta / (2.0 * s);
    theta_sq = theta * theta;
  }
  const Vec3T<S> w = factor * v;
  const Mat3T<S> W = detail::skew(w[0], w[1], w[2]);
  S va, vb, vc, ia, ib, ic;
  detail::v_coeffs(lambda, theta_sq, kind == GroupKind::SIM3, va, vb, vc);
  detail::v_inverse_coeffs(va, vb, vc, theta_sq, ia, ib, ic);
  const Vec3T<S> t = ia * u + ib * (W * u) + ic * (W * (W * u));
  out[0] = t[0];
  out[1] = t[1];
  out[2] = t[2];
  out[3] = w[0];
  out[4] = w[1];
  out[5] = w[2];
  if (kind == GroupKind::SIM3) out[6] = lambda;
}

/// Applies M to the homogeneous point (x, 1) and drops the last component.
template <class S>
Vec3T<S> apply_homogeneous(const Mat4T<S>& M, const Vec3& x) {
  return M.template block<3, 3>(0, 0) * x.cast<S>() + M.template block<3, 1>(0, 3);
}

}  // namespace groupflow
