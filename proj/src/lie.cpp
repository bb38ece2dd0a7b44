#include "groupflow/lie.hpp"

#include <Eigen/Dense>

namespace groupflow {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::DimensionMismatch: return "dimension-mismatch";
    case ErrorKind::LogDomain: return "log-domain";
    case ErrorKind::NonFinite: return "non-finite";
    case ErrorKind::InputNotFound: return "input-not-found";
    case ErrorKind::Format: return "format";
    case ErrorKind::Truncated: return "truncated";
    case ErrorKind::Checksum: return "checksum";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::Io: return "io";
  }
  return "unknown";
}

std::string_view to_string(GroupKind kind) {
  switch (kind) {
    case GroupKind::T3: return "t3";
    case GroupKind::SE3: return "se3";
    case GroupKind::SIM3: return "sim3";
  }
  return "?";
}

GroupKind parse_group_kind(std::string_view name) {
  if (name == "t3" || name == "T3" || name == "svf") return GroupKind::T3;
  if (name == "se3" || name == "SE3") return GroupKind::SE3;
  if (name == "sim3" || name == "SIM3") return GroupKind::SIM3;
  throw Error(ErrorKind::InvalidArgument, "unknown group '" + std::string(name) + "'");
}

namespace {

Mat4 hat_raw(GroupKind kind, const double* a) {
  Mat4 A = Mat4::Zero();
  A(0, 3) = a[0];
  A(1, 3) = a[1];
  A(2, 3) = a[2];
  if (kind == GroupKind::T3) return A;
  A.block<3, 3>(0, 0) = detail::skew(a[3], a[4], a[5]);
  if (kind == GroupKind::SIM3) A.block<3, 3>(0, 0) += a[6] * Mat3::Identity();
  return A;
}

GroupDescriptor make_descriptor(GroupKind kind) {
  GroupDescriptor g{kind, algebra_dim(kind), {}};
  for (auto& G : g.generators) G.setZero();
  for (int i = 0; i < g.algebra_dim; ++i) {
    double e[kMaxAlgebraDim] = {};
    e[i] = 1.0;
    g.generators[i] = hat_raw(kind, e);
  }
  return g;
}

void check_dim(const GroupDescriptor& g, const AlgebraCoeffs& a) {
  if (a.size() != g.algebra_dim) {
    throw Error(ErrorKind::DimensionMismatch,
                "expected " + std::to_string(g.algebra_dim) + " algebra coefficients, got " +
                    std::to_string(a.size()));
  }
}

}  // namespace

const GroupDescriptor& GroupDescriptor::get(GroupKind kind) {
  static const GroupDescriptor t3 = make_descriptor(GroupKind::T3);
  static const GroupDescriptor se3 = make_descriptor(GroupKind::SE3);
  static const GroupDescriptor sim3 = make_descriptor(GroupKind::SIM3);
  switch (kind) {
    case GroupKind::T3: return t3;
    case GroupKind::SE3: return se3;
    case GroupKind::SIM3: return sim3;
  }
  return t3;
}

Mat4 hat(const GroupDescriptor& g, const AlgebraCoeffs& a) {
  check_dim(g, a);
  Mat4 A = Mat4::Zero();
  for (int i = 0; i < g.algebra_dim; ++i) A += a[i] * g.generators[i];
  return A;
}

AlgebraCoeffs vee(const GroupDescriptor& g, const Mat4& A) {
  AlgebraCoeffs a(g.algebra_dim);
  a[0] = A(0, 3);
  a[1] = A(1, 3);
  a[2] = A(2, 3);
  if (g.kind != GroupKind::T3) {
    a[3] = 0.5 * (A(2, 1) - A(1, 2));
    a[4] = 0.5 * (A(0, 2) - A(2, 0));
    a[5] = 0.5 * (A(1, 0) - A(0, 1));
  }
  if (g.kind == GroupKind::SIM3) a[6] = A.block<3, 3>(0, 0).trace() / 3.0;
  const double residual = (hat(g, a) - A).norm();
  if (!(residual <= 1e-9 * (1.0 + A.norm()))) {
    throw Error(ErrorKind::InvalidArgument, "matrix is not in the span of the " +
                                                std::string(to_string(g.kind)) +
                                                " algebra generators");
  }
  return a;
}

Mat4 exp_group(const GroupDescriptor& g, const AlgebraCoeffs& a) {
  check_dim(g, a);
  if (!a.allFinite()) throw Error(ErrorKind::NonFinite, "exp_group: non-finite coefficients");
  return exp_coeffs<double>(g.kind, a.data());
}

AlgebraCoeffs log_group(const GroupDescriptor& g, const Mat4& M) {
  AlgebraCoeffs a(g.algebra_dim);
  log_coeffs<double>(g.kind, M, a.data());
  return a;
}

Mat4 exp_series_oracle(const Mat4& A, int terms) {
  if (terms < 1) throw Error(ErrorKind::InvalidArgument, "exp_series_oracle: terms must be >= 1");
  Mat4 sum = Mat4::Identity();
  Mat4 term = Mat4::Identity();
  for (int i = 1; i <= terms; ++i) {
    term = term * A / double(i);
    sum += term;
  }
  return sum;
}

bool is_group_element(GroupKind kind, const Mat4& M, double tol) {
  if (!M.allFinite()) return false;
  if (M(3, 0) != 0.0 || M(3, 1) != 0.0 || M(3, 2) != 0.0 || M(3, 3) != 1.0) return false;
  const Mat3 L = M.block<3, 3>(0, 0);
  switch (kind) {
    case GroupKind::T3:
      return (L - Mat3::Identity()).norm() <= tol;
    case GroupKind::SE3:
      return (L.transpose() * L - Mat3::Identity()).norm() <= tol &&
             std::abs(L.determinant() - 1.0) <= tol;
    case GroupKind::SIM3: {
      const double det = L.determinant();
      if (!(det > 0.0)) return false;
      const double s = std::cbrt(det);
      const Mat3 R = L / s;
      return (R.transpose() * R - Mat3::Identity()).norm() <= tol;
    }
  }
  return false;
}

}  // namespace groupflow
