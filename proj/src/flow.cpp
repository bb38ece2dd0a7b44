#include "groupflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include <ceres/jet.h>

#include "groupflow/parallel.hpp"

namespace groupflow {

namespace {

constexpr int kSquaringJetDim = 2 * kMaxAlgebraDim;
using SquaringJet = ceres::Jet<double, kSquaringJetDim>;
using PointJet = ceres::Jet<double, kMaxAlgebraDim>;

void require_group(const LieCoeffField& v, GroupKind kind) {
  if (v.group != kind) {
    throw Error(ErrorKind::InvalidArgument, std::string("velocity field group ") +
                                                std::string(to_string(v.group)) +
                                                " does not match flow group " +
                                                std::string(to_string(kind)));
  }
}

Mat4 mat4_from(const double* a, GroupKind kind) { return exp_coeffs<double>(kind, a); }

// log(exp(a) * exp(b)) together with its Jacobians in a and b and the
// Jacobian of the sample point P exp(b) xbar in b.
struct SquaringLocal {
  Eigen::Matrix<double, kMaxAlgebraDim, kMaxAlgebraDim> d_interp;
  Eigen::Matrix<double, kMaxAlgebraDim, kMaxAlgebraDim> d_self;
  Eigen::Matrix<double, 3, kMaxAlgebraDim> d_point;
};

void squaring_local(GroupKind kind, const double* interp, const double* self, const Vec3& x,
                    SquaringLocal& out) {
  const int k = algebra_dim(kind);
  SquaringJet a[kMaxAlgebraDim];
  SquaringJet b[kMaxAlgebraDim];
  for (int i = 0; i < k; ++i) {
    a[i] = SquaringJet(interp[i], i);
    b[i] = SquaringJet(self[i], k + i);
  }
  const Mat4T<SquaringJet> Mb = exp_coeffs<SquaringJet>(kind, b);
  const Mat4T<SquaringJet> Ma = exp_coeffs<SquaringJet>(kind, a);
  const Mat4T<SquaringJet> prod = Ma * Mb;
  SquaringJet next[kMaxAlgebraDim];
  log_coeffs<SquaringJet>(kind, prod, next);
  const Vec3T<SquaringJet> y = apply_homogeneous<SquaringJet>(Mb, x);
  for (int r = 0; r < k; ++r) {
    for (int c = 0; c < k; ++c) {
      out.d_interp(r, c) = next[r].v[c];
      out.d_self(r, c) = next[r].v[k + c];
    }
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < k; ++c) out.d_point(r, c) = y[r].v[k + c];
  }
}

// One squaring step: computes nu_{j+1} from nu_j.
void squaring_step(const LieCoeffField& cur, LieCoeffField& next) {
  const GroupKind kind = cur.group;
  const int k = cur.channels();
  const auto& g = cur.geom;
  parallel_for(g.size(), [&](std::size_t i) {
    const double* self = cur.at(i);
    const Vec3 x = g.center(i);
    double interp[kMaxAlgebraDim];
    double* dst = next.at(i);
    if (kind == GroupKind::T3) {
      const Vec3 y = x + Vec3(self[0], self[1], self[2]);
      sample_trilinear(cur, y, interp);
      for (int c = 0; c < k; ++c) dst[c] = interp[c] + self[c];
      return;
    }
    const Mat4 M = mat4_from(self, kind);
    const Vec3 y = apply_homogeneous<double>(M, x);
    sample_trilinear(cur, y, interp);
    const Mat4 prod = mat4_from(interp, kind) * M;
    try {
      log_coeffs<double>(kind, prod, dst);
    } catch (const Error&) {
      dst[0] = std::numeric_limits<double>::quiet_NaN();
    }
  });
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (std::isnan(next.at(i)[0])) {
      throw Error(ErrorKind::LogDomain,
                  "scaling and squaring: rotation reached pi during squaring; reduce the "
                  "post-scaling factor or increase the number of squarings");
    }
  }
}

}  // namespace

void FlowConfig::validate() const {
  if (n_squarings < 0 || n_squarings > 24) {
    throw Error(ErrorKind::InvalidArgument, "n_squarings must lie in [0, 24]");
  }
}

FlowTape integrate_velocity(const LieCoeffField& v, int n_squarings, bool keep_stages) {
  FlowConfig{n_squarings, v.group}.validate();
  FlowTape tape;
  LieCoeffField cur = v;
  const double scale = std::ldexp(1.0, -n_squarings);
  for (double& c : cur.data) c *= scale;
  for (int j = 0; j < n_squarings; ++j) {
    LieCoeffField next(v.geom, v.group);
    squaring_step(cur, next);
    if (keep_stages) tape.stages.push_back(std::move(cur));
    cur = std::move(next);
  }
  tape.stages.push_back(std::move(cur));
  return tape;
}

LieCoeffField integrate_velocity_backward(const FlowTape& tape, const LieCoeffField& grad_final) {
  const int n = tape.n_squarings();
  if (n > 0 && tape.stages.size() != std::size_t(n) + 1) {
    throw Error(ErrorKind::InvalidArgument, "flow tape was recorded without stages");
  }
  const auto& g = grad_final.geom;
  const GroupKind kind = grad_final.group;
  const int k = algebra_dim(kind);
  LieCoeffField upstream = grad_final;
  for (int j = n - 1; j >= 0; --j) {
    const LieCoeffField& cur = tape.stages[std::size_t(j)];
    LieCoeffField grad(g, kind);
    // Local Jacobians are independent per voxel; the scatter into the
    // interpolation corners is done serially afterwards.
    std::vector<double> grad_interp(g.size() * std::size_t(k));
    std::vector<Vec3> grad_point(g.size(), Vec3::Zero());
    std::vector<TrilinearStencil> stencils(g.size());
    parallel_for(g.size(), [&](std::size_t i) {
      const double* self = cur.at(i);
      const double* up = upstream.at(i);
      const Vec3 x = g.center(i);
      double* gi = grad_interp.data() + i * std::size_t(k);
      double* gs = grad.at(i);
      if (kind == GroupKind::T3) {
        const Vec3 y = x + Vec3(self[0], self[1], self[2]);
        stencils[i] = TrilinearStencil::at(g, y, true);
        for (int c = 0; c < k; ++c) {
          gi[c] = up[c];
          gs[c] = up[c];
        }
      } else {
        const Mat4 M = mat4_from(self, kind);
        const Vec3 y = apply_homogeneous<double>(M, x);
        stencils[i] = TrilinearStencil::at(g, y, true);
        double interp[kMaxAlgebraDim] = {};
        for (int c = 0; c < 8; ++c) {
          const double* src = cur.at(stencils[i].index[c]);
          for (int ch = 0; ch < k; ++ch) interp[ch] += stencils[i].weight[c] * src[ch];
        }
        SquaringLocal local;
        squaring_local(kind, interp, self, x, local);
        for (int c = 0; c < k; ++c) {
          double sa = 0.0;
          double sb = 0.0;
          for (int r = 0; r < k; ++r) {
            sa += local.d_interp(r, c) * up[r];
            sb += local.d_self(r, c) * up[r];
          }
          gi[c] = sa;
          gs[c] = sb;
        }
      }
      // d interp / d y = sum_c dweight_c * nu_j(corner c)
      const auto& s = stencils[i];
      Vec3 gy = Vec3::Zero();
      for (int c = 0; c < 8; ++c) {
        const double* src = cur.at(s.index[c]);
        double dot = 0.0;
        for (int ch = 0; ch < k; ++ch) dot += src[ch] * gi[ch];
        gy += dot * s.dweight[c];
      }
      grad_point[i] = gy;
    });
    // Sample point y = P exp(nu_j(x)) xbar depends on nu_j(x).
    parallel_for(g.size(), [&](std::size_t i) {
      double* gs = grad.at(i);
      const Vec3& gy = grad_point[i];
      if (kind == GroupKind::T3) {
        for (int a = 0; a < 3; ++a) gs[a] += gy[a];
        return;
      }
      const double* self = cur.at(i);
      PointJet b[kMaxAlgebraDim];
      for (int c = 0; c < k; ++c) b[c] = PointJet(self[c], c);
      const Vec3T<PointJet> y = apply_homogeneous<PointJet>(exp_coeffs<PointJet>(kind, b), g.center(i));
      for (int c = 0; c < k; ++c) {
        gs[c] += y[0].v[c] * gy[0] + y[1].v[c] * gy[1] + y[2].v[c] * gy[2];
      }
    });
    for (std::size_t i = 0; i < g.size(); ++i) {
      const auto& s = stencils[i];
      const double* gi = grad_interp.data() + i * std::size_t(k);
      for (int c = 0; c < 8; ++c) {
        if (s.weight[c] == 0.0) continue;
        double* dst = grad.at(s.index[c]);
        for (int ch = 0; ch < k; ++ch) dst[ch] += s.weight[c] * gi[ch];
      }
    }
    upstream = std::move(grad);
  }
  const double scale = std::ldexp(1.0, -n);
  for (double& c : upstream.data) c *= scale;
  return upstream;
}

MatrixField scaling_and_squaring(const LieCoeffField& v, const FlowConfig& cfg) {
  require_group(v, cfg.group);
  return exp_field(integrate_velocity(v, cfg.n_squarings, false).final_log());
}

DispField classical_scaling_and_squaring(const LieCoeffField& v, const FlowConfig& cfg) {
  require_group(v, GroupKind::T3);
  cfg.validate();
  const auto& g = v.geom;
  DispField cur(g);
  const double scale = std::ldexp(1.0, -cfg.n_squarings);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double* a = v.at(i);
    cur.data[i] = scale * Vec3(a[0], a[1], a[2]);
  }
  for (int j = 0; j < cfg.n_squarings; ++j) {
    DispField next(g);
    parallel_for(g.size(), [&](std::size_t i) {
      const Vec3 y = g.center(i) + cur.data[i];
      next.data[i] = sample_trilinear(cur, y) + cur.data[i];
    });
    cur = std::move(next);
  }
  return cur;
}

namespace {

// Exponential scheme along the curve starting at x.
Mat4 integrate_point(const LieCoeffField& v, const Vec3& x, int steps, double dt) {
  const int k = v.channels();
  Mat4 M = Mat4::Identity();
  double c[kMaxAlgebraDim];
  for (int s = 0; s < steps; ++s) {
    sample_trilinear(v, apply_homogeneous<double>(M, x), c);
    for (int ch = 0; ch < k; ++ch) c[ch] *= dt;
    M = exp_coeffs<double>(v.group, c) * M;
  }
  return M;
}

}  // namespace

MatrixField exponential_scheme(const LieCoeffField& v, int steps, double T) {
  if (steps < 1 || !(T > 0.0)) throw Error(ErrorKind::InvalidArgument, "exponential_scheme: need steps >= 1 and T > 0");
  const double dt = T / steps;
  MatrixField out(v.geom, v.group);
  parallel_for(out.data.size(), [&](std::size_t i) { out.data[i] = integrate_point(v, v.geom.center(i), steps, dt); });
  return out;
}

MatrixField euler_scheme(const LieCoeffField& v, int steps, double T) {
  if (steps < 1 || !(T > 0.0)) throw Error(ErrorKind::InvalidArgument, "euler_scheme: need steps >= 1 and T > 0");
  const double dt = T / steps;
  const auto& desc = GroupDescriptor::get(v.group);
  const int k = v.channels();
  MatrixField out(v.geom, v.group);
  parallel_for(out.data.size(), [&](std::size_t i) {
    const Vec3 x = v.geom.center(i);
    Mat4 M = Mat4::Identity();
    AlgebraCoeffs c(k);
    for (int s = 0; s < steps; ++s) {
      sample_trilinear(v, apply_homogeneous<double>(M, x), c.data());
      M = M + dt * hat(desc, c) * M;
    }
    out.data[i] = M;
  });
  return out;
}

LieCoeffField invert_velocity(const LieCoeffField& v) {
  LieCoeffField out = v;
  for (double& c : out.data) c = -c;
  return out;
}

DispField displacement_from_log(const LieCoeffField& log_final, const GridGeometry& target) {
  DispField out(target);
  const bool same_grid = (target == log_final.geom);
  parallel_for(target.size(), [&](std::size_t i) {
    const Vec3 x = target.center(i);
    double c[kMaxAlgebraDim];
    if (same_grid) {
      const double* src = log_final.at(i);
      for (int ch = 0; ch < log_final.channels(); ++ch) c[ch] = src[ch];
    } else {
      sample_trilinear(log_final, x, c);
    }
    out.data[i] = apply_homogeneous<double>(exp_coeffs<double>(log_final.group, c), x) - x;
  });
  return out;
}

LieCoeffField displacement_from_log_backward(const LieCoeffField& log_final,
                                             const GridGeometry& target,
                                             const std::vector<Vec3>& grad_disp) {
  const GroupKind kind = log_final.group;
  const int k = log_final.channels();
  const bool same_grid = (target == log_final.geom);
  std::vector<double> grad_c(target.size() * std::size_t(k));
  parallel_for(target.size(), [&](std::size_t i) {
    const Vec3 x = target.center(i);
    double c[kMaxAlgebraDim];
    if (same_grid) {
      const double* src = log_final.at(i);
      for (int ch = 0; ch < k; ++ch) c[ch] = src[ch];
    } else {
      sample_trilinear(log_final, x, c);
    }
    double* gc = grad_c.data() + i * std::size_t(k);
    const Vec3& gd = grad_disp[i];
    if (kind == GroupKind::T3) {
      for (int a = 0; a < 3; ++a) gc[a] = gd[a];
      return;
    }
    PointJet cj[kMaxAlgebraDim];
    for (int ch = 0; ch < k; ++ch) cj[ch] = PointJet(c[ch], ch);
    const Vec3T<PointJet> y = apply_homogeneous<PointJet>(exp_coeffs<PointJet>(kind, cj), x);
    for (int ch = 0; ch < k; ++ch) gc[ch] = y[0].v[ch] * gd[0] + y[1].v[ch] * gd[1] + y[2].v[ch] * gd[2];
  });
  LieCoeffField grad(log_final.geom, kind);
  if (same_grid) {
    grad.data = std::move(grad_c);
    return grad;
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    const auto s = TrilinearStencil::at(log_final.geom, target.center(i));
    const double* gc = grad_c.data() + i * std::size_t(k);
    for (int c = 0; c < 8; ++c) {
      if (s.weight[c] == 0.0) continue;
      double* dst = grad.at(s.index[c]);
      for (int ch = 0; ch < k; ++ch) dst[ch] += s.weight[c] * gc[ch];
    }
  }
  return grad;
}

DispField compose_with_log_field(const LieCoeffField& log_a, const DispField& b) {
  DispField out(b.geom);
  parallel_for(b.geom.size(), [&](std::size_t i) {
    const Vec3 x = b.geom.center(i);
    const Vec3 y = x + b.data[i];
    double c[kMaxAlgebraDim];
    sample_trilinear(log_a, y, c);
    out.data[i] = apply_homogeneous<double>(exp_coeffs<double>(log_a.group, c), y) - x;
  });
  return out;
}

InverseConsistency forward_backward_error(const LieCoeffField& v, const FlowConfig& cfg) {
  require_group(v, cfg.group);
  const LieCoeffField log_fwd = integrate_velocity(v, cfg.n_squarings, false).final_log();
  const LieCoeffField log_bwd = integrate_velocity(invert_velocity(v), cfg.n_squarings, false).final_log();
  const DispField fwd = displacement_from_log(log_fwd, v.geom);
  const DispField bwd = displacement_from_log(log_bwd, v.geom);
  const DispField fb = compose_with_log_field(log_fwd, bwd);
  const DispField bf = compose_with_log_field(log_bwd, fwd);
  InverseConsistency out;
  for (std::size_t i = 0; i < v.geom.size(); ++i) {
    out.forward_backward += to_voxels(v.geom, fb.data[i]).norm();
    out.backward_forward += to_voxels(v.geom, bf.data[i]).norm();
  }
  out.forward_backward /= double(v.geom.size());
  out.backward_forward /= double(v.geom.size());
  return out;
}

double decomposition_residual(const LieCoeffField& v, double T, int steps) {
  if (steps < 1 || !(T > 0.0)) throw Error(ErrorKind::InvalidArgument, "decomposition_residual: need steps >= 1 and T > 0");
  std::vector<double> residual(v.geom.size());
  parallel_for(v.geom.size(), [&](std::size_t i) {
    const Vec3 x = v.geom.center(i);
    const Mat4 direct = integrate_point(v, x, steps, 2.0 * T / steps);
    const Mat4 half = integrate_point(v, x, steps, T / steps);
    // The outer factor starts off the grid; integrating it from there keeps
    // grid interpolation error out of the residual.
    const Mat4 outer = integrate_point(v, apply_homogeneous<double>(half, x), steps, T / steps);
    residual[i] = (direct - outer * half).norm();
  });
  double worst = 0.0;
  for (double r : residual) worst = std::max(worst, r);
  return worst;
}

}  // namespace groupflow
