#include "groupflow/loss.hpp"

#include <cmath>
#include <string>

#include <Eigen/Geometry>

#include "groupflow/parallel.hpp"

namespace groupflow {

void LossConfig::validate() const {
  if (!(ncc_eps > 0.0) || !(fold_eps > 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "loss: ncc_eps and fold_eps must be positive");
  }
  if (!(fold_weight >= 0.0) || !(grad_weight >= 0.0) || !(hess_weight >= 0.0)) {
    throw Error(ErrorKind::InvalidArgument, "loss: weights must be non-negative");
  }
}

NccResult ncc_loss(const Volume& R, const Volume& T, double eps, const std::vector<std::uint8_t>* mask) {
  require_same_geometry(R.geom, T.geom, "ncc_loss");
  const std::size_t n = R.data.size();
  if (mask && mask->size() != n) throw Error(ErrorKind::DimensionMismatch, "ncc_loss: mask size");
  auto inside = [&](std::size_t i) { return !mask || (*mask)[i] != 0; };

  double count = 0.0;
  double sum_r = 0.0;
  double sum_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!inside(i)) continue;
    count += 1.0;
    sum_r += R.data[i];
    sum_t += T.data[i];
  }
  NccResult out;
  out.grad.assign(n, 0.0);
  if (count == 0.0) throw Error(ErrorKind::InvalidArgument, "ncc_loss: empty mask");
  const double mr = sum_r / count;
  const double mt = sum_t / count;
  double S = 0.0;
  double A = 0.0;
  double B = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!inside(i)) continue;
    const double dt = T.data[i] - mt;
    const double dr = R.data[i] - mr;
    S += dt * dr;
    A += dt * dt;
    B += dr * dr;
  }
  S /= count;
  A /= count;
  B /= count;
  const double D = A * B + eps;
  const double root = std::sqrt(D);
  out.value = 1.0 - S / root;
  // d/dt_i of -S/sqrt(D): dS = dr_i/N, dA = 2 dt_i/N (mean terms cancel).
  const double cs = -1.0 / (root * count);
  const double ca = S * B / (D * root * count);
  for (std::size_t i = 0; i < n; ++i) {
    if (!inside(i)) continue;
    out.grad[i] = cs * (R.data[i] - mr) + ca * (T.data[i] - mt);
  }
  return out;
}

namespace {

// Corner c of a cell has offset (c & 1, (c >> 1) & 1, (c >> 2) & 1).
// Vertex orderings give positive volume on the undeformed cell.
constexpr int kTetra[5][4] = {
    {1, 2, 4, 7},  // inner
    {0, 1, 2, 4},
    {3, 2, 1, 7},
    {5, 1, 4, 7},
    {6, 4, 2, 7},
};

void require_cells(const GridGeometry& g, const char* what) {
  for (int a = 0; a < 3; ++a) {
    if (g.dims[a] < 2) throw Error(ErrorKind::InvalidArgument, std::string(what) + ": need at least 2 voxels per axis");
  }
}

std::size_t cell_count(const GridGeometry& g) {
  return std::size_t(g.dims[0] - 1) * std::size_t(g.dims[1] - 1) * std::size_t(g.dims[2] - 1);
}

struct CellCorners {
  std::array<std::size_t, 8> index;
  std::array<Vec3, 8> point;  // deformed positions
};

CellCorners cell_corners(const DispField& phi, std::size_t cell) {
  const auto& g = phi.geom;
  const int cx = g.dims[0] - 1;
  const int cy = g.dims[1] - 1;
  const int i = int(cell % std::size_t(cx));
  const int j = int((cell / std::size_t(cx)) % std::size_t(cy));
  const int k = int(cell / (std::size_t(cx) * std::size_t(cy)));
  CellCorners out;
  for (int c = 0; c < 8; ++c) {
    const int ii = i + (c & 1);
    const int jj = j + ((c >> 1) & 1);
    const int kk = k + ((c >> 2) & 1);
    out.index[c] = g.index(ii, jj, kk);
    out.point[c] = g.center(ii, jj, kk) + phi.data[out.index[c]];
  }
  return out;
}

double raw_det(const Vec3& p0, const Vec3& p1, const Vec3& p2, const Vec3& p3) {
  return (p1 - p0).dot((p2 - p0).cross(p3 - p0));
}

double cell_volume(const GridGeometry& g) { return g.spacing(0) * g.spacing(1) * g.spacing(2); }

}  // namespace

std::vector<double> tetra_determinants(const DispField& phi) {
  require_cells(phi.geom, "tetra_determinants");
  const std::size_t cells = cell_count(phi.geom);
  const double V = cell_volume(phi.geom);
  std::vector<double> out(cells * 5);
  parallel_for(cells, [&](std::size_t cell) {
    const auto cc = cell_corners(phi, cell);
    for (int t = 0; t < 5; ++t) {
      const auto& q = kTetra[t];
      const double ref = t == 0 ? 2.0 * V : V;
      out[cell * 5 + std::size_t(t)] = raw_det(cc.point[q[0]], cc.point[q[1]], cc.point[q[2]], cc.point[q[3]]) / ref;
    }
  });
  return out;
}

std::vector<double> cell_determinants(const DispField& phi) {
  const auto t = tetra_determinants(phi);
  std::vector<double> out(t.size() / 5);
  for (std::size_t c = 0; c < out.size(); ++c) {
    const double* d = t.data() + 5 * c;
    out[c] = d[0] / 3.0 + (d[1] + d[2] + d[3] + d[4]) / 6.0;
  }
  return out;
}

FieldLoss folding_penalty(const DispField& phi, double eps) {
  const auto& g = phi.geom;
  require_cells(g, "folding_penalty");
  const std::size_t cells = cell_count(g);
  const double V = cell_volume(g);
  const double scale = g.volume() / double(cells);
  FieldLoss out;
  out.grad.assign(g.size(), Vec3::Zero());
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const auto cc = cell_corners(phi, cell);
    // det of the cell = sum of raw tetra determinants / (6 V)
    double det = 0.0;
    for (const auto& q : kTetra) det += raw_det(cc.point[q[0]], cc.point[q[1]], cc.point[q[2]], cc.point[q[3]]);
    det /= 6.0 * V;
    const double hinge = eps - det;
    if (!(hinge > 0.0)) continue;
    out.value += scale * hinge;
    const double c = -scale / (6.0 * V);
    for (const auto& q : kTetra) {
      const Vec3 a = cc.point[q[1]] - cc.point[q[0]];
      const Vec3 b = cc.point[q[2]] - cc.point[q[0]];
      const Vec3 d = cc.point[q[3]] - cc.point[q[0]];
      const Vec3 g1 = b.cross(d);
      const Vec3 g2 = d.cross(a);
      const Vec3 g3 = a.cross(b);
      out.grad[cc.index[q[1]]] += c * g1;
      out.grad[cc.index[q[2]]] += c * g2;
      out.grad[cc.index[q[3]]] += c * g3;
      out.grad[cc.index[q[0]]] -= c * (g1 + g2 + g3);
    }
  }
  return out;
}

FieldLoss gradient_reg(const DispField& phi) {
  const auto& g = phi.geom;
  require_cells(g, "gradient_reg");
  const std::size_t cells = cell_count(g);
  const double scale = g.volume() / double(cells);
  FieldLoss out;
  out.grad.assign(g.size(), Vec3::Zero());
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const auto cc = cell_corners(phi, cell);
    for (int a = 0; a < 3; ++a) {
      const double h = g.spacing(a);
      const double c = 0.25 * scale / (h * h);
      const int bit = 1 << a;
      for (int lo = 0; lo < 8; ++lo) {
        if (lo & bit) continue;
        const std::size_t il = cc.index[lo];
        const std::size_t ih = cc.index[lo | bit];
        const Vec3 d = phi.data[ih] - phi.data[il];
        out.value += c * d.squaredNorm();
        out.grad[ih] += 2.0 * c * d;
        out.grad[il] -= 2.0 * c * d;
      }
    }
  }
  return out;
}

namespace {

struct Tap {
  int offset;  // absolute coordinate along the axis
  double coeff;
};

// First difference along one axis: central inside, one-sided at faces.
int first_diff(int c, int n, double h, Tap* taps) {
  if (n < 2) return 0;
  if (c == 0) {
    taps[0] = {1, 1.0 / h};
    taps[1] = {0, -1.0 / h};
  } else if (c == n - 1) {
    taps[0] = {n - 1, 1.0 / h};
    taps[1] = {n - 2, -1.0 / h};
  } else {
    taps[0] = {c + 1, 0.5 / h};
    taps[1] = {c - 1, -0.5 / h};
  }
  return 2;
}

// Second difference: central inside, three-point one-sided at faces.
int second_diff(int c, int n, double h, Tap* taps) {
  if (n < 3) return 0;
  const int start = c == 0 ? 0 : (c == n - 1 ? n - 3 : c - 1);
  const double ih2 = 1.0 / (h * h);
  taps[0] = {start, ih2};
  taps[1] = {start + 1, -2.0 * ih2};
  taps[2] = {start + 2, ih2};
  return 3;
}

}  // namespace

FieldLoss hessian_reg(const DispField& phi) {
  const auto& g = phi.geom;
  const double scale = g.volume() / double(g.size());
  FieldLoss out;
  out.grad.assign(g.size(), Vec3::Zero());
  struct Entry {
    std::size_t index;
    double coeff;
  };
  for (std::size_t idx = 0; idx < g.size(); ++idx) {
    const auto c = g.ijk(idx);
    auto apply = [&](const Entry* e, int n, double weight) {
      Vec3 s = Vec3::Zero();
      for (int t = 0; t < n; ++t) s += e[t].coeff * phi.data[e[t].index];
      out.value += scale * weight * s.squaredNorm();
      for (int t = 0; t < n; ++t) out.grad[e[t].index] += (2.0 * scale * weight * e[t].coeff) * s;
    };
    for (int a = 0; a < 3; ++a) {
      Tap taps[3];
      const int n = second_diff(c[a], g.dims[a], g.spacing(a), taps);
      Entry e[3];
      for (int t = 0; t < n; ++t) {
        auto p = c;
        p[a] = taps[t].offset;
        e[t] = {g.index(p[0], p[1], p[2]), taps[t].coeff};
      }
      apply(e, n, 1.0);
    }
    for (int a = 0; a < 3; ++a) {
      for (int b = a + 1; b < 3; ++b) {
        Tap tb[2];
        const int nb = first_diff(c[b], g.dims[b], g.spacing(b), tb);
        Entry e[4];
        int n = 0;
        for (int s = 0; s < nb; ++s) {
          auto p = c;
          p[b] = tb[s].offset;
          Tap ta[2];
          const int na = first_diff(p[a], g.dims[a], g.spacing(a), ta);
          for (int t = 0; t < na; ++t) {
            auto q = p;
            q[a] = ta[t].offset;
            e[n++] = {g.index(q[0], q[1], q[2]), tb[s].coeff * ta[t].coeff};
          }
        }
        apply(e, n, 2.0);
      }
    }
  }
  return out;
}

DirectionalLoss directional_loss(const Volume& fixed, const Volume& moving, const DispField& phi,
                                 const LossConfig& cfg) {
  require_same_geometry(fixed.geom, moving.geom, "directional_loss");
  require_same_geometry(fixed.geom, phi.geom, "directional_loss");
  const auto warp = warp_volume_with_gradient(moving, phi);
  const auto* mask = fixed.mask ? &*fixed.mask : nullptr;
  const auto ncc = ncc_loss(fixed, warp.warped, cfg.ncc_eps, mask);
  DirectionalLoss out;
  out.grad.resize(phi.data.size());
  for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] = ncc.grad[i] * warp.gradient[i];
  out.parts.similarity = ncc.value;
  auto add = [&](double weight, const FieldLoss& term, double& slot) {
    slot = term.value;
    for (std::size_t i = 0; i < out.grad.size(); ++i) out.grad[i] += weight * term.grad[i];
  };
  if (cfg.fold_weight > 0.0) add(cfg.fold_weight, folding_penalty(phi, cfg.fold_eps), out.parts.folding);
  if (cfg.grad_weight > 0.0) add(cfg.grad_weight, gradient_reg(phi), out.parts.gradient);
  if (cfg.hess_weight > 0.0) add(cfg.hess_weight, hessian_reg(phi), out.parts.hessian);
  out.parts.total = out.parts.similarity + cfg.fold_weight * out.parts.folding +
                    cfg.grad_weight * out.parts.gradient + cfg.hess_weight * out.parts.hessian;
  return out;
}

ObjectiveResult objective(const Volume& I1, const Volume& I2, const DispField& phi,
                          const DispField* phi_inv, const LossConfig& cfg) {
  cfg.validate();
  ObjectiveResult out;
  auto fwd = directional_loss(I1, I2, phi, cfg);
  out.forward = fwd.parts;
  if (!cfg.bidirectional) {
    out.value = fwd.parts.total;
    out.grad_phi = std::move(fwd.grad);
    return out;
  }
  if (!phi_inv) throw Error(ErrorKind::InvalidArgument, "bidirectional objective needs the inverse deformation");
  auto bwd = directional_loss(I2, I1, *phi_inv, cfg);
  out.backward = bwd.parts;
  out.value = 0.5 * (fwd.parts.total + bwd.parts.total);
  out.grad_phi = std::move(fwd.grad);
  out.grad_phi_inv = std::move(bwd.grad);
  for (auto& g : out.grad_phi) g *= 0.5;
  for (auto& g : out.grad_phi_inv) g *= 0.5;
  return out;
}

FieldLoss displacement_mse(const DispField& phi, const DispField& target, const std::vector<std::uint8_t>* mask) {
  require_same_geometry(phi.geom, target.geom, "displacement_mse");
  const auto& g = phi.geom;
  if (mask && mask->size() != g.size()) throw Error(ErrorKind::DimensionMismatch, "displacement_mse: mask size");
  double count = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) count += (!mask || (*mask)[i]) ? 1.0 : 0.0;
  if (count == 0.0) throw Error(ErrorKind::InvalidArgument, "displacement_mse: empty mask");
  const Vec3 h = g.spacing();
  FieldLoss out;
  out.grad.assign(g.size(), Vec3::Zero());
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    const Vec3 d = (phi.data[i] - target.data[i]).cwiseQuotient(h);
    out.value += d.squaredNorm() / count;
    out.grad[i] = (2.0 / count) * d.cwiseQuotient(h);
  }
  return out;
}

}  // namespace groupflow
