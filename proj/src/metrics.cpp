#include "groupflow/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "groupflow/loss.hpp"

namespace groupflow {

double masked_rmse(const DispField& a, const DispField& b, const std::vector<std::uint8_t>* mask) {
  require_same_geometry(a.geom, b.geom, "masked_rmse");
  if (mask && mask->size() != a.data.size()) throw Error(ErrorKind::DimensionMismatch, "masked_rmse: mask size");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    if (mask && !(*mask)[i]) continue;
    sum += to_voxels(a.geom, a.data[i] - b.data[i]).squaredNorm();
    ++count;
  }
  if (count == 0) throw Error(ErrorKind::InvalidArgument, "masked_rmse: empty mask");
  return std::sqrt(sum / double(count));
}

DiceResult dice(const LabelVolume& A, const LabelVolume& B) {
  require_same_geometry(A.geom, B.geom, "dice");
  struct Counts {
    std::size_t a = 0, b = 0, both = 0;
  };
  std::map<int, Counts> counts;
  for (std::size_t i = 0; i < A.labels.size(); ++i) {
    const int la = A.labels[i];
    const int lb = B.labels[i];
    if (la != 0) ++counts[la].a;
    if (lb != 0) ++counts[lb].b;
    if (la != 0 && la == lb) ++counts[la].both;
  }
  DiceResult out;
  for (const auto& [label, c] : counts) {
    out.per_label[label] = 2.0 * double(c.both) / double(c.a + c.b);
  }
  if (!out.per_label.empty()) {
    double s = 0.0;
    for (const auto& [label, d] : out.per_label) s += d;
    out.mean = s / double(out.per_label.size());
  }
  return out;
}

namespace {

// Summed-volume table with a zero border: S(i, j, k) = sum over [0, i) x [0, j) x [0, k).
struct Integral {
  Dims d;
  std::vector<double> s;

  Integral(const Dims& dims, const std::vector<double>& v) : d(dims), s(std::size_t(dims[0] + 1) * (dims[1] + 1) * (dims[2] + 1), 0.0) {
    for (int k = 1; k <= d[2]; ++k) {
      for (int j = 1; j <= d[1]; ++j) {
        for (int i = 1; i <= d[0]; ++i) {
          const double x = v[std::size_t(i - 1) + std::size_t(d[0]) * (std::size_t(j - 1) + std::size_t(d[1]) * std::size_t(k - 1))];
          at(i, j, k) = x + at(i - 1, j, k) + at(i, j - 1, k) + at(i, j, k - 1) - at(i - 1, j - 1, k) -
                        at(i - 1, j, k - 1) - at(i, j - 1, k - 1) + at(i - 1, j - 1, k - 1);
        }
      }
    }
  }
  double& at(int i, int j, int k) { return s[std::size_t(i) + std::size_t(d[0] + 1) * (std::size_t(j) + std::size_t(d[1] + 1) * std::size_t(k))]; }
  double get(int i, int j, int k) const { return s[std::size_t(i) + std::size_t(d[0] + 1) * (std::size_t(j) + std::size_t(d[1] + 1) * std::size_t(k))]; }
  // sum over the box [i0, i1) x [j0, j1) x [k0, k1)
  double box(int i0, int j0, int k0, int i1, int j1, int k1) const {
    return get(i1, j1, k1) - get(i0, j1, k1) - get(i1, j0, k1) - get(i1, j1, k0) + get(i0, j0, k1) +
           get(i0, j1, k0) + get(i1, j0, k0) - get(i0, j0, k0);
  }
};

}  // namespace

double ssim(const Volume& a, const Volume& b) {
  require_same_geometry(a.geom, b.geom, "ssim");
  const Dims d = a.geom.dims;
  double lo = std::min(*std::min_element(a.data.begin(), a.data.end()), *std::min_element(b.data.begin(), b.data.end()));
  double hi = std::max(*std::max_element(a.data.begin(), a.data.end()), *std::max_element(b.data.begin(), b.data.end()));
  const double range = hi > lo ? hi - lo : 1.0;
  const std::size_t n = a.data.size();
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = (a.data[i] - lo) / range;
    y[i] = (b.data[i] - lo) / range;
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const Integral sx(d, x), sy(d, y), sxx(d, xx), syy(d, yy), sxy(d, xy);
  const int w[3] = {std::min(7, d[0]), std::min(7, d[1]), std::min(7, d[2])};
  const double count = double(w[0]) * w[1] * w[2];
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  double total = 0.0;
  std::size_t windows = 0;
  for (int k = 0; k + w[2] <= d[2]; ++k) {
    for (int j = 0; j + w[1] <= d[1]; ++j) {
      for (int i = 0; i + w[0] <= d[0]; ++i) {
        const int i1 = i + w[0], j1 = j + w[1], k1 = k + w[2];
        const double mx = sx.box(i, j, k, i1, j1, k1) / count;
        const double my = sy.box(i, j, k, i1, j1, k1) / count;
        const double vx = std::max(sxx.box(i, j, k, i1, j1, k1) / count - mx * mx, 0.0);
        const double vy = std::max(syy.box(i, j, k, i1, j1, k1) / count - my * my, 0.0);
        const double cxy = sxy.box(i, j, k, i1, j1, k1) / count - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++windows;
      }
    }
  }
  return total / double(windows);
}

double negdet_fraction(const DispField& phi, double threshold) {
  const auto dets = tetra_determinants(phi);
  std::size_t bad = 0;
  for (double v : dets) bad += v <= threshold ? 1 : 0;
  return double(bad) / double(dets.size());
}

namespace {

nlohmann::json dice_json(const DiceResult& d) {
  nlohmann::json j;
  j["mean"] = d.mean;
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [label, v] : d.per_label) per[std::to_string(label)] = v;
  j["per_label"] = per;
  return j;
}

std::string opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os.precision(17);
  os << *v;
  return os.str();
}

}  // namespace

std::string MetricsReport::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  if (rmse_voxels) j["rmse_voxels"] = *rmse_voxels;
  if (dice_forward) j["dice_forward"] = dice_json(*dice_forward);
  if (dice_backward) j["dice_backward"] = dice_json(*dice_backward);
  if (ssim) j["ssim"] = *ssim;
  if (negdet_fraction) j["negdet_fraction"] = *negdet_fraction;
  if (fb_error) j["fb_error"] = *fb_error;
  if (bf_error) j["bf_error"] = *bf_error;
  return j.dump(2);
}

std::string MetricsReport::csv_header() {
  return "name,rmse_voxels,dice_forward,dice_backward,ssim,negdet_fraction,fb_error,bf_error";
}

std::string MetricsReport::csv_row(const std::string& name) const {
  std::optional<double> df, db;
  if (dice_forward) df = dice_forward->mean;
  if (dice_backward) db = dice_backward->mean;
  return name + "," + opt(rmse_voxels) + "," + opt(df) + "," + opt(db) + "," + opt(ssim) + "," +
         opt(negdet_fraction) + "," + opt(fb_error) + "," + opt(bf_error);
}

}  // namespace groupflow
