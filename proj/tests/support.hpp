#pragma once

#include <cmath>
#include <filesystem>
#include <random>
#include <string>

#include <unistd.h>

#include "groupflow/field.hpp"

namespace gft {

using namespace groupflow;

inline AlgebraCoeffs random_coeffs(GroupKind kind, std::mt19937_64& rng, double max_angle = M_PI - 0.1) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const int k = algebra_dim(kind);
  AlgebraCoeffs a(k);
  for (int i = 0; i < k; ++i) a[i] = u(rng);
  if (k >= 6) {
    Vec3 w(a[3], a[4], a[5]);
    w *= std::abs(u(rng)) * max_angle / w.norm();
    a.segment<3>(3) = w;
  }
  return a;
}

inline Volume smooth_volume(const GridGeometry& g, double phase = 0.0) {
  Volume v(g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec3 x = g.center(i);
    v.data[i] = std::sin(2.0 * x[0] + phase) * std::cos(1.5 * x[1]) + 0.5 * std::sin(2.5 * x[2] - phase) + 0.2 * x[0] * x[1];
  }
  return v;
}

inline DispField random_disp(const GridGeometry& g, std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  DispField d(g);
  for (auto& v : d.data) v = Vec3(u(rng), u(rng), u(rng));
  return d;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("groupflow_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace gft
