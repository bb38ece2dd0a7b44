#pragma once

#include <string>
#include <vector>

namespace groupflow {

struct SuiteResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

/// Quick oracle suites: exp/log against the series, gradient checks of the
/// full chain, decomposition residual and loss kernels.
std::vector<SuiteResult> run_selftest(unsigned seed = 1);

}  // namespace groupflow
