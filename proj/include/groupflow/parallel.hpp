#pragma once

#include <cstddef>

namespace groupflow {

/// Worker count for voxel kernels; capped by GROUPFLOW_THREADS when set.
int kernel_threads();

/// Runs body(i) for i in [0, n). Iterations must write disjoint outputs; the
/// static partition keeps results independent of the thread count.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
#ifdef _OPENMP
  const long long count = static_cast<long long>(n);
#pragma omp parallel for schedule(static) num_threads(kernel_threads())
  for (long long i = 0; i < count; ++i) body(static_cast<std::size_t>(i));
#else
  for (std::size_t i = 0; i < n; ++i) body(i);
#endif
}

}  // namespace groupflow
