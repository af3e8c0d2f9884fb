#pragma once

#include <cstddef>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace actg {

// Execution policy for the dual-path kernels. Every parallel kernel in the
// project has a serial reference path; tests assert the two agree exactly.
// Parallel paths only fan out work whose per-index computation is pure, and
// all floating-point reductions happen serially in fixed index order, so
// results are independent of thread count.
enum class Exec { serial, parallel };

inline int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

template <class F>
void parallel_for(std::size_t n, Exec exec, F&& fn) {
#ifdef _OPENMP
  if (exec == Exec::parallel && n > 1) {
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
      fn(static_cast<std::size_t>(i));
    }
    return;
  }
#else
  (void)exec;
#endif
  for (std::size_t i = 0; i < n; ++i) fn(i);
}

}  // namespace actg
