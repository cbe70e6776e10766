#pragma once

#include <cstddef>
#include <exception>
#include <mutex>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace qflow {

/// Cap the worker count used by library loops; n <= 0 keeps the default.
inline void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

/// Run fn(i) for i in [0, n) across threads. The first exception thrown by any
/// iteration is rethrown on the calling thread after the loop finishes.
template <class Fn>
void parallel_for(size_t n, Fn&& fn) {
  std::exception_ptr err;
  std::mutex mu;
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    try {
      fn(static_cast<size_t>(i));
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

}  // namespace qflow
