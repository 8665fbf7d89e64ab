#include "ramoe/kernels.hpp"

#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ramoe::kernels {

namespace serial {

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
  std::memset(c, 0, m * n * sizeof(double));
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void transpose(const double* in, double* out, std::size_t m, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
}

void pairwise_sqdist(const double* a, double* d2, std::size_t n,
                     std::size_t d) {
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* aj = a + j * d;
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = ai[t] - aj[t];
        acc += diff * diff;
      }
      d2[i * n + j] = acc;
    }
  }
}

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    double* ci = c + i * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
}

void transpose(const double* in, double* out, std::size_t m, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
}

void pairwise_sqdist(const double* a, double* d2, std::size_t n,
                     std::size_t d) {
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < n; ++i) {
    const double* ai = a + i * d;
    for (std::size_t j = 0; j < n; ++j) {
      const double* aj = a + j * d;
      double acc = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = ai[t] - aj[t];
        acc += diff * diff;
      }
      d2[i * n + j] = acc;
    }
  }
}

}  // namespace parallel

bool openmp_enabled() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

namespace {
constexpr std::size_t kParallelWorkThreshold = 1u << 15;
}

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n) {
  if (openmp_enabled() && m * k * n >= kParallelWorkThreshold)
    parallel::matmul(a, b, c, m, k, n);
  else
    serial::matmul(a, b, c, m, k, n);
}

void transpose(const double* in, double* out, std::size_t m, std::size_t n) {
  if (openmp_enabled() && m * n >= kParallelWorkThreshold)
    parallel::transpose(in, out, m, n);
  else
    serial::transpose(in, out, m, n);
}

void pairwise_sqdist(const double* a, double* d2, std::size_t n,
                     std::size_t d) {
  if (openmp_enabled() && n * n * d >= kParallelWorkThreshold)
    parallel::pairwise_sqdist(a, d2, n, d);
  else
    serial::pairwise_sqdist(a, d2, n, d);
}

}  // namespace ramoe::kernels
