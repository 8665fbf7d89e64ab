#pragma once

#include <cstddef>

namespace ramoe::kernels {

// Dense row-major kernels. Each has a serial reference implementation and an
// OpenMP variant that partitions output elements across threads; both walk
// the accumulation in the same order per element, so outputs are bit-identical
// and independent of the thread count.

namespace serial {

// c[m×n] = a[m×k] * b[k×n]
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n);

// out[n×m] = in[m×n] transposed
void transpose(const double* in, double* out, std::size_t m, std::size_t n);

// d2[i,j] = sum_d (a[i,d] - a[j,d])^2, a is n×d
void pairwise_sqdist(const double* a, double* d2, std::size_t n, std::size_t d);

}  // namespace serial

namespace parallel {

void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n);
void transpose(const double* in, double* out, std::size_t m, std::size_t n);
void pairwise_sqdist(const double* a, double* d2, std::size_t n, std::size_t d);

}  // namespace parallel

// Dispatchers: use the OpenMP variant when it is available and the problem is
// large enough to be worth the fork/join.
void matmul(const double* a, const double* b, double* c, std::size_t m,
            std::size_t k, std::size_t n);
void transpose(const double* in, double* out, std::size_t m, std::size_t n);
void pairwise_sqdist(const double* a, double* d2, std::size_t n, std::size_t d);

bool openmp_enabled();
int max_threads();

}  // namespace ramoe::kernels
