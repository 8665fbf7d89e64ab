// Times the serial reference kernels against the OpenMP variants and checks
// that both produce bit-identical output on the same inputs.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "ramoe/kernels.hpp"
#include "ramoe/rng.hpp"

namespace {

using Clock = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  auto t0 = Clock::now();
  for (int i = 0; i < reps; ++i) fn();
  auto t1 = Clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool identical(const std::vector<double>& a, const std::vector<double>& b) {
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void bench_matmul(ramoe::Rng& rng, std::size_t m, std::size_t k, std::size_t n,
                  int reps) {
  std::vector<double> a(m * k), b(k * n), cs(m * n), cp(m * n);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  const double ts = time_ms(
      [&] { ramoe::kernels::serial::matmul(a.data(), b.data(), cs.data(), m, k, n); },
      reps);
  const double tp = time_ms(
      [&] { ramoe::kernels::parallel::matmul(a.data(), b.data(), cp.data(), m, k, n); },
      reps);
  std::printf("matmul %4zux%-4zu x %4zux%-4zu  serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  identical %s\n",
              m, k, k, n, ts, tp, ts / tp, identical(cs, cp) ? "yes" : "NO");
}

void bench_sqdist(ramoe::Rng& rng, std::size_t n, std::size_t d, int reps) {
  std::vector<double> a(n * d), ds(n * n), dp(n * n);
  for (auto& v : a) v = rng.normal();
  const double ts = time_ms(
      [&] { ramoe::kernels::serial::pairwise_sqdist(a.data(), ds.data(), n, d); },
      reps);
  const double tp = time_ms(
      [&] { ramoe::kernels::parallel::pairwise_sqdist(a.data(), dp.data(), n, d); },
      reps);
  std::printf("sqdist %4zu pts dim %-4zu          serial %8.3f ms  parallel %8.3f ms  speedup %5.2fx  identical %s\n",
              n, d, ts, tp, ts / tp, identical(ds, dp) ? "yes" : "NO");
}

}  // namespace

int main() {
  std::printf("OpenMP: %s, max threads %d\n",
              ramoe::kernels::openmp_enabled() ? "enabled" : "disabled",
              ramoe::kernels::max_threads());
  ramoe::Rng rng(42);
  bench_matmul(rng, 64, 64, 64, 50);
  bench_matmul(rng, 256, 128, 256, 10);
  bench_matmul(rng, 512, 256, 512, 3);
  bench_sqdist(rng, 128, 64, 50);
  bench_sqdist(rng, 512, 64, 10);
  bench_sqdist(rng, 1024, 128, 3);
  return 0;
}
