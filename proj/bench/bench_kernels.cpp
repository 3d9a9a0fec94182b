#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "vpa/kernels.hpp"
#include "vpa/rng.hpp"

namespace {

using clk = std::chrono::steady_clock;

double time_of(const std::function<void()>& fn, int reps) {
  fn();  // warm up
  const auto t0 = clk::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double>(clk::now() - t0).count() / reps;
}

}  // namespace

int main() {
  vpa::Rng rng(7);
  std::printf("%8s %12s %12s %8s\n", "n", "serial_ms", "parallel_ms",
              "speedup");
  for (int n : {64, 128, 256, 512, 1024}) {
    std::vector<double> a(static_cast<std::size_t>(n) * n),
        b(static_cast<std::size_t>(n) * n), c(static_cast<std::size_t>(n) * n);
    for (auto& v : a) v = rng.gauss();
    for (auto& v : b) v = rng.gauss();
    const int reps = n <= 256 ? 10 : 3;
    const double ts = time_of(
        [&] { vpa::kernels::serial::matmul(a.data(), b.data(), c.data(), n, n, n); },
        reps);
    const double tp = time_of(
        [&] { vpa::kernels::matmul(a.data(), b.data(), c.data(), n, n, n); },
        reps);
    std::printf("%8d %12.3f %12.3f %8.2f\n", n, ts * 1e3, tp * 1e3, ts / tp);
  }
  return 0;
}
