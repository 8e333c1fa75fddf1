// Times the serial reference kernels against the OpenMP versions. The two
// must agree bitwise (the test suite asserts that); this only reports speed.

#include <chrono>
#include <cstdio>
#include <vector>

#include "grad/kernels.hpp"
#include "grad/rng.hpp"
#include "grad/tensor.hpp"

using grad::Tensor;
using clock_type = std::chrono::steady_clock;

namespace {

Tensor random_tensor(size_t r, size_t c, grad::Rng& rng) {
  Tensor t(r, c);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-1.0, 1.0);
  return t;
}

template <typename F>
double time_best_of(int reps, F&& f) {
  double best = 1e100;
  for (int i = 0; i < reps; ++i) {
    auto t0 = clock_type::now();
    f();
    double s = std::chrono::duration<double>(clock_type::now() - t0).count();
    if (s < best) best = s;
  }
  return best;
}

void report(const char* name, double serial_s, double parallel_s) {
  std::printf("%-28s %10.4fs %10.4fs %8.2fx\n", name, serial_s, parallel_s,
              serial_s / parallel_s);
}

}  // namespace

int main() {
  grad::Rng rng(7);
  std::printf("%-28s %11s %11s %9s\n", "kernel", "serial", "parallel", "speedup");

  {
    const size_t n = 384;
    Tensor a = random_tensor(n, n, rng), b = random_tensor(n, n, rng), c(n, n);
    grad::kernels::set_parallel(false);
    double s = time_best_of(3, [&] { grad::kernels::matmul(a.data(), b.data(), c.data(), n, n, n); });
    grad::kernels::set_parallel(true);
    double p = time_best_of(3, [&] { grad::kernels::matmul(a.data(), b.data(), c.data(), n, n, n); });
    report("matmul 384x384x384", s, p);
  }
  {
    const size_t rows = 4096, in = 96, out = 40;
    Tensor x = random_tensor(rows, in, rng), w = random_tensor(in, out, rng), y(rows, out);
    grad::kernels::set_parallel(false);
    double s = time_best_of(5, [&] { grad::kernels::matmul(x.data(), w.data(), y.data(), rows, in, out); });
    grad::kernels::set_parallel(true);
    double p = time_best_of(5, [&] { grad::kernels::matmul(x.data(), w.data(), y.data(), rows, in, out); });
    report("matmul 4096x96x40", s, p);
  }
  {
    const size_t n = 2000, d = 24, k = 5;
    Tensor x = random_tensor(n, d, rng);
    std::vector<uint32_t> idx(n * k);
    grad::kernels::set_parallel(false);
    double s = time_best_of(3, [&] { grad::kernels::knn(x.data(), n, d, k, idx.data()); });
    grad::kernels::set_parallel(true);
    double p = time_best_of(3, [&] { grad::kernels::knn(x.data(), n, d, k, idx.data()); });
    report("knn n=2000 d=24 k=5", s, p);
  }
  grad::kernels::set_parallel(true);
  return 0;
}
