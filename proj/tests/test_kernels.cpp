#include <cstring>
#include <vector>

#include "doctest.h"
#include "grad/kernels.hpp"
#include "grad/rng.hpp"
#include "grad/tensor.hpp"
#include "oracles.hpp"

using grad::Rng;
using grad::Tensor;
namespace k = grad::kernels;

namespace {

Tensor random_tensor(size_t r, size_t c, Rng& rng) {
  Tensor t(r, c);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(-2.0, 2.0);
  return t;
}

struct ParallelGuard {
  ~ParallelGuard() { k::set_parallel(true); }
};

}  // namespace

TEST_CASE("matmul matches the naive oracle bitwise") {
  ParallelGuard guard;
  Rng rng(11);
  for (auto [m, kk, n] : {std::array<size_t, 3>{1, 1, 1},
                          {3, 4, 5},
                          {17, 9, 13},
                          {64, 80, 40}}) {
    Tensor a = random_tensor(m, kk, rng), b = random_tensor(kk, n, rng);
    Tensor c(m, n);
    k::matmul(a.data(), b.data(), c.data(), m, kk, n);
    Tensor ref = oracles::naive_matmul(a, b);
    for (size_t i = 0; i < c.numel(); ++i) CHECK(c[i] == ref[i]);
  }
}

TEST_CASE("matmul serial and parallel agree bitwise") {
  ParallelGuard guard;
  Rng rng(5);
  // sizes straddle the dispatch threshold so both paths are exercised
  for (auto [m, kk, n] :
       {std::array<size_t, 3>{4, 4, 4}, {200, 50, 60}, {97, 33, 41}, {512, 64, 40}}) {
    Tensor a = random_tensor(m, kk, rng), b = random_tensor(kk, n, rng);
    Tensor cs(m, n), cp(m, n);
    k::matmul_serial(a.data(), b.data(), cs.data(), m, kk, n);
    k::matmul_parallel(a.data(), b.data(), cp.data(), m, kk, n);
    CHECK(std::memcmp(cs.data(), cp.data(), cs.numel() * sizeof(double)) == 0);
  }
}

TEST_CASE("matmul_nt accumulates A * B^T") {
  ParallelGuard guard;
  Rng rng(7);
  const size_t m = 12, n = 9, kk = 7;
  Tensor a = random_tensor(m, n, rng), b = random_tensor(kk, n, rng);
  Tensor c = random_tensor(m, kk, rng);
  Tensor expect = c;
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < kk; ++j) {
      double s = expect.at(i, j);
      for (size_t t = 0; t < n; ++t) s += a.at(i, t) * b.at(j, t);
      expect.at(i, j) = s;
    }
  Tensor cs = c, cp = c;
  k::matmul_nt_serial(a.data(), b.data(), cs.data(), m, n, kk);
  k::matmul_nt_parallel(a.data(), b.data(), cp.data(), m, n, kk);
  CHECK(std::memcmp(cs.data(), cp.data(), cs.numel() * sizeof(double)) == 0);
  for (size_t i = 0; i < cs.numel(); ++i) CHECK(cs[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("matmul_tn accumulates A^T * B") {
  ParallelGuard guard;
  Rng rng(9);
  const size_t m = 11, kk = 6, n = 8;
  Tensor a = random_tensor(m, kk, rng), b = random_tensor(m, n, rng);
  Tensor c = random_tensor(kk, n, rng);
  Tensor expect = c;
  for (size_t i = 0; i < kk; ++i)
    for (size_t j = 0; j < n; ++j) {
      double s = expect.at(i, j);
      for (size_t t = 0; t < m; ++t) s += a.at(t, i) * b.at(t, j);
      expect.at(i, j) = s;
    }
  Tensor cs = c, cp = c;
  k::matmul_tn_serial(a.data(), b.data(), cs.data(), m, kk, n);
  k::matmul_tn_parallel(a.data(), b.data(), cp.data(), m, kk, n);
  CHECK(std::memcmp(cs.data(), cp.data(), cs.numel() * sizeof(double)) == 0);
  for (size_t i = 0; i < cs.numel(); ++i) CHECK(cs[i] == doctest::Approx(expect[i]).epsilon(1e-13));
}

TEST_CASE("knn matches the exhaustive oracle on 100 random datasets") {
  ParallelGuard guard;
  Rng rng(101);
  for (int t = 0; t < 100; ++t) {
    size_t n = 2 + size_t(rng.below(49));  // 2..50
    size_t d = 1 + size_t(rng.below(5));
    size_t kk = 1 + size_t(rng.below(n - 1));
    Tensor x = random_tensor(n, d, rng);
    std::vector<uint32_t> got(n * kk);
    k::knn(x.data(), n, d, kk, got.data());
    CHECK(got == oracles::brute_knn(x, kk));
  }
}

TEST_CASE("knn serial and parallel agree exactly") {
  ParallelGuard guard;
  Rng rng(55);
  const size_t n = 300, d = 6, kk = 5;
  Tensor x = random_tensor(n, d, rng);
  std::vector<uint32_t> s(n * kk), p(n * kk);
  k::knn_serial(x.data(), n, d, kk, s.data());
  k::knn_parallel(x.data(), n, d, kk, p.data());
  CHECK(s == p);
}

TEST_CASE("knn ties break toward the lower row index") {
  // rows 1 and 2 are identical: both sit at distance 1 from row 0, so row 0
  // must take the lower index; rows 1 and 2 are each other's zero-distance
  // nearest neighbor
  Tensor x = Tensor::from(3, 1, {0.0, 1.0, 1.0});
  std::vector<uint32_t> out(3);
  k::knn(x.data(), 3, 1, 1, out.data());
  CHECK(out == std::vector<uint32_t>{1, 2, 1});
}

TEST_CASE("knn rejects out-of-range k") {
  Tensor x = Tensor::from(3, 1, {0.0, 1.0, 2.0});
  std::vector<uint32_t> out(9);
  CHECK_THROWS_AS(k::knn(x.data(), 3, 1, 0, out.data()), std::invalid_argument);
  CHECK_THROWS_AS(k::knn(x.data(), 3, 1, 3, out.data()), std::invalid_argument);
}

TEST_CASE("dispatchers honor the parallel switch") {
  k::set_parallel(false);
  CHECK_FALSE(k::parallel_enabled());
  k::set_parallel(true);
  CHECK(k::parallel_enabled());
}
