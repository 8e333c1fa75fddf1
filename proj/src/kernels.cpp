#include "grad/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <stdexcept>
#include <utility>

namespace grad::kernels {

namespace {
std::atomic<bool> g_parallel{true};

// Parallel regions are skipped below this many inner-loop operations; the
// fork/join overhead dominates on tiny batch-size matrices.
constexpr size_t kMinParallelWork = 1u << 15;
}  // namespace

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

// ---------------------------------------------------------------------------
// GEMM. Row-major, i-k-j loop order so inner accumulation into each C element
// runs over k ascending in both flavors.

void matmul_serial(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (size_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      const double* bk = b + kk * n;
      for (size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

void matmul_parallel(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    std::fill(ci, ci + n, 0.0);
    const double* ai = a + i * k;
    for (size_t kk = 0; kk < k; ++kk) {
      const double aik = ai[kk];
      const double* bk = b + kk * n;
      for (size_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
    }
  }
}

void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  if (g_parallel.load() && m > 1 && m * k * n >= kMinParallelWork)
    matmul_parallel(a, b, c, m, k, n);
  else
    matmul_serial(a, b, c, m, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* c, size_t m, size_t n, size_t k) {
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (size_t j = 0; j < k; ++j) {
      const double* bj = b + j * n;
      double acc = 0.0;
      for (size_t t = 0; t < n; ++t) acc += ai[t] * bj[t];
      ci[j] += acc;
    }
  }
}

void matmul_nt_parallel(const double* a, const double* b, double* c, size_t m, size_t n, size_t k) {
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < m; ++i) {
    const double* ai = a + i * n;
    double* ci = c + i * k;
    for (size_t j = 0; j < k; ++j) {
      const double* bj = b + j * n;
      double acc = 0.0;
      for (size_t t = 0; t < n; ++t) acc += ai[t] * bj[t];
      ci[j] += acc;
    }
  }
}

void matmul_nt(const double* a, const double* b, double* c, size_t m, size_t n, size_t k) {
  if (g_parallel.load() && m > 1 && m * n * k >= kMinParallelWork)
    matmul_nt_parallel(a, b, c, m, n, k);
  else
    matmul_nt_serial(a, b, c, m, n, k);
}

void matmul_tn_serial(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  for (size_t i = 0; i < k; ++i) {
    double* ci = c + i * n;
    for (size_t t = 0; t < m; ++t) {
      const double ati = a[t * k + i];
      const double* bt = b + t * n;
      for (size_t j = 0; j < n; ++j) ci[j] += ati * bt[j];
    }
  }
}

void matmul_tn_parallel(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
#pragma omp parallel for schedule(static)
  for (size_t i = 0; i < k; ++i) {
    double* ci = c + i * n;
    for (size_t t = 0; t < m; ++t) {
      const double ati = a[t * k + i];
      const double* bt = b + t * n;
      for (size_t j = 0; j < n; ++j) ci[j] += ati * bt[j];
    }
  }
}

void matmul_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n) {
  if (g_parallel.load() && k > 1 && m * k * n >= kMinParallelWork)
    matmul_tn_parallel(a, b, c, m, k, n);
  else
    matmul_tn_serial(a, b, c, m, k, n);
}

// ---------------------------------------------------------------------------
// k-nearest neighbors, exhaustive per-row scan.

namespace {

inline void knn_row(const double* x, size_t n, size_t d, size_t k, size_t i, uint32_t* out,
                    std::vector<std::pair<double, uint32_t>>& scratch) {
  scratch.clear();
  const double* xi = x + i * d;
  for (size_t j = 0; j < n; ++j) {
    if (j == i) continue;
    const double* xj = x + j * d;
    double dist = 0.0;
    for (size_t c = 0; c < d; ++c) {
      const double diff = xi[c] - xj[c];
      dist += diff * diff;
    }
    scratch.emplace_back(dist, static_cast<uint32_t>(j));
  }
  std::partial_sort(scratch.begin(), scratch.begin() + k, scratch.end());
  for (size_t t = 0; t < k; ++t) out[i * k + t] = scratch[t].second;
}

}  // namespace

void knn_serial(const double* x, size_t n, size_t d, size_t k, uint32_t* out) {
  if (k < 1 || k >= n)
    throw std::invalid_argument("knn: k must satisfy 1 <= k < n (k=" + std::to_string(k) +
                                ", n=" + std::to_string(n) + ")");
  std::vector<std::pair<double, uint32_t>> scratch;
  scratch.reserve(n - 1);
  for (size_t i = 0; i < n; ++i) knn_row(x, n, d, k, i, out, scratch);
}

void knn_parallel(const double* x, size_t n, size_t d, size_t k, uint32_t* out) {
  if (k < 1 || k >= n)
    throw std::invalid_argument("knn: k must satisfy 1 <= k < n (k=" + std::to_string(k) +
                                ", n=" + std::to_string(n) + ")");
#pragma omp parallel
  {
    std::vector<std::pair<double, uint32_t>> scratch;
    scratch.reserve(n - 1);
#pragma omp for schedule(static)
    for (size_t i = 0; i < n; ++i) knn_row(x, n, d, k, i, out, scratch);
  }
}

void knn(const double* x, size_t n, size_t d, size_t k, uint32_t* out) {
  if (g_parallel.load() && n * n * d >= kMinParallelWork)
    knn_parallel(x, n, d, k, out);
  else
    knn_serial(x, n, d, k, out);
}

}  // namespace grad::kernels
