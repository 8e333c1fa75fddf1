#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

namespace grad::kernels {

// Every kernel comes in a _serial and a _parallel flavor plus a dispatching
// front-end. The two flavors compute each output element with the same
// operation order, so their results are bitwise identical; training results
// do not depend on the thread count. tests/test_kernels.cpp asserts this and
// bench/bench_kernels.cpp times the two against each other.

// Global switch for the dispatchers (default on). Thread count is OpenMP's.
void set_parallel(bool on);
bool parallel_enabled();

// C (m x n) = A (m x k) * B (k x n), row-major, overwrite.
void matmul_serial(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
void matmul_parallel(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
void matmul(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);

// C (m x k) += A (m x n) * B (k x n)^T, accumulate. Backward pass for the
// left matmul operand (A = upstream gradient, B = right forward operand).
void matmul_nt_serial(const double* a, const double* b, double* c, size_t m, size_t n, size_t k);
void matmul_nt_parallel(const double* a, const double* b, double* c, size_t m, size_t n, size_t k);
void matmul_nt(const double* a, const double* b, double* c, size_t m, size_t n, size_t k);

// C (k x n) += A (m x k)^T * B (m x n), accumulate. Backward pass for the
// right matmul operand.
void matmul_tn_serial(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
void matmul_tn_parallel(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);
void matmul_tn(const double* a, const double* b, double* c, size_t m, size_t k, size_t n);

// For each row of X (n x d): indices of the k nearest other rows by Euclidean
// distance, ties broken by lower row index, sorted by (distance, index).
// Output is row-major n x k. Requires 1 <= k < n.
void knn_serial(const double* x, size_t n, size_t d, size_t k, uint32_t* out);
void knn_parallel(const double* x, size_t n, size_t d, size_t k, uint32_t* out);
void knn(const double* x, size_t n, size_t d, size_t k, uint32_t* out);

}  // namespace grad::kernels
