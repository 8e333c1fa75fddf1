#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grad/tensor.hpp"

namespace grad::metrics {

// All functions are pure; fairness metrics read predicted labels only.

// |mean(yhat | a=1) - mean(yhat | a=0)|. a must contain both groups.
double discrimination(const std::vector<int>& yhat, const std::vector<int>& a);

// Row-major n x k neighbor indices; Euclidean distance on X, a point never
// its own neighbor, ties broken by lower row index.
std::vector<uint32_t> knn_indices(const Tensor& x, size_t k);

// 1 - mean_i |yhat_i - mean of yhat over the k nearest neighbors of x_i|.
double consistency(const std::vector<int>& yhat, const Tensor& x, size_t k);

// Same, with precomputed neighbor indices (knn_indices layout).
double consistency_from_knn(const std::vector<int>& yhat, const std::vector<uint32_t>& knn,
                            size_t k);

double accuracy(const std::vector<int>& yhat, const std::vector<int>& y);

// accuracy - mean(discriminations).
double delta(double accuracy, const std::vector<double>& discriminations);

struct PredictionSet {
  std::vector<int> yhat;              // {0,1}
  std::vector<int> y;                 // {0,1}
  std::vector<std::vector<int>> a;    // one {0,1} column per protected attribute
  std::vector<std::string> attr_names;
  Tensor x;                           // features used for neighbor search
};

struct MetricsReport {
  double accuracy = 0.0;
  std::vector<double> discrimination;  // per attribute, PredictionSet order
  std::vector<std::string> attr_names;
  double delta = 0.0;
  double consistency = 0.0;
};

MetricsReport metrics_report(const PredictionSet& preds, size_t k);

}  // namespace grad::metrics
