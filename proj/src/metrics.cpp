#include "grad/metrics.hpp"

#include <cmath>
#include <stdexcept>

#include "grad/kernels.hpp"

namespace grad::metrics {

double discrimination(const std::vector<int>& yhat, const std::vector<int>& a) {
  if (yhat.size() != a.size())
    throw std::invalid_argument("discrimination: " + std::to_string(yhat.size()) +
                                " predictions vs " + std::to_string(a.size()) + " group labels");
  double sum1 = 0.0, sum0 = 0.0;
  size_t n1 = 0, n0 = 0;
  for (size_t i = 0; i < yhat.size(); ++i) {
    if (a[i]) {
      sum1 += yhat[i];
      ++n1;
    } else {
      sum0 += yhat[i];
      ++n0;
    }
  }
  if (n1 == 0 || n0 == 0)
    throw std::invalid_argument("discrimination: protected attribute has a single group");
  return std::fabs(sum1 / static_cast<double>(n1) - sum0 / static_cast<double>(n0));
}

std::vector<uint32_t> knn_indices(const Tensor& x, size_t k) {
  const size_t n = x.rows();
  if (k >= n)
    throw std::invalid_argument("knn_indices: k=" + std::to_string(k) +
                                " must be < n=" + std::to_string(n));
  std::vector<uint32_t> out(n * k);
  kernels::knn(x.data(), n, x.cols(), k, out.data());
  return out;
}

double consistency_from_knn(const std::vector<int>& yhat, const std::vector<uint32_t>& knn,
                            size_t k) {
  const size_t n = yhat.size();
  if (knn.size() != n * k)
    throw std::invalid_argument("consistency: neighbor table size " + std::to_string(knn.size()) +
                                " != n*k = " + std::to_string(n * k));
  double acc = 0.0;
  for (size_t i = 0; i < n; ++i) {
    double neigh = 0.0;
    for (size_t t = 0; t < k; ++t) neigh += yhat[knn[i * k + t]];
    acc += std::fabs(yhat[i] - neigh / static_cast<double>(k));
  }
  return 1.0 - acc / static_cast<double>(n);
}

double consistency(const std::vector<int>& yhat, const Tensor& x, size_t k) {
  if (yhat.size() != x.rows())
    throw std::invalid_argument("consistency: " + std::to_string(yhat.size()) +
                                " predictions vs " + std::to_string(x.rows()) + " rows");
  return consistency_from_knn(yhat, knn_indices(x, k), k);
}

double accuracy(const std::vector<int>& yhat, const std::vector<int>& y) {
  if (yhat.size() != y.size())
    throw std::invalid_argument("accuracy: " + std::to_string(yhat.size()) + " predictions vs " +
                                std::to_string(y.size()) + " labels");
  if (yhat.empty()) throw std::invalid_argument("accuracy: empty prediction set");
  size_t match = 0;
  for (size_t i = 0; i < yhat.size(); ++i)
    if (yhat[i] == y[i]) ++match;
  return static_cast<double>(match) / static_cast<double>(yhat.size());
}

double delta(double accuracy, const std::vector<double>& discriminations) {
  if (discriminations.empty())
    throw std::invalid_argument("delta: need at least one discrimination value");
  double sum = 0.0;
  for (double d : discriminations) sum += d;
  return accuracy - sum / static_cast<double>(discriminations.size());
}

MetricsReport metrics_report(const PredictionSet& preds, size_t k) {
  MetricsReport rep;
  rep.accuracy = accuracy(preds.yhat, preds.y);
  for (const auto& col : preds.a) rep.discrimination.push_back(discrimination(preds.yhat, col));
  rep.attr_names = preds.attr_names;
  rep.delta = delta(rep.accuracy, rep.discrimination);
  rep.consistency = consistency(preds.yhat, preds.x, k);
  return rep;
}

}  // namespace grad::metrics
