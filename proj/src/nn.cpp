#include "grad/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "grad/kernels.hpp"
#include "grad/rng.hpp"

namespace grad::nn {

DenseLayer init_dense(size_t in_dim, size_t out_dim, uint64_t seed) {
  if (in_dim == 0 || out_dim == 0)
    throw std::invalid_argument("init_dense: dimensions must be >= 1, got " +
                                std::to_string(in_dim) + "x" + std::to_string(out_dim));
  DenseLayer layer;
  layer.weights = Tensor(in_dim, out_dim);
  layer.bias = Tensor(1, out_dim);
  const double limit = std::sqrt(6.0 / static_cast<double>(in_dim + out_dim));
  Rng rng(seed);
  for (size_t i = 0; i < layer.weights.numel(); ++i)
    layer.weights[i] = rng.uniform(-limit, limit);
  return layer;
}

BatchNormLayer init_batchnorm(size_t dim) {
  BatchNormLayer layer;
  layer.gamma = Tensor(1, dim);
  layer.gamma.fill(1.0);
  layer.beta = Tensor(1, dim);
  layer.running_mean = Tensor(1, dim);
  layer.running_var = Tensor(1, dim);
  layer.running_var.fill(1.0);
  return layer;
}

NodeId batchnorm_forward(Graph& g, BatchNormLayer& layer, NodeId x, NodeId gamma, NodeId beta,
                         bool train) {
  if (!train)
    return g.batch_norm_eval(x, gamma, beta, layer.running_mean, layer.running_var, layer.eps);
  BatchStats stats;
  const NodeId out = g.batch_norm_train(x, gamma, beta, layer.eps, &stats);
  const double m = layer.momentum;
  for (size_t j = 0; j < layer.running_mean.numel(); ++j) {
    layer.running_mean[j] = m * layer.running_mean[j] + (1.0 - m) * stats.mean[j];
    layer.running_var[j] = m * layer.running_var[j] + (1.0 - m) * stats.var[j];
  }
  return out;
}

Tensor dense_eval(const DenseLayer& layer, const Tensor& x) {
  if (x.cols() != layer.weights.rows())
    throw std::invalid_argument("dense_eval: input " + x.shape_str() + " vs weights " +
                                layer.weights.shape_str());
  Tensor out(x.rows(), layer.weights.cols());
  kernels::matmul(x.data(), layer.weights.data(), out.data(), x.rows(), x.cols(),
                  layer.weights.cols());
  for (size_t i = 0; i < out.rows(); ++i)
    for (size_t j = 0; j < out.cols(); ++j) out.at(i, j) += layer.bias[j];
  return out;
}

Tensor batchnorm_eval(const BatchNormLayer& layer, const Tensor& x) {
  const size_t d = x.cols();
  if (layer.gamma.cols() != d)
    throw std::invalid_argument("batchnorm_eval: input " + x.shape_str() + " vs layer dim " +
                                std::to_string(layer.gamma.cols()));
  Tensor out(x.rows(), d);
  for (size_t j = 0; j < d; ++j) {
    const double invstd = 1.0 / std::sqrt(layer.running_var[j] + layer.eps);
    for (size_t i = 0; i < x.rows(); ++i)
      out.at(i, j) = layer.gamma[j] * (x.at(i, j) - layer.running_mean[j]) * invstd + layer.beta[j];
  }
  return out;
}

Tensor relu_eval(const Tensor& x) {
  Tensor out = x;
  for (size_t i = 0; i < out.numel(); ++i) out[i] = std::max(out[i], 0.0);
  return out;
}

double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

void Adam::step(const std::vector<Param>& params, const std::vector<Tensor>& grads) {
  if (params.size() != grads.size())
    throw std::invalid_argument("Adam::step: " + std::to_string(params.size()) + " params vs " +
                                std::to_string(grads.size()) + " grads");
  if (m_.empty()) {
    m_.reserve(params.size());
    v_.reserve(params.size());
    for (const Param& p : params) {
      m_.emplace_back(p.tensor->rows(), p.tensor->cols());
      v_.emplace_back(p.tensor->rows(), p.tensor->cols());
    }
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (!grads[i].same_shape(*params[i].tensor))
      throw std::invalid_argument("Adam::step: gradient shape " + grads[i].shape_str() +
                                  " does not match parameter " + params[i].name + " (" +
                                  params[i].tensor->shape_str() + ")");
    if (!grads[i].all_finite())
      throw std::runtime_error("Adam::step: non-finite gradient for parameter " + params[i].name);
  }

  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i].tensor;
    const Tensor& g = grads[i];
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    for (size_t e = 0; e < p.numel(); ++e) {
      m[e] = cfg_.beta1 * m[e] + (1.0 - cfg_.beta1) * g[e];
      v[e] = cfg_.beta2 * v[e] + (1.0 - cfg_.beta2) * g[e] * g[e];
      const double mhat = m[e] / bc1;
      const double vhat = v[e] / bc2;
      p[e] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace grad::nn
