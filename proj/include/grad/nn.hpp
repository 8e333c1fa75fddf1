#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "grad/graph.hpp"
#include "grad/tensor.hpp"

namespace grad::nn {

struct DenseLayer {
  Tensor weights;  // in_dim x out_dim
  Tensor bias;     // 1 x out_dim
};

// Weights uniform in +/- sqrt(6 / (in + out)), bias zero. Deterministic per seed.
DenseLayer init_dense(size_t in_dim, size_t out_dim, uint64_t seed);

struct BatchNormLayer {
  Tensor gamma;         // 1 x d, init 1
  Tensor beta;          // 1 x d, init 0
  Tensor running_mean;  // 1 x d, init 0
  Tensor running_var;   // 1 x d, init 1
  double momentum = 0.9;
  double eps = 1e-5;
};

BatchNormLayer init_batchnorm(size_t dim);

// Graph-mode batch norm. gamma/beta enter the graph as the given nodes.
// Train mode normalizes by batch statistics and folds them into the layer's
// running averages (running = momentum * running + (1 - momentum) * batch);
// eval mode reads the running statistics only.
NodeId batchnorm_forward(Graph& g, BatchNormLayer& layer, NodeId x, NodeId gamma, NodeId beta,
                         bool train);

// Plain eval-mode forwards, no graph involved.
Tensor dense_eval(const DenseLayer& layer, const Tensor& x);
Tensor batchnorm_eval(const BatchNormLayer& layer, const Tensor& x);
Tensor relu_eval(const Tensor& x);
double sigmoid(double t);

// A named trainable tensor. Names show up in optimizer diagnostics and in
// checkpoints.
struct Param {
  std::string name;
  Tensor* tensor = nullptr;
  bool is_dense = true;  // false for gamma/beta
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction. Moment buffers are allocated on the
// first step; the step counter increments once per step() call.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void step(const std::vector<Param>& params, const std::vector<Tensor>& grads);

  uint64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  uint64_t t_ = 0;
  std::vector<Tensor> m_, v_;
};

}  // namespace grad::nn
