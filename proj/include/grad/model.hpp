#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "grad/graph.hpp"
#include "grad/nn.hpp"
#include "grad/tensor.hpp"

namespace grad {

enum class Variant { Pred, Auto };

const char* variant_name(Variant v);
Variant variant_from_name(const std::string& s);

struct NetworkConfig {
  Variant variant = Variant::Pred;
  size_t input_dim = 0;
  size_t hidden_width = 40;
  size_t layers_per_branch = 2;
  double lambda = 100.0;
  size_t n_protected = 0;  // 0 = plain NN baseline, no attribute branches
};

// One dense layer, optionally followed by batch-norm + ReLU. Branch output
// layers are plain affine.
struct DenseBlock {
  nn::DenseLayer dense;
  nn::BatchNormLayer bn;
  bool has_bn = true;
};

struct Branch {
  std::vector<DenseBlock> blocks;
};

// The per-batch loss graph. Owns the autodiff graph; param_nodes are the
// leaves holding the network parameters, in parameters() order.
struct LossGraph {
  Graph graph;
  NodeId total = -1;
  double target_loss = 0.0;
  std::vector<double> attr_losses;
  std::vector<NodeId> param_nodes;
};

struct LogisticHead {
  Tensor weights;  // hidden_width x 1
  Tensor bias;     // 1 x 1
};

// Shared trunk, a target branch (classifier for Pred, reconstructor for
// Auto), and one gradient-reversed attribute branch per protected attribute.
class GradNetwork {
 public:
  GradNetwork(const NetworkConfig& cfg, uint64_t seed);

  const NetworkConfig& config() const { return cfg_; }
  uint64_t seed() const { return seed_; }

  // Trainable tensors: dense weights/biases and batch-norm gamma/beta.
  std::vector<nn::Param> parameters();
  // Everything needed to restore the network: parameters plus batch-norm
  // running statistics.
  std::vector<nn::Param> state();
  size_t dense_param_count() const;

  void load_state(const std::vector<std::pair<std::string, Tensor>>& tensors);

  // Builds the joint loss l_t + lambda * sum_j l_p(a_j) for one train-mode
  // batch. x is b x input_dim; y is b x 1 in {-1,+1} (ignored for Auto and
  // may be empty then); a is b x n_protected in {-1,+1}. Each attribute
  // branch is fed the trunk output through a gradient reversal; passing
  // reverse = false substitutes the identity (control for tests).
  LossGraph forward_loss(const Tensor& x, const Tensor& y, const Tensor& a, bool reverse = true);

  // Eval-mode trunk representation (b x hidden_width). Running batch-norm
  // statistics only; no gradient machinery.
  Tensor encode(const Tensor& x) const;

  struct Prediction {
    std::vector<double> prob;
    std::vector<int> label;  // {0,1}, 1 iff prob >= 0.5
  };

  // Pred variant only; eval mode. Probability is sigmoid of the target
  // branch activation.
  Prediction predict(const Tensor& x) const;

 private:
  Branch make_branch(const std::string& name, size_t in_dim, size_t out_dim, bool output_affine);
  Tensor branch_eval(const Branch& b, const Tensor& x) const;
  void collect(std::vector<nn::Param>& out, bool with_running_stats);

  NetworkConfig cfg_;
  uint64_t seed_ = 0;
  Branch trunk_;
  Branch target_;
  std::vector<Branch> attr_;
};

// Trains a logistic classifier on fixed representations by Adam (full batch,
// one step per epoch), minimizing mean softplus(-y * (r.w + b)). Labels are
// {0,1}; single-class label sets train anyway but emit a warning.
LogisticHead fit_logistic_head(const Tensor& reps, const std::vector<int>& y01, uint64_t seed,
                               size_t epochs);

GradNetwork::Prediction apply_logistic_head(const LogisticHead& head, const Tensor& reps);

}  // namespace grad
