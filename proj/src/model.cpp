#include "grad/model.hpp"

#include <cstdio>
#include <map>
#include <stdexcept>

#include "grad/rng.hpp"

namespace grad {

const char* variant_name(Variant v) { return v == Variant::Pred ? "pred" : "auto"; }

Variant variant_from_name(const std::string& s) {
  if (s == "pred") return Variant::Pred;
  if (s == "auto") return Variant::Auto;
  throw std::invalid_argument("unknown variant '" + s + "' (expected pred|auto)");
}

Branch GradNetwork::make_branch(const std::string& name, size_t in_dim, size_t out_dim,
                                bool output_affine) {
  Branch b;
  const size_t layers = cfg_.layers_per_branch;
  size_t cur = in_dim;
  for (size_t l = 0; l < layers; ++l) {
    const bool last = l + 1 == layers;
    const size_t out = (last && output_affine) ? out_dim : cfg_.hidden_width;
    DenseBlock block;
    const std::string lname = name + ".l" + std::to_string(l);
    block.dense = nn::init_dense(cur, out, derive_seed(seed_, lname + ".dense"));
    block.has_bn = !(last && output_affine);
    if (block.has_bn) block.bn = nn::init_batchnorm(out);
    b.blocks.push_back(std::move(block));
    cur = out;
  }
  return b;
}

GradNetwork::GradNetwork(const NetworkConfig& cfg, uint64_t seed) : cfg_(cfg), seed_(seed) {
  if (cfg_.input_dim == 0) throw std::invalid_argument("GradNetwork: input_dim must be >= 1");
  if (cfg_.hidden_width == 0) throw std::invalid_argument("GradNetwork: hidden_width must be >= 1");
  if (cfg_.layers_per_branch == 0)
    throw std::invalid_argument("GradNetwork: layers_per_branch must be >= 1");
  if (cfg_.lambda < 0.0) throw std::invalid_argument("GradNetwork: lambda must be >= 0");

  // Trunk: all blocks batch-norm + ReLU. Branches: hidden blocks plus an
  // affine output layer.
  trunk_ = make_branch("trunk", cfg_.input_dim, cfg_.hidden_width, false);
  const size_t target_out = cfg_.variant == Variant::Pred ? 1 : cfg_.input_dim;
  target_ = make_branch("target", cfg_.hidden_width, target_out, true);
  for (size_t j = 0; j < cfg_.n_protected; ++j)
    attr_.push_back(make_branch("attr" + std::to_string(j), cfg_.hidden_width, 1, true));
}

void GradNetwork::collect(std::vector<nn::Param>& out, bool with_running_stats) {
  auto add_branch = [&](const std::string& name, Branch& b) {
    for (size_t l = 0; l < b.blocks.size(); ++l) {
      DenseBlock& block = b.blocks[l];
      const std::string prefix = name + ".l" + std::to_string(l);
      out.push_back({prefix + ".w", &block.dense.weights, true});
      out.push_back({prefix + ".b", &block.dense.bias, true});
      if (block.has_bn) {
        out.push_back({prefix + ".bn.gamma", &block.bn.gamma, false});
        out.push_back({prefix + ".bn.beta", &block.bn.beta, false});
        if (with_running_stats) {
          out.push_back({prefix + ".bn.running_mean", &block.bn.running_mean, false});
          out.push_back({prefix + ".bn.running_var", &block.bn.running_var, false});
        }
      }
    }
  };
  add_branch("trunk", trunk_);
  add_branch("target", target_);
  for (size_t j = 0; j < attr_.size(); ++j) add_branch("attr" + std::to_string(j), attr_[j]);
}

std::vector<nn::Param> GradNetwork::parameters() {
  std::vector<nn::Param> out;
  collect(out, false);
  return out;
}

std::vector<nn::Param> GradNetwork::state() {
  std::vector<nn::Param> out;
  collect(out, true);
  return out;
}

size_t GradNetwork::dense_param_count() const {
  size_t count = 0;
  auto add = [&](const Branch& b) {
    for (const DenseBlock& block : b.blocks)
      count += block.dense.weights.numel() + block.dense.bias.numel();
  };
  add(trunk_);
  add(target_);
  for (const Branch& b : attr_) add(b);
  return count;
}

void GradNetwork::load_state(const std::vector<std::pair<std::string, Tensor>>& tensors) {
  std::map<std::string, const Tensor*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  for (nn::Param& p : state()) {
    auto it = by_name.find(p.name);
    if (it == by_name.end())
      throw std::runtime_error("load_state: missing tensor " + p.name);
    if (!it->second->same_shape(*p.tensor))
      throw std::runtime_error("load_state: shape mismatch for " + p.name + ": " +
                               it->second->shape_str() + " vs " + p.tensor->shape_str());
    *p.tensor = *it->second;
    by_name.erase(it);
  }
  if (!by_name.empty())
    throw std::runtime_error("load_state: unexpected tensor " + by_name.begin()->first);
}

namespace {

void check_pm_labels(const Tensor& t, const char* what) {
  for (size_t i = 0; i < t.numel(); ++i)
    if (t[i] != 1.0 && t[i] != -1.0)
      throw std::invalid_argument(std::string(what) + ": labels must be in {-1,+1}, got " +
                                  std::to_string(t[i]));
}

}  // namespace

LossGraph GradNetwork::forward_loss(const Tensor& x, const Tensor& y, const Tensor& a,
                                    bool reverse) {
  if (x.cols() != cfg_.input_dim)
    throw std::invalid_argument("forward_loss: input has " + std::to_string(x.cols()) +
                                " features, network expects " + std::to_string(cfg_.input_dim));
  if (a.numel() > 0 && (a.rows() != x.rows() || a.cols() != cfg_.n_protected))
    throw std::invalid_argument("forward_loss: protected labels " + a.shape_str() +
                                " do not match batch " + x.shape_str() + " with " +
                                std::to_string(cfg_.n_protected) + " attributes");
  if (cfg_.n_protected > 0 && a.numel() == 0)
    throw std::invalid_argument("forward_loss: protected labels required");
  if (cfg_.variant == Variant::Pred) {
    if (y.rows() != x.rows() || y.cols() != 1)
      throw std::invalid_argument("forward_loss: target labels " + y.shape_str() +
                                  " do not match batch " + x.shape_str());
    check_pm_labels(y, "forward_loss(y)");
  }
  check_pm_labels(a, "forward_loss(a)");

  LossGraph lg;
  Graph& g = lg.graph;
  const NodeId x_id = g.input(x);

  // Parameter leaves, in parameters() order.
  std::map<const Tensor*, NodeId> node_of;
  for (nn::Param& p : parameters()) {
    const NodeId id = g.input(*p.tensor);
    lg.param_nodes.push_back(id);
    node_of[p.tensor] = id;
  }

  auto run_branch = [&](Branch& b, NodeId in) {
    NodeId cur = in;
    for (DenseBlock& block : b.blocks) {
      cur = g.add(g.matmul(cur, node_of.at(&block.dense.weights)),
                  node_of.at(&block.dense.bias));
      if (block.has_bn) {
        cur = nn::batchnorm_forward(g, block.bn, cur, node_of.at(&block.bn.gamma),
                                    node_of.at(&block.bn.beta), /*train=*/true);
        cur = g.relu(cur);
      }
    }
    return cur;
  };

  const NodeId trunk_out = run_branch(trunk_, x_id);
  const NodeId h_target = run_branch(target_, trunk_out);

  NodeId lt;
  if (cfg_.variant == Variant::Pred) {
    const NodeId y_id = g.input(y);
    lt = g.mean(g.softplus(g.scale(g.mul(y_id, h_target), -1.0)));
  } else {
    // Mean over the batch of squared reconstruction error.
    const NodeId sq = g.square(g.sub(h_target, x_id));
    lt = g.scale(g.sum(sq), 1.0 / static_cast<double>(x.rows()));
  }
  lg.target_loss = g.value(lt)[0];

  NodeId total = lt;
  for (size_t j = 0; j < cfg_.n_protected; ++j) {
    const NodeId branch_in = reverse ? g.reverse_gradient(trunk_out) : trunk_out;
    const NodeId h_attr = run_branch(attr_[j], branch_in);
    Tensor aj(x.rows(), 1);
    for (size_t i = 0; i < x.rows(); ++i) aj.at(i, 0) = a.at(i, j);
    const NodeId a_id = g.input(aj);
    const NodeId lp = g.mean(g.softplus(g.scale(g.mul(a_id, h_attr), -1.0)));
    lg.attr_losses.push_back(g.value(lp)[0]);
    total = g.add(total, g.scale(lp, cfg_.lambda));
  }
  lg.total = total;
  return lg;
}

Tensor GradNetwork::branch_eval(const Branch& b, const Tensor& x) const {
  Tensor cur = x;
  for (const DenseBlock& block : b.blocks) {
    cur = nn::dense_eval(block.dense, cur);
    if (block.has_bn) {
      cur = nn::batchnorm_eval(block.bn, cur);
      cur = nn::relu_eval(cur);
    }
  }
  return cur;
}

Tensor GradNetwork::encode(const Tensor& x) const { return branch_eval(trunk_, x); }

GradNetwork::Prediction GradNetwork::predict(const Tensor& x) const {
  if (cfg_.variant != Variant::Pred)
    throw std::invalid_argument(
        "predict: only the Pred variant predicts directly; use encode + a logistic head for Auto");
  const Tensor h = branch_eval(target_, encode(x));
  Prediction out;
  out.prob.reserve(x.rows());
  out.label.reserve(x.rows());
  for (size_t i = 0; i < h.rows(); ++i) {
    const double p = nn::sigmoid(h.at(i, 0));
    out.prob.push_back(p);
    out.label.push_back(p >= 0.5 ? 1 : 0);
  }
  return out;
}

LogisticHead fit_logistic_head(const Tensor& reps, const std::vector<int>& y01, uint64_t seed,
                               size_t epochs) {
  const size_t n = reps.rows(), d = reps.cols();
  if (y01.size() != n)
    throw std::invalid_argument("fit_logistic_head: " + std::to_string(y01.size()) +
                                " labels for " + std::to_string(n) + " rows");
  bool has0 = false, has1 = false;
  for (int v : y01) (v ? has1 : has0) = true;
  if (!(has0 && has1))
    std::fprintf(stderr, "warning: fit_logistic_head: training labels are single-class\n");

  Tensor ypm(n, 1);
  for (size_t i = 0; i < n; ++i) ypm.at(i, 0) = y01[i] ? 1.0 : -1.0;

  LogisticHead head;
  head.weights = nn::init_dense(d, 1, derive_seed(seed, "logistic_head")).weights;
  head.bias = Tensor(1, 1);

  std::vector<nn::Param> params = {{"head.w", &head.weights, true}, {"head.b", &head.bias, true}};
  nn::Adam adam;
  for (size_t e = 0; e < epochs; ++e) {
    Graph g;
    const NodeId r_id = g.input(reps);
    const NodeId w_id = g.input(head.weights);
    const NodeId b_id = g.input(head.bias);
    const NodeId y_id = g.input(ypm);
    const NodeId z = g.add(g.matmul(r_id, w_id), b_id);
    const NodeId loss = g.mean(g.softplus(g.scale(g.mul(y_id, z), -1.0)));
    adam.step(params, g.gradients(loss, {w_id, b_id}));
  }
  return head;
}

GradNetwork::Prediction apply_logistic_head(const LogisticHead& head, const Tensor& reps) {
  GradNetwork::Prediction out;
  out.prob.reserve(reps.rows());
  out.label.reserve(reps.rows());
  for (size_t i = 0; i < reps.rows(); ++i) {
    double z = head.bias[0];
    for (size_t j = 0; j < reps.cols(); ++j) z += reps.at(i, j) * head.weights[j];
    const double p = nn::sigmoid(z);
    out.prob.push_back(p);
    out.label.push_back(p >= 0.5 ? 1 : 0);
  }
  return out;
}

}  // namespace grad
