#pragma once

#include <vector>

#include "grad/tensor.hpp"

namespace grad {

// Reverse-mode autodiff over a define-by-run graph. A Graph is built fresh
// for every mini-batch; node creation order is a topological order, so the
// backward sweep is a single reverse pass over the node vector.
//
// A Graph instance is single-threaded. Distinct instances share nothing.

enum class Op : uint8_t {
  Input,
  MatMul,
  Add,       // equal shapes, or row-broadcast when rhs is 1 x n
  Sub,
  Mul,       // elementwise
  Relu,
  Sigmoid,
  Softplus,
  Square,
  Sum,       // all elements -> 1 x 1
  Mean,      // all elements -> 1 x 1
  Scale,     // multiply by a constant
  Reverse,   // identity forward; negates the adjoint on the way down
  BatchNormTrain,
  BatchNormEval,
};

const char* op_name(Op op);

using NodeId = int;

struct Node {
  Op op;
  NodeId p0 = -1, p1 = -1, p2 = -1;
  Tensor value;
  Tensor adjoint;
  double coeff = 1.0;  // Scale constant

  // BatchNorm saved context.
  Tensor bn_xhat;
  Tensor bn_invstd;  // 1 x d
};

// Batch statistics reported out of a train-mode batch-norm node so the owner
// of the running averages can update them.
struct BatchStats {
  Tensor mean;  // 1 x d
  Tensor var;   // 1 x d, biased (batch-size divisor)
};

class Graph {
 public:
  NodeId input(Tensor v);

  NodeId matmul(NodeId a, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId relu(NodeId a);
  NodeId sigmoid(NodeId a);
  NodeId softplus(NodeId a);
  NodeId square(NodeId a);
  NodeId sum(NodeId a);
  NodeId mean(NodeId a);
  NodeId scale(NodeId a, double c);

  // Forward pass is the identity, bit for bit. During backward the adjoint
  // flowing into this node is multiplied by -1 before reaching the parent.
  NodeId reverse_gradient(NodeId a);

  // Normalizes x (b x d, b >= 2) by batch mean and biased batch variance,
  // then applies gamma/beta (both 1 x d). Gradients flow through the batch
  // statistics. Batch stats are reported through *stats when non-null.
  NodeId batch_norm_train(NodeId x, NodeId gamma, NodeId beta, double eps,
                          BatchStats* stats = nullptr);

  // Normalizes by the given running statistics only.
  NodeId batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, const Tensor& running_mean,
                         const Tensor& running_var, double eps);

  // Generic dispatcher over the unary/binary kinds above (everything except
  // Input, Scale and the batch norms, which carry extra arguments).
  NodeId op_forward(Op kind, const std::vector<NodeId>& inputs);

  // Zeroes every adjoint, seeds d(loss)/d(loss) = 1 and sweeps the graph in
  // reverse creation order. loss must be scalar. Safe to call repeatedly.
  void backward(NodeId loss);

  // Convenience: backward + copies of the adjoints of the given nodes.
  std::vector<Tensor> gradients(NodeId loss, const std::vector<NodeId>& params);

  const Tensor& value(NodeId id) const { return nodes_[id].value; }
  const Tensor& adjoint(NodeId id) const { return nodes_[id].adjoint; }
  size_t size() const { return nodes_.size(); }

 private:
  NodeId push(Node n);
  Node& node(NodeId id) { return nodes_[id]; }
  std::vector<Node> nodes_;
};

}  // namespace grad
