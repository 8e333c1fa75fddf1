#include "grad/graph.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "grad/kernels.hpp"

namespace grad {

namespace {

// Stable logistic: never overflows for finite t.
inline double stable_sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

// softplus(t) = log(1 + exp(t)) = max(t, 0) + log1p(exp(-|t|)).
inline double stable_softplus(double t) {
  return std::max(t, 0.0) + std::log1p(std::exp(-std::fabs(t)));
}

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() +
                              " and " + b.shape_str());
}

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::Input: return "input";
    case Op::MatMul: return "matmul";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::Relu: return "relu";
    case Op::Sigmoid: return "sigmoid";
    case Op::Softplus: return "softplus";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Scale: return "scale";
    case Op::Reverse: return "reverse_gradient";
    case Op::BatchNormTrain: return "batch_norm_train";
    case Op::BatchNormEval: return "batch_norm_eval";
  }
  return "?";
}

NodeId Graph::push(Node n) {
  n.adjoint = Tensor(n.value.rows(), n.value.cols());
  nodes_.push_back(std::move(n));
  return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Graph::input(Tensor v) {
  Node n;
  n.op = Op::Input;
  n.value = std::move(v);
  return push(std::move(n));
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& va = nodes_[a].value;
  const Tensor& vb = nodes_[b].value;
  if (va.cols() != vb.rows()) shape_error("matmul", va, vb);
  Node n;
  n.op = Op::MatMul;
  n.p0 = a;
  n.p1 = b;
  n.value = Tensor(va.rows(), vb.cols());
  kernels::matmul(va.data(), vb.data(), n.value.data(), va.rows(), va.cols(), vb.cols());
  return push(std::move(n));
}

NodeId Graph::add(NodeId a, NodeId b) {
  const Tensor& va = nodes_[a].value;
  const Tensor& vb = nodes_[b].value;
  const bool broadcast = vb.rows() == 1 && vb.cols() == va.cols() && va.rows() > 1;
  if (!broadcast && !va.same_shape(vb)) shape_error("add", va, vb);
  Node n;
  n.op = Op::Add;
  n.p0 = a;
  n.p1 = b;
  n.value = va;
  if (broadcast) {
    for (size_t i = 0; i < va.rows(); ++i)
      for (size_t j = 0; j < va.cols(); ++j) n.value.at(i, j) += vb[j];
  } else {
    for (size_t i = 0; i < va.numel(); ++i) n.value[i] += vb[i];
  }
  return push(std::move(n));
}

NodeId Graph::sub(NodeId a, NodeId b) {
  const Tensor& va = nodes_[a].value;
  const Tensor& vb = nodes_[b].value;
  if (!va.same_shape(vb)) shape_error("sub", va, vb);
  Node n;
  n.op = Op::Sub;
  n.p0 = a;
  n.p1 = b;
  n.value = va;
  for (size_t i = 0; i < va.numel(); ++i) n.value[i] -= vb[i];
  return push(std::move(n));
}

NodeId Graph::mul(NodeId a, NodeId b) {
  const Tensor& va = nodes_[a].value;
  const Tensor& vb = nodes_[b].value;
  if (!va.same_shape(vb)) shape_error("mul", va, vb);
  Node n;
  n.op = Op::Mul;
  n.p0 = a;
  n.p1 = b;
  n.value = va;
  for (size_t i = 0; i < va.numel(); ++i) n.value[i] *= vb[i];
  return push(std::move(n));
}

NodeId Graph::relu(NodeId a) {
  Node n;
  n.op = Op::Relu;
  n.p0 = a;
  n.value = nodes_[a].value;
  for (size_t i = 0; i < n.value.numel(); ++i) n.value[i] = std::max(n.value[i], 0.0);
  return push(std::move(n));
}

NodeId Graph::sigmoid(NodeId a) {
  Node n;
  n.op = Op::Sigmoid;
  n.p0 = a;
  n.value = nodes_[a].value;
  for (size_t i = 0; i < n.value.numel(); ++i) n.value[i] = stable_sigmoid(n.value[i]);
  return push(std::move(n));
}

NodeId Graph::softplus(NodeId a) {
  Node n;
  n.op = Op::Softplus;
  n.p0 = a;
  n.value = nodes_[a].value;
  for (size_t i = 0; i < n.value.numel(); ++i) n.value[i] = stable_softplus(n.value[i]);
  return push(std::move(n));
}

NodeId Graph::square(NodeId a) {
  Node n;
  n.op = Op::Square;
  n.p0 = a;
  n.value = nodes_[a].value;
  for (size_t i = 0; i < n.value.numel(); ++i) n.value[i] *= n.value[i];
  return push(std::move(n));
}

NodeId Graph::sum(NodeId a) {
  Node n;
  n.op = Op::Sum;
  n.p0 = a;
  double acc = 0.0;
  for (size_t i = 0; i < nodes_[a].value.numel(); ++i) acc += nodes_[a].value[i];
  n.value = Tensor::scalar(acc);
  return push(std::move(n));
}

NodeId Graph::mean(NodeId a) {
  Node n;
  n.op = Op::Mean;
  n.p0 = a;
  double acc = 0.0;
  const size_t m = nodes_[a].value.numel();
  for (size_t i = 0; i < m; ++i) acc += nodes_[a].value[i];
  n.value = Tensor::scalar(acc / static_cast<double>(m));
  return push(std::move(n));
}

NodeId Graph::scale(NodeId a, double c) {
  Node n;
  n.op = Op::Scale;
  n.p0 = a;
  n.coeff = c;
  n.value = nodes_[a].value;
  for (size_t i = 0; i < n.value.numel(); ++i) n.value[i] *= c;
  return push(std::move(n));
}

NodeId Graph::reverse_gradient(NodeId a) {
  Node n;
  n.op = Op::Reverse;
  n.p0 = a;
  n.value = nodes_[a].value;
  return push(std::move(n));
}

NodeId Graph::batch_norm_train(NodeId x, NodeId gamma, NodeId beta, double eps,
                               BatchStats* stats) {
  const Tensor& vx = nodes_[x].value;
  const Tensor& vg = nodes_[gamma].value;
  const Tensor& vb = nodes_[beta].value;
  const size_t b = vx.rows(), d = vx.cols();
  if (b < 2)
    throw std::invalid_argument("batch_norm_train: batch size must be >= 2, got " +
                                std::to_string(b));
  if (vg.rows() != 1 || vg.cols() != d) shape_error("batch_norm_train(gamma)", vx, vg);
  if (vb.rows() != 1 || vb.cols() != d) shape_error("batch_norm_train(beta)", vx, vb);

  Tensor mu(1, d), var(1, d);
  for (size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (size_t i = 0; i < b; ++i) acc += vx.at(i, j);
    mu[j] = acc / static_cast<double>(b);
  }
  for (size_t j = 0; j < d; ++j) {
    double acc = 0.0;
    for (size_t i = 0; i < b; ++i) {
      const double diff = vx.at(i, j) - mu[j];
      acc += diff * diff;
    }
    var[j] = acc / static_cast<double>(b);
  }

  Node n;
  n.op = Op::BatchNormTrain;
  n.p0 = x;
  n.p1 = gamma;
  n.p2 = beta;
  n.bn_invstd = Tensor(1, d);
  for (size_t j = 0; j < d; ++j) n.bn_invstd[j] = 1.0 / std::sqrt(var[j] + eps);
  n.bn_xhat = Tensor(b, d);
  n.value = Tensor(b, d);
  for (size_t i = 0; i < b; ++i)
    for (size_t j = 0; j < d; ++j) {
      const double xh = (vx.at(i, j) - mu[j]) * n.bn_invstd[j];
      n.bn_xhat.at(i, j) = xh;
      n.value.at(i, j) = vg[j] * xh + vb[j];
    }
  if (stats) {
    stats->mean = std::move(mu);
    stats->var = std::move(var);
  }
  return push(std::move(n));
}

NodeId Graph::batch_norm_eval(NodeId x, NodeId gamma, NodeId beta, const Tensor& running_mean,
                              const Tensor& running_var, double eps) {
  const Tensor& vx = nodes_[x].value;
  const Tensor& vg = nodes_[gamma].value;
  const Tensor& vb = nodes_[beta].value;
  const size_t b = vx.rows(), d = vx.cols();
  if (vg.rows() != 1 || vg.cols() != d) shape_error("batch_norm_eval(gamma)", vx, vg);
  if (vb.rows() != 1 || vb.cols() != d) shape_error("batch_norm_eval(beta)", vx, vb);

  Node n;
  n.op = Op::BatchNormEval;
  n.p0 = x;
  n.p1 = gamma;
  n.p2 = beta;
  n.bn_invstd = Tensor(1, d);
  for (size_t j = 0; j < d; ++j) n.bn_invstd[j] = 1.0 / std::sqrt(running_var[j] + eps);
  n.bn_xhat = Tensor(b, d);
  n.value = Tensor(b, d);
  for (size_t i = 0; i < b; ++i)
    for (size_t j = 0; j < d; ++j) {
      const double xh = (vx.at(i, j) - running_mean[j]) * n.bn_invstd[j];
      n.bn_xhat.at(i, j) = xh;
      n.value.at(i, j) = vg[j] * xh + vb[j];
    }
  return push(std::move(n));
}

NodeId Graph::op_forward(Op kind, const std::vector<NodeId>& inputs) {
  auto need = [&](size_t n) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
  };
  switch (kind) {
    case Op::MatMul: need(2); return matmul(inputs[0], inputs[1]);
    case Op::Add: need(2); return add(inputs[0], inputs[1]);
    case Op::Sub: need(2); return sub(inputs[0], inputs[1]);
    case Op::Mul: need(2); return mul(inputs[0], inputs[1]);
    case Op::Relu: need(1); return relu(inputs[0]);
    case Op::Sigmoid: need(1); return sigmoid(inputs[0]);
    case Op::Softplus: need(1); return softplus(inputs[0]);
    case Op::Square: need(1); return square(inputs[0]);
    case Op::Sum: need(1); return sum(inputs[0]);
    case Op::Mean: need(1); return mean(inputs[0]);
    default:
      throw std::invalid_argument(std::string("op_forward: ") + op_name(kind) +
                                  " needs its dedicated builder");
  }
}

void Graph::backward(NodeId loss) {
  if (!nodes_[loss].value.is_scalar())
    throw std::invalid_argument("backward: loss must be scalar, got " +
                                nodes_[loss].value.shape_str());

  for (Node& n : nodes_) n.adjoint.fill(0.0);
  nodes_[loss].adjoint[0] = 1.0;

  for (NodeId id = static_cast<NodeId>(nodes_.size()) - 1; id >= 0; --id) {
    Node& n = nodes_[id];
    const Tensor& dy = n.adjoint;
    switch (n.op) {
      case Op::Input:
        break;
      case Op::MatMul: {
        const Tensor& a = nodes_[n.p0].value;
        const Tensor& b = nodes_[n.p1].value;
        // dA += dY * B^T,  dB += A^T * dY
        kernels::matmul_nt(dy.data(), b.data(), nodes_[n.p0].adjoint.data(), a.rows(), b.cols(),
                           a.cols());
        kernels::matmul_tn(a.data(), dy.data(), nodes_[n.p1].adjoint.data(), a.rows(), a.cols(),
                           b.cols());
        break;
      }
      case Op::Add: {
        Tensor& da = nodes_[n.p0].adjoint;
        Tensor& db = nodes_[n.p1].adjoint;
        for (size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i];
        if (db.rows() == 1 && dy.rows() > 1) {
          for (size_t i = 0; i < dy.rows(); ++i)
            for (size_t j = 0; j < dy.cols(); ++j) db[j] += dy.at(i, j);
        } else {
          for (size_t i = 0; i < dy.numel(); ++i) db[i] += dy[i];
        }
        break;
      }
      case Op::Sub: {
        Tensor& da = nodes_[n.p0].adjoint;
        Tensor& db = nodes_[n.p1].adjoint;
        for (size_t i = 0; i < dy.numel(); ++i) {
          da[i] += dy[i];
          db[i] -= dy[i];
        }
        break;
      }
      case Op::Mul: {
        Tensor& da = nodes_[n.p0].adjoint;
        Tensor& db = nodes_[n.p1].adjoint;
        const Tensor& a = nodes_[n.p0].value;
        const Tensor& b = nodes_[n.p1].value;
        for (size_t i = 0; i < dy.numel(); ++i) {
          da[i] += dy[i] * b[i];
          db[i] += dy[i] * a[i];
        }
        break;
      }
      case Op::Relu: {
        Tensor& da = nodes_[n.p0].adjoint;
        const Tensor& a = nodes_[n.p0].value;
        for (size_t i = 0; i < dy.numel(); ++i)
          if (a[i] > 0.0) da[i] += dy[i];
        break;
      }
      case Op::Sigmoid: {
        Tensor& da = nodes_[n.p0].adjoint;
        for (size_t i = 0; i < dy.numel(); ++i) {
          const double s = n.value[i];
          da[i] += dy[i] * s * (1.0 - s);
        }
        break;
      }
      case Op::Softplus: {
        Tensor& da = nodes_[n.p0].adjoint;
        const Tensor& a = nodes_[n.p0].value;
        for (size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * stable_sigmoid(a[i]);
        break;
      }
      case Op::Square: {
        Tensor& da = nodes_[n.p0].adjoint;
        const Tensor& a = nodes_[n.p0].value;
        for (size_t i = 0; i < dy.numel(); ++i) da[i] += dy[i] * 2.0 * a[i];
        break;
      }
      case Op::Sum: {
        Tensor& da = nodes_[n.p0].adjoint;
        const double g = dy[0];
        for (size_t i = 0; i < da.numel(); ++i) da[i] += g;
        break;
      }
      case Op::Mean: {
        Tensor& da = nodes_[n.p0].adjoint;
        const double g = dy[0] / static_cast<double>(da.numel());
        for (size_t i = 0; i < da.numel(); ++i) da[i] += g;
        break;
      }
      case Op::Scale: {
        Tensor& da = nodes_[n.p0].adjoint;
        for (size_t i = 0; i < dy.numel(); ++i) da[i] += n.coeff * dy[i];
        break;
      }
      case Op::Reverse: {
        Tensor& da = nodes_[n.p0].adjoint;
        for (size_t i = 0; i < dy.numel(); ++i) da[i] -= dy[i];
        break;
      }
      case Op::BatchNormTrain: {
        Tensor& dx = nodes_[n.p0].adjoint;
        Tensor& dg = nodes_[n.p1].adjoint;
        Tensor& db = nodes_[n.p2].adjoint;
        const Tensor& gamma = nodes_[n.p1].value;
        const size_t b = dy.rows(), d = dy.cols();
        const double bf = static_cast<double>(b);
        for (size_t j = 0; j < d; ++j) {
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (size_t i = 0; i < b; ++i) {
            sum_dy += dy.at(i, j);
            sum_dy_xhat += dy.at(i, j) * n.bn_xhat.at(i, j);
          }
          dg[j] += sum_dy_xhat;
          db[j] += sum_dy;
          const double c = gamma[j] * n.bn_invstd[j] / bf;
          for (size_t i = 0; i < b; ++i)
            dx.at(i, j) += c * (bf * dy.at(i, j) - sum_dy - n.bn_xhat.at(i, j) * sum_dy_xhat);
        }
        break;
      }
      case Op::BatchNormEval: {
        Tensor& dx = nodes_[n.p0].adjoint;
        Tensor& dg = nodes_[n.p1].adjoint;
        Tensor& db = nodes_[n.p2].adjoint;
        const Tensor& gamma = nodes_[n.p1].value;
        const size_t b = dy.rows(), d = dy.cols();
        for (size_t j = 0; j < d; ++j) {
          const double gi = gamma[j] * n.bn_invstd[j];
          for (size_t i = 0; i < b; ++i) {
            dx.at(i, j) += dy.at(i, j) * gi;
            dg[j] += dy.at(i, j) * n.bn_xhat.at(i, j);
            db[j] += dy.at(i, j);
          }
        }
        break;
      }
    }
  }
}

std::vector<Tensor> Graph::gradients(NodeId loss, const std::vector<NodeId>& params) {
  backward(loss);
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (NodeId id : params) out.push_back(nodes_[id].adjoint);
  return out;
}

}  // namespace grad
