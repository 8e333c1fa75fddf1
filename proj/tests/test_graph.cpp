#include <cmath>
#include <string>
#include <vector>

#include "doctest.h"
#include "grad/graph.hpp"
#include "grad/rng.hpp"
#include "grad/tensor.hpp"
#include "oracles.hpp"

using grad::BatchStats;
using grad::Graph;
using grad::NodeId;
using grad::Rng;
using grad::Tensor;

namespace {

Tensor random_tensor(size_t r, size_t c, Rng& rng) {
  Tensor t(r, c);
  for (size_t i = 0; i < t.numel(); ++i) t[i] = rng.normal();
  return t;
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Graph g;
  NodeId r = g.relu(g.input(Tensor::row({-1.0, 0.0, 2.0})));
  CHECK(g.value(r)[0] == 0.0);
  CHECK(g.value(r)[1] == 0.0);
  CHECK(g.value(r)[2] == 2.0);

  NodeId s = g.softplus(g.input(Tensor::scalar(0.0)));
  CHECK(g.value(s)[0] == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  NodeId m = g.matmul(g.input(Tensor::row({1.0, 2.0})),
                      g.input(Tensor::from(2, 2, {1.0, 0.0, 0.0, 1.0})));
  CHECK(g.value(m)[0] == 1.0);
  CHECK(g.value(m)[1] == 2.0);
}

TEST_CASE("softplus is overflow-safe at extreme inputs") {
  Graph g;
  NodeId s = g.softplus(g.input(Tensor::row({-800.0, 800.0})));
  CHECK(g.value(s)[0] == 0.0);                 // underflows cleanly
  CHECK(g.value(s)[1] == doctest::Approx(800.0));  // softplus(t) -> t
  CHECK(std::isfinite(g.value(s)[1]));
}

TEST_CASE("shape mismatches name the operation and both shapes") {
  Graph g;
  NodeId a = g.input(Tensor(1, 2));
  NodeId b = g.input(Tensor(3, 3));
  try {
    g.matmul(a, b);
    FAIL("expected a shape error");
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("1x2") != std::string::npos);
    CHECK(msg.find("3x3") != std::string::npos);
  }
  CHECK_THROWS_AS(g.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(g.mul(a, b), std::invalid_argument);
}

TEST_CASE("add broadcasts a 1 x n row across the batch") {
  Graph g;
  NodeId x = g.input(Tensor::from(2, 3, {1, 2, 3, 4, 5, 6}));
  NodeId b = g.input(Tensor::row({10, 20, 30}));
  NodeId y = g.add(x, b);
  CHECK(g.value(y).at(1, 2) == 36.0);
  g.backward(g.sum(y));
  // the bias adjoint is the column sum of ones
  CHECK(g.adjoint(b)[0] == 2.0);
  CHECK(g.adjoint(b)[2] == 2.0);
  CHECK(g.adjoint(x).at(0, 0) == 1.0);
}

TEST_CASE("gradient reversal forward is the identity, backward negates") {
  Graph g;
  Tensor v = Tensor::row({3.5, -2.0});
  NodeId x = g.input(v);
  NodeId r = g.reverse_gradient(x);
  CHECK(g.value(r)[0] == v[0]);
  CHECK(g.value(r)[1] == v[1]);

  NodeId c = g.input(Tensor::row({2.0, -1.0}));
  NodeId f = g.sum(g.mul(r, c));
  g.backward(f);
  CHECK(g.adjoint(x)[0] == -2.0);
  CHECK(g.adjoint(x)[1] == 1.0);
}

TEST_CASE("double reversal cancels exactly") {
  Graph g;
  NodeId x = g.input(Tensor::row({1.0, 2.0, 3.0}));
  NodeId f = g.sum(g.reverse_gradient(g.reverse_gradient(x)));
  g.backward(f);
  for (size_t i = 0; i < 3; ++i) CHECK(g.adjoint(x)[i] == 1.0);
}

TEST_CASE("reversed gradient is the exact negation of the plain gradient") {
  Rng rng(21);
  Tensor xv = random_tensor(2, 3, rng), cv = random_tensor(2, 3, rng);
  Graph g1, g2;
  NodeId x1 = g1.input(xv);
  g1.backward(g1.sum(g1.mul(g1.reverse_gradient(x1), g1.input(cv))));
  NodeId x2 = g2.input(xv);
  g2.backward(g2.sum(g2.mul(x2, g2.input(cv))));
  for (size_t i = 0; i < xv.numel(); ++i) CHECK(g1.adjoint(x1)[i] == -g2.adjoint(x2)[i]);
}

TEST_CASE("classic scalar gradients") {
  {
    Graph g;
    NodeId x = g.input(Tensor::scalar(3.0));
    g.backward(g.sum(g.square(x)));
    CHECK(g.adjoint(x)[0] == 6.0);
  }
  {
    Graph g;
    NodeId x = g.input(Tensor::scalar(0.0));
    g.backward(g.sum(g.sigmoid(x)));
    CHECK(g.adjoint(x)[0] == 0.25);
  }
}

TEST_CASE("backward rejects non-scalar losses and zeroes adjoints between calls") {
  Graph g;
  NodeId x = g.input(Tensor::row({1.0, 2.0}));
  NodeId y = g.square(x);
  CHECK_THROWS_AS(g.backward(y), std::invalid_argument);

  NodeId loss = g.sum(y);
  g.backward(loss);
  Tensor first = g.adjoint(x);
  g.backward(loss);  // must not double-accumulate
  CHECK(g.adjoint(x)[0] == first[0]);
  CHECK(g.adjoint(x)[1] == first[1]);
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(33);
  Tensor xv = random_tensor(3, 2, rng);
  const double a = 1.7, b = -0.4;
  Graph g;
  NodeId x = g.input(xv);
  NodeId l1 = g.mean(g.square(x));
  NodeId l2 = g.sum(g.sigmoid(x));
  NodeId combined = g.add(g.scale(l1, a), g.scale(l2, b));

  g.backward(l1);
  Tensor g1 = g.adjoint(x);
  g.backward(l2);
  Tensor g2 = g.adjoint(x);
  g.backward(combined);
  for (size_t i = 0; i < xv.numel(); ++i)
    CHECK(g.adjoint(x)[i] == doctest::Approx(a * g1[i] + b * g2[i]).epsilon(1e-12));
}

TEST_CASE("two-layer network gradients match central finite differences") {
  Rng rng(77);
  Tensor xv = random_tensor(4, 3, rng);
  Tensor w1v = random_tensor(3, 5, rng), b1v = random_tensor(1, 5, rng);
  Tensor w2v = random_tensor(5, 1, rng), b2v = random_tensor(1, 1, rng);

  auto loss = [&] {
    Graph g;
    NodeId h = g.relu(g.add(g.matmul(g.input(xv), g.input(w1v)), g.input(b1v)));
    NodeId out = g.add(g.matmul(h, g.input(w2v)), g.input(b2v));
    return g.value(g.mean(g.softplus(out)))[0];
  };

  Graph g;
  NodeId x = g.input(xv), w1 = g.input(w1v), b1 = g.input(b1v), w2 = g.input(w2v),
         b2 = g.input(b2v);
  NodeId h = g.relu(g.add(g.matmul(x, w1), b1));
  g.backward(g.mean(g.softplus(g.add(g.matmul(h, w2), b2))));

  auto check_params = [&](Tensor& v, NodeId node) {
    for (size_t i = 0; i < v.numel(); ++i) {
      double numeric = oracles::central_diff(loss, v[i]);
      CHECK_MESSAGE(oracles::grad_close(g.adjoint(node)[i], numeric),
                    "analytic=" << g.adjoint(node)[i] << " numeric=" << numeric);
    }
  };
  check_params(w1v, w1);
  check_params(b1v, b1);
  check_params(w2v, w2);
  check_params(b2v, b2);
}

TEST_CASE("train-mode batch norm gradients match finite differences") {
  Rng rng(91);
  Tensor xv = random_tensor(5, 3, rng);
  Tensor gv(1, 3), bv(1, 3);
  for (size_t i = 0; i < 3; ++i) {
    gv[i] = 0.5 + rng.uniform();
    bv[i] = rng.normal();
  }

  auto loss = [&] {
    Graph g;
    NodeId bn = g.batch_norm_train(g.input(xv), g.input(gv), g.input(bv), 1e-5);
    return g.value(g.mean(g.square(bn)))[0];
  };

  Graph g;
  NodeId x = g.input(xv), ga = g.input(gv), be = g.input(bv);
  g.backward(g.mean(g.square(g.batch_norm_train(x, ga, be, 1e-5))));

  for (auto [node, v] : {std::pair<NodeId, Tensor*>{x, &xv}, {ga, &gv}, {be, &bv}}) {
    for (size_t i = 0; i < v->numel(); ++i) {
      double numeric = oracles::central_diff(loss, (*v)[i]);
      CHECK_MESSAGE(oracles::grad_close(g.adjoint(node)[i], numeric),
                    "analytic=" << g.adjoint(node)[i] << " numeric=" << numeric);
    }
  }
}

TEST_CASE("batch norm train mode reports batch statistics and rejects single rows") {
  Graph g;
  BatchStats stats;
  NodeId x = g.input(Tensor::from(2, 1, {0.0, 2.0}));
  NodeId bn = g.batch_norm_train(x, g.input(Tensor::row({1.0})), g.input(Tensor::row({0.0})),
                                 1e-5, &stats);
  CHECK(stats.mean[0] == 1.0);
  CHECK(stats.var[0] == 1.0);
  CHECK(g.value(bn)[0] == doctest::Approx(-0.9999950000374997).epsilon(1e-12));
  CHECK(g.value(bn)[1] == doctest::Approx(0.9999950000374997).epsilon(1e-12));

  Graph g2;
  NodeId one = g2.input(Tensor::from(1, 1, {5.0}));
  CHECK_THROWS_AS(
      g2.batch_norm_train(one, g2.input(Tensor::row({1.0})), g2.input(Tensor::row({0.0})), 1e-5),
      std::invalid_argument);
}

TEST_CASE("random expression graphs pass the gradient check") {
  // varied compositions of every differentiable op, <= 50 parameters each
  for (uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed * 131);
    size_t b = 2 + size_t(rng.below(4));
    size_t d = 1 + size_t(rng.below(4));
    size_t w = 1 + size_t(rng.below(5));
    Tensor xv = random_tensor(b, d, rng);
    Tensor wv = random_tensor(d, w, rng), bv = random_tensor(1, w, rng);
    Tensor cv = random_tensor(b, w, rng);
    int flavor = int(seed % 3);

    auto build = [&](Graph& g, NodeId& w_node, NodeId& b_node) {
      NodeId x = g.input(xv);
      w_node = g.input(wv);
      b_node = g.input(bv);
      NodeId lin = g.add(g.matmul(x, w_node), b_node);
      NodeId act = flavor == 0 ? g.sigmoid(lin) : flavor == 1 ? g.softplus(lin) : g.relu(lin);
      NodeId mixed = g.mul(act, g.input(cv));
      // mixed fans out to two consumers so the backward sweep has to
      // accumulate adjoints; reversal stays out of this graph because a
      // finite-difference oracle can only validate true derivatives
      NodeId shifted = g.sub(mixed, g.scale(mixed, 0.5));
      return g.mean(g.square(shifted));
    };

    auto loss = [&] {
      Graph g;
      NodeId wn, bn;
      return g.value(build(g, wn, bn))[0];
    };

    Graph g;
    NodeId wn, bn;
    g.backward(build(g, wn, bn));
    for (auto [node, v] : {std::pair<NodeId, Tensor*>{wn, &wv}, {bn, &bv}}) {
      for (size_t i = 0; i < v->numel(); ++i) {
        double numeric = oracles::central_diff(loss, (*v)[i]);
        CHECK_MESSAGE(oracles::grad_close(g.adjoint(node)[i], numeric),
                      "seed=" << seed << " analytic=" << g.adjoint(node)[i]
                              << " numeric=" << numeric);
      }
    }
  }
}

TEST_CASE("forward values stay finite on finite inputs") {
  Rng rng(17);
  Tensor big(3, 3);
  for (size_t i = 0; i < big.numel(); ++i) big[i] = rng.uniform(-1e3, 1e3);
  Graph g;
  NodeId x = g.input(big);
  NodeId out = g.mean(g.softplus(g.mul(g.sigmoid(x), g.square(x))));
  CHECK(std::isfinite(g.value(out)[0]));
  CHECK(g.value(g.relu(x)).all_finite());
}
