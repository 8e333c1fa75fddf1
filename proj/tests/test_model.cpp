#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "doctest.h"
#include "grad/model.hpp"
#include "grad/rng.hpp"
#include "grad/tensor.hpp"

using grad::GradNetwork;
using grad::NetworkConfig;
using grad::Tensor;
using grad::Variant;

namespace {

NetworkConfig pred_cfg(size_t input_dim, size_t n_protected, double lambda = 100.0) {
  NetworkConfig cfg;
  cfg.variant = Variant::Pred;
  cfg.input_dim = input_dim;
  cfg.lambda = lambda;
  cfg.n_protected = n_protected;
  return cfg;
}

void zero_params_matching(GradNetwork& net, const std::string& prefix) {
  for (auto& p : net.parameters())
    if (p.name.rfind(prefix, 0) == 0) p.tensor->fill(0.0);
}

Tensor random_batch(size_t b, size_t d, uint64_t seed, double scale = 1.0) {
  grad::Rng rng(seed);
  Tensor x(b, d);
  for (size_t i = 0; i < x.numel(); ++i) x[i] = scale * rng.normal();
  return x;
}

Tensor pm_column(std::vector<double> v) {
  Tensor t(v.size(), 1);
  for (size_t i = 0; i < v.size(); ++i) t[i] = v[i];
  return t;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  // trunk 10->40->40, target 40->40->1, one attribute branch 40->40->1:
  // (10*40+40) + (40*40+40) + 2*((40*40+40) + (40*1+1)) = 5442
  GradNetwork net(pred_cfg(10, 1), 0);
  CHECK(net.dense_param_count() == 5442);
}

TEST_CASE("auto target branch reconstructs the input width") {
  NetworkConfig cfg = pred_cfg(7, 1);
  cfg.variant = Variant::Auto;
  GradNetwork net(cfg, 3);
  bool found = false;
  for (auto& p : net.state()) {
    if (p.name == "target.l1.w") {
      CHECK(p.tensor->rows() == 40);
      CHECK(p.tensor->cols() == 7);
      found = true;
    }
  }
  CHECK(found);
}

TEST_CASE("baseline network has no attribute branches") {
  GradNetwork net(pred_cfg(5, 0), 1);
  for (auto& p : net.state()) CHECK(p.name.rfind("attr", 0) != 0);
  // and an unprotected forward needs no attribute labels
  grad::LossGraph lg = net.forward_loss(random_batch(4, 5, 11), pm_column({1, -1, 1, -1}), Tensor());
  CHECK(std::isfinite(lg.graph.value(lg.total)[0]));
  CHECK(lg.attr_losses.empty());
}

TEST_CASE("zeroed output layers give the softplus(0) losses") {
  GradNetwork net(pred_cfg(3, 1), 42);
  zero_params_matching(net, "target.l1.");
  zero_params_matching(net, "attr0.l1.");
  Tensor x = random_batch(2, 3, 5);
  grad::LossGraph lg = net.forward_loss(x, pm_column({1, -1}), pm_column({-1, 1}));
  const double ln2 = std::log(2.0);
  CHECK(lg.target_loss == doctest::Approx(ln2).epsilon(1e-12));
  REQUIRE(lg.attr_losses.size() == 1);
  CHECK(lg.attr_losses[0] == doctest::Approx(ln2).epsilon(1e-12));
  // total = l_t + 100 * l_p = 101 * ln 2
  CHECK(lg.graph.value(lg.total)[0] == doctest::Approx(101.0 * ln2).epsilon(1e-12));
}

TEST_CASE("auto variant reconstruction loss vanishes on the zero network") {
  NetworkConfig cfg = pred_cfg(4, 1);
  cfg.variant = Variant::Auto;
  GradNetwork net(cfg, 9);
  for (auto& p : net.parameters()) p.tensor->fill(0.0);
  Tensor x(2, 4);  // all zeros
  grad::LossGraph lg = net.forward_loss(x, Tensor(), pm_column({1, -1}));
  CHECK(lg.target_loss == 0.0);
  CHECK(lg.graph.value(lg.total)[0] ==
        doctest::Approx(100.0 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("lambda zero makes the joint loss exactly the target loss") {
  GradNetwork net(pred_cfg(6, 2, /*lambda=*/0.0), 17);
  Tensor x = random_batch(4, 6, 23);
  Tensor a(4, 2);
  for (size_t i = 0; i < 8; ++i) a[i] = (i % 3 == 0) ? 1.0 : -1.0;
  grad::LossGraph lg = net.forward_loss(x, pm_column({1, 1, -1, -1}), a);
  CHECK(lg.graph.value(lg.total)[0] == lg.target_loss);
}

TEST_CASE("label encoding is validated") {
  GradNetwork net(pred_cfg(3, 1), 0);
  Tensor x = random_batch(2, 3, 1);
  CHECK_THROWS_AS(net.forward_loss(x, pm_column({1, 0}), pm_column({1, -1})),
                  std::invalid_argument);
  CHECK_THROWS_AS(net.forward_loss(x, pm_column({1, -1}), pm_column({0.5, -1})),
                  std::invalid_argument);
  // missing attribute labels for a protected config
  CHECK_THROWS_WITH_AS(net.forward_loss(x, pm_column({1, -1}), Tensor()),
                       doctest::Contains("protected labels required"), std::invalid_argument);
  // wrong input width
  CHECK_THROWS_AS(net.forward_loss(random_batch(2, 4, 1), pm_column({1, -1}), pm_column({1, -1})),
                  std::invalid_argument);
}

TEST_CASE("predict is a thresholded sigmoid of the target activation") {
  GradNetwork net(pred_cfg(3, 0), 8);
  zero_params_matching(net, "target.l1.");
  Tensor x = random_batch(5, 3, 2);
  auto out = net.predict(x);
  REQUIRE(out.prob.size() == 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(out.prob[i] == 0.5);  // activation is exactly zero
    CHECK(out.label[i] == 1);   // ties break toward the positive class
  }

  // a large output bias saturates the probability on both sides
  for (auto& p : net.parameters())
    if (p.name == "target.l1.b") p.tensor->fill(50.0);
  out = net.predict(x);
  for (int i = 0; i < 5; ++i) {
    // sigmoid(50) rounds to exactly 1.0 in double precision
    CHECK(out.prob[i] >= 1.0 - 1e-12);
    CHECK(out.label[i] == 1);
  }
  for (auto& p : net.parameters())
    if (p.name == "target.l1.b") p.tensor->fill(-50.0);
  out = net.predict(x);
  for (int i = 0; i < 5; ++i) {
    CHECK(out.prob[i] < 1e-20);
    CHECK(out.label[i] == 0);
  }
}

TEST_CASE("same seed, same predictions") {
  Tensor x = random_batch(6, 4, 31);
  GradNetwork a(pred_cfg(4, 1), 77), b(pred_cfg(4, 1), 77);
  auto pa = a.predict(x), pb = b.predict(x);
  for (size_t i = 0; i < pa.prob.size(); ++i) CHECK(pa.prob[i] == pb.prob[i]);
}

TEST_CASE("auto variant refuses direct prediction") {
  NetworkConfig cfg = pred_cfg(3, 0);
  cfg.variant = Variant::Auto;
  GradNetwork net(cfg, 0);
  CHECK_THROWS_WITH_AS(net.predict(random_batch(2, 3, 1)), doctest::Contains("Pred variant"),
                       std::invalid_argument);
}

TEST_CASE("encode yields the trunk width and is batch-order invariant") {
  GradNetwork net(pred_cfg(5, 1), 13);
  Tensor x = random_batch(4, 5, 19);
  Tensor all = net.encode(x);
  CHECK(all.rows() == 4);
  CHECK(all.cols() == 40);
  for (size_t i = 0; i < 4; ++i) {
    Tensor one(1, 5);
    for (size_t j = 0; j < 5; ++j) one[j] = x.at(i, j);
    Tensor row = net.encode(one);
    for (size_t j = 0; j < 40; ++j) CHECK(row[j] == all.at(i, j));
  }
}

TEST_CASE("logistic head fits a separable line") {
  Tensor reps = pm_column({-2.0, -1.5, 1.5, 2.0});
  std::vector<int> y = {0, 0, 1, 1};
  grad::LogisticHead head = grad::fit_logistic_head(reps, y, 5, 5000);
  auto out = grad::apply_logistic_head(head, reps);
  for (size_t i = 0; i < y.size(); ++i) CHECK(out.label[i] == y[i]);

  grad::LogisticHead again = grad::fit_logistic_head(reps, y, 5, 5000);
  for (size_t i = 0; i < head.weights.numel(); ++i)
    CHECK(head.weights[i] == again.weights[i]);
  CHECK(head.bias[0] == again.bias[0]);
}

TEST_CASE("logistic head on single-class labels predicts that class") {
  Tensor reps = pm_column({0.5, 1.0, 2.0});
  grad::LogisticHead head = grad::fit_logistic_head(reps, {1, 1, 1}, 3, 5000);
  auto out = grad::apply_logistic_head(head, reps);
  for (int lab : out.label) CHECK(lab == 1);
  head = grad::fit_logistic_head(reps, {0, 0, 0}, 3, 5000);
  out = grad::apply_logistic_head(head, reps);
  for (int lab : out.label) CHECK(lab == 0);

  CHECK_THROWS_AS(grad::fit_logistic_head(reps, {1, 1}, 0, 10), std::invalid_argument);
}

TEST_CASE("reversal negates the attribute contribution to trunk gradients") {
  NetworkConfig base = pred_cfg(4, 1);
  base.hidden_width = 8;
  NetworkConfig off = base;
  off.lambda = 0.0;

  GradNetwork net(base, 21), net_ctl(base, 21), net_off(off, 21);
  Tensor x = random_batch(6, 4, 99);
  Tensor y = pm_column({1, -1, 1, 1, -1, -1});
  Tensor a = pm_column({-1, -1, 1, 1, 1, -1});

  auto grads_of = [&](GradNetwork& n, bool reverse) {
    grad::LossGraph lg = n.forward_loss(x, y, a, reverse);
    return lg.graph.gradients(lg.total, lg.param_nodes);
  };
  std::vector<Tensor> g_rev = grads_of(net, true);
  std::vector<Tensor> g_id = grads_of(net_ctl, false);
  std::vector<Tensor> g_base = grads_of(net_off, true);

  auto params = net.parameters();
  REQUIRE(g_rev.size() == params.size());
  for (size_t p = 0; p < params.size(); ++p) {
    const bool trunk = params[p].name.rfind("trunk.", 0) == 0;
    const bool attr = params[p].name.rfind("attr", 0) == 0;
    for (size_t i = 0; i < g_rev[p].numel(); ++i) {
      if (trunk) {
        const double c_rev = g_rev[p][i] - g_base[p][i];
        const double c_id = g_id[p][i] - g_base[p][i];
        CHECK(std::abs(c_rev + c_id) <=
              1e-12 * std::max({1.0, std::abs(c_rev), std::abs(c_id)}));
      } else if (attr) {
        // the reversal sits upstream of the branch, so its own gradients
        // are identical either way
        CHECK(g_rev[p][i] == g_id[p][i]);
      } else {
        // target branch never sees the reversal
        CHECK(g_rev[p][i] == g_id[p][i]);
      }
    }
  }
}

TEST_CASE("losses stay finite on extreme inputs") {
  GradNetwork net(pred_cfg(3, 1), 4);
  Tensor x = random_batch(4, 3, 6, /*scale=*/1e3);
  grad::LossGraph lg = net.forward_loss(x, pm_column({1, -1, 1, -1}), pm_column({1, 1, -1, -1}));
  CHECK(std::isfinite(lg.graph.value(lg.total)[0]));
  std::vector<Tensor> grads = lg.graph.gradients(lg.total, lg.param_nodes);
  for (const Tensor& g : grads)
    for (size_t i = 0; i < g.numel(); ++i) CHECK(std::isfinite(g[i]));
}

TEST_CASE("state round-trips through load_state") {
  GradNetwork src(pred_cfg(4, 2), 55);
  // nudge the state away from init so the copy is meaningful
  for (auto& p : src.parameters())
    for (size_t i = 0; i < p.tensor->numel(); ++i) (*p.tensor)[i] += 0.01 * double(i % 7);

  std::vector<std::pair<std::string, Tensor>> saved;
  for (auto& p : src.state()) saved.emplace_back(p.name, *p.tensor);

  GradNetwork dst(pred_cfg(4, 2), 999);  // different seed; load overwrites
  dst.load_state(saved);
  Tensor x = random_batch(3, 4, 12);
  Tensor hs = src.encode(x), hd = dst.encode(x);
  for (size_t i = 0; i < hs.numel(); ++i) CHECK(hs[i] == hd[i]);

  SUBCASE("missing tensor") {
    auto broken = saved;
    broken.pop_back();
    GradNetwork n(pred_cfg(4, 2), 0);
    CHECK_THROWS_WITH_AS(n.load_state(broken), doctest::Contains("missing tensor"),
                         std::runtime_error);
  }
  SUBCASE("shape mismatch") {
    auto broken = saved;
    broken[0].second = Tensor(1, 1);
    GradNetwork n(pred_cfg(4, 2), 0);
    CHECK_THROWS_WITH_AS(n.load_state(broken), doctest::Contains("shape mismatch"),
                         std::runtime_error);
  }
  SUBCASE("unexpected tensor") {
    auto broken = saved;
    broken.emplace_back("stowaway", Tensor(1, 1));
    GradNetwork n(pred_cfg(4, 2), 0);
    CHECK_THROWS_WITH_AS(n.load_state(broken), doctest::Contains("unexpected tensor"),
                         std::runtime_error);
  }
}

TEST_CASE("bad network configs are rejected") {
  CHECK_THROWS_AS(GradNetwork(pred_cfg(0, 1), 0), std::invalid_argument);
  NetworkConfig cfg = pred_cfg(3, 0);
  cfg.hidden_width = 0;
  CHECK_THROWS_AS(GradNetwork(cfg, 0), std::invalid_argument);
  cfg = pred_cfg(3, 0);
  cfg.layers_per_branch = 0;
  CHECK_THROWS_AS(GradNetwork(cfg, 0), std::invalid_argument);
  cfg = pred_cfg(3, 0, /*lambda=*/-1.0);
  CHECK_THROWS_AS(GradNetwork(cfg, 0), std::invalid_argument);

  CHECK(std::string(grad::variant_name(Variant::Auto)) == "auto");
  CHECK(grad::variant_from_name("pred") == Variant::Pred);
  CHECK_THROWS_AS(grad::variant_from_name("frobnicate"), std::invalid_argument);
}
