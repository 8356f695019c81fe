#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "doctest.h"
#include "nclab/errors.hpp"
#include "nclab/training.hpp"

using namespace nclab;

namespace {

// Two linearly separable 2-D blobs inside [0,1]^2, gap far wider than the noise.
Dataset blobs(int n_per_class, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 0.04);
  Dataset ds;
  ds.sample_shape = {2};
  ds.num_classes = 2;
  for (int i = 0; i < n_per_class; ++i)
    for (int c = 0; c < 2; ++c) {
      const double center = c == 0 ? 0.3 : 0.7;
      ds.inputs.push_back(std::clamp(center + noise(rng), 0.0, 1.0));
      ds.inputs.push_back(std::clamp(center + noise(rng), 0.0, 1.0));
      ds.labels.push_back(c);
    }
  return ds;
}

TrainConfig short_config(int epochs) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.lr_initial = 0.1;
  cfg.lr_drops.clear();
  cfg.seed = 4;
  cfg.metric_every = 1;
  return cfg;
}

std::vector<double> flat_params(const Network& net) {
  std::vector<double> out;
  for (const auto& p : net.parameters()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

void half_square_loss(Network& net, double factor = 0.5) {
  for (auto& p : net.parameters()) backward(scale(sum(mul(p.value, p.value)), factor));
}

}  // namespace

TEST_CASE("lr_at") {
  TrainConfig cfg;
  CHECK(lr_at(cfg, 0) == 0.1);
  CHECK(lr_at(cfg, 99) == 0.1);
  CHECK(lr_at(cfg, 100) == doctest::Approx(0.01).epsilon(1e-15));
  CHECK(lr_at(cfg, 150) == doctest::Approx(0.001).epsilon(1e-15));
  cfg.lr_drops.clear();
  for (int e : {0, 50, 199}) CHECK(lr_at(cfg, e) == 0.1);
  cfg.lr_drops = {{10, 0.5}, {10, 0.2}};
  CHECK(lr_at(cfg, 9) == 0.1);
  CHECK(lr_at(cfg, 10) == doctest::Approx(0.01).epsilon(1e-15));
}

TEST_CASE("config validation") {
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.epochs = 1;
  cfg.regime = Regime::kTrades;
  cfg.beta = -1.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(TrainConfig{}.beta == 6.0);
  CHECK(parse_regime("trades") == Regime::kTrades);
  CHECK(regime_name(Regime::kAt) == "at");
  CHECK_THROWS_AS(parse_regime("sgd"), ConfigError);
}

TEST_CASE("sgd_step") {
  SUBCASE("plain step on w^2/2") {
    Network net = build_mlp(1, std::vector<int>{}, 2, 1);
    for (auto& p : net.parameters()) std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), 1.0);
    half_square_loss(net);
    sgd_step(net, 0.1, 0.0);
    for (const auto& p : net.parameters())
      for (double v : p.value.data()) CHECK(v == doctest::Approx(0.9).epsilon(1e-15));
  }
  SUBCASE("zero gradients leave parameters alone") {
    Network net = build_mlp(3, std::vector<int>{2}, 2, 2);
    const auto before = flat_params(net);
    for (int k = 0; k < 2; ++k) {
      half_square_loss(net, 0.0);
      sgd_step(net, 0.1, 0.9);
    }
    CHECK(flat_params(net) == before);
  }
  SUBCASE("momentum on a quadratic bowl") {
    Network net = build_mlp(1, std::vector<int>{}, 2, 3);
    for (auto& p : net.parameters()) std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), 1.0);
    double loss = 0.0;
    for (int k = 0; k < 200; ++k) {
      half_square_loss(net);
      sgd_step(net, 0.1, 0.9);
    }
    for (const auto& p : net.parameters())
      for (double v : p.value.data()) loss += 0.5 * v * v;
    CHECK(loss <= 1e-6);
  }
  SUBCASE("missing gradients") {
    Network net = build_mlp(3, std::vector<int>{2}, 2, 2);
    CHECK_THROWS_AS(sgd_step(net, 0.1, 0.9), ContractError);
  }
  SUBCASE("gradients are zeroed afterwards") {
    Network net = build_mlp(3, std::vector<int>{}, 2, 2);
    half_square_loss(net);
    sgd_step(net, 0.1, 0.9);
    for (const auto& p : net.parameters())
      for (double g : p.value.grad()) CHECK(g == 0.0);
  }
}

TEST_CASE("epoch_order is a deterministic permutation") {
  auto a = epoch_order(50, 7, 3);
  CHECK(a == epoch_order(50, 7, 3));
  CHECK(a != epoch_order(50, 7, 4));
  auto sorted = a;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 50; ++i) CHECK(sorted[i] == i);
}

TEST_CASE("standard training") {
  Dataset ds = blobs(40, 1);
  SUBCASE("a small step lowers the loss on its own batch") {
    Network net = build_mlp(2, std::vector<int>{8}, 2, 5);
    Tensor x = ds.to_tensor();
    const double before = softmax_cross_entropy(net.forward(x), ds.labels).item();
    backward(softmax_cross_entropy(net.forward(x), ds.labels));
    sgd_step(net, 1e-3, 0.0);
    CHECK(softmax_cross_entropy(net.forward(x), ds.labels).item() < before);
  }
  SUBCASE("separable blobs fit within 50 epochs") {
    Network net = build_mlp(2, std::vector<int>{16}, 2, 5);
    const auto logs = fit(net, ds, short_config(50), nullptr);
    CHECK(logs.back().clean_accuracy == 1.0);
    CHECK(zero_error_onset(logs).has_value());
  }
  SUBCASE("same seed, same log") {
    Network a = build_mlp(2, std::vector<int>{8}, 2, 5), b = build_mlp(2, std::vector<int>{8}, 2, 5);
    const auto la = run_epoch_st(a, ds, short_config(1), 0).log;
    const auto lb = run_epoch_st(b, ds, short_config(1), 0).log;
    CHECK(la.ce_loss == lb.ce_loss);
    CHECK(la.train_objective == lb.train_objective);
    CHECK(la.clean_accuracy == lb.clean_accuracy);
    CHECK(flat_params(a) == flat_params(b));
  }
}

TEST_CASE("regime degeneracy is bit-exact") {
  Dataset ds = blobs(30, 2);
  TrainConfig st = short_config(3);
  Network base = build_mlp(2, std::vector<int>{8}, 2, 6);
  Network ref = base.clone();
  fit(ref, ds, st, nullptr);

  SUBCASE("AT with zero radius") {
    TrainConfig at = st;
    at.regime = Regime::kAt;
    at.attack.epsilon = 0.0;
    Network net = base.clone();
    fit(net, ds, at, nullptr);
    CHECK(flat_params(net) == flat_params(ref));
  }
  SUBCASE("TRADES with zero beta") {
    TrainConfig tr = st;
    tr.regime = Regime::kTrades;
    tr.attack = AttackConfig::defaults(NormKind::kLinf, LossMode::kKl);
    tr.beta = 0.0;
    Network net = base.clone();
    fit(net, ds, tr, nullptr);
    CHECK(flat_params(net) == flat_params(ref));
  }
}

TEST_CASE("adversarial training") {
  Dataset ds = blobs(40, 3);
  TrainConfig cfg = short_config(60);
  cfg.regime = Regime::kAt;
  cfg.attack.epsilon = 0.05;  // half-gap is about 0.2
  cfg.attack.alpha = cfg.attack.epsilon / 4;
  Network net = build_mlp(2, std::vector<int>{16}, 2, 7);
  const auto logs = fit(net, ds, cfg, nullptr);
  REQUIRE(logs.back().robust_accuracy.has_value());
  CHECK(*logs.back().robust_accuracy == 1.0);

  SUBCASE("logged robust accuracy is the accuracy on the epoch's perturbations") {
    // one batch, so every perturbation is scored by the pre-update parameters
    TrainConfig one = cfg;
    one.batch_size = static_cast<int>(ds.size());
    Network before = net.clone(), a = net.clone();
    const auto res = run_epoch_at(a, ds, one, 59);
    REQUIRE(res.perturbed.has_value());
    CHECK(*res.log.robust_accuracy == accuracy(predict(before, *res.perturbed), ds.labels));
  }
}

TEST_CASE("TRADES logs the KL component") {
  Dataset ds = blobs(20, 4);
  TrainConfig cfg = short_config(2);
  cfg.regime = Regime::kTrades;
  cfg.attack = AttackConfig::defaults(NormKind::kLinf, LossMode::kKl);
  Network net = build_mlp(2, std::vector<int>{8}, 2, 8);
  const auto logs = fit(net, ds, cfg, nullptr);
  for (const auto& l : logs) {
    REQUIRE(l.robust_loss.has_value());
    CHECK(*l.robust_loss >= 0.0);
    CHECK(l.train_objective >= 0.0);
  }
}

TEST_CASE("fit hook") {
  Dataset ds = blobs(10, 5);
  SUBCASE("one epoch, one call") {
    Network net = build_mlp(2, std::vector<int>{4}, 2, 9);
    int calls = 0;
    fit(net, ds, short_config(1), [&](const EvalContext& ctx) {
      ++calls;
      CHECK(ctx.epoch == 1);
      CHECK(ctx.perturbed.size() == ds.size());
      CHECK(ctx.gaussian.size() == ds.size());
    });
    CHECK(calls == 1);
  }
  SUBCASE("cadence includes the last epoch") {
    Network net = build_mlp(2, std::vector<int>{4}, 2, 9);
    TrainConfig cfg = short_config(7);
    cfg.metric_every = 3;
    std::vector<int> seen;
    fit(net, ds, cfg, [&](const EvalContext& ctx) { seen.push_back(ctx.epoch); });
    CHECK(seen == std::vector<int>{3, 6, 7});
  }
  SUBCASE("AT hands over the training perturbations") {
    TrainConfig cfg = short_config(1);
    cfg.regime = Regime::kAt;
    cfg.attack.epsilon = 0.05;
    cfg.attack.alpha = 0.0125;
    Network a = build_mlp(2, std::vector<int>{4}, 2, 9);
    Network b = a.clone();
    std::vector<double> handed;
    fit(a, ds, cfg, [&](const EvalContext& ctx) { handed = ctx.perturbed.inputs; });
    const auto res = run_epoch_at(b, ds, cfg, 0);
    CHECK(handed == res.perturbed->to_vector());
  }
  SUBCASE("errors carry the epoch") {
    Network net = build_mlp(2, std::vector<int>{4}, 2, 9);
    TrainConfig cfg = short_config(4);
    cfg.metric_every = 2;
    try {
      fit(net, ds, cfg, [](const EvalContext& ctx) {
        if (ctx.epoch == 4) throw DataError("hook failed");
      });
      FAIL("expected an error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("epoch 4") != std::string::npos);
      CHECK(msg.find("hook failed") != std::string::npos);
    }
  }
  SUBCASE("unbalanced data is refused") {
    Dataset uneven = ds;
    uneven.labels[0] = 1;
    Network net = build_mlp(2, std::vector<int>{4}, 2, 9);
    CHECK_THROWS_AS(fit(net, uneven, short_config(1), [](const EvalContext&) {}), DataError);
  }
}

TEST_CASE("property: loss settles at the final schedule stage") {
  Dataset ds = blobs(40, 6);
  TrainConfig cfg = short_config(80);
  cfg.lr_drops = {{30, 0.1}};
  Network net = build_mlp(2, std::vector<int>{16}, 2, 10);
  const auto logs = fit(net, ds, cfg, nullptr);
  auto window = [&](std::size_t end) {
    double s = 0.0;
    for (std::size_t k = end - 10; k < end; ++k) s += logs[k].ce_loss;
    return s / 10.0;
  };
  for (std::size_t end = 40; end < logs.size(); ++end) CHECK(window(end + 1) <= window(end) + 1e-12);
}
