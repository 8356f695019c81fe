#include <string>

#include "doctest.h"
#include "nclab/config.hpp"
#include "nclab/errors.hpp"

using namespace nclab;

namespace {

std::string error_of(const std::string& text) {
  try {
    parse_config(text, "exp.cfg");
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

const char* kSample = R"(# desk-scale AT run
seed = 5
output.dir = out/at
dataset.kind = gaussian
dataset.classes = 4
dataset.n_train = 50
dataset.dim = 12
dataset.noise = 0.35
model.kind = mlp
model.hidden = 32, 32
train.regime = at
train.epochs = 30
train.lr_drops = 15:0.1, 25:0.1
train.attack.norm = l2
train.attack.epsilon = 32/255
train.attack.alpha = 8/255
eval.epsilons = 2/255, 4/255, 8/255
eval.every = 3
)";

}  // namespace

TEST_CASE("parse_config") {
  const auto cfg = parse_config(kSample);
  CHECK(cfg.seed == 5);
  CHECK(cfg.output_dir == "out/at");
  CHECK(cfg.dataset.num_classes == 4);
  CHECK(cfg.dataset.noise == 0.35);
  CHECK(cfg.model.hidden == std::vector<int>{32, 32});
  CHECK(cfg.train.regime == Regime::kAt);
  CHECK(cfg.train.epochs == 30);
  REQUIRE(cfg.train.lr_drops.size() == 2);
  CHECK(cfg.train.lr_drops[1].epoch == 25);
  CHECK(cfg.train.attack.norm == NormKind::kL2);
  CHECK(cfg.train.attack.epsilon == 32.0 / 255.0);
  CHECK(cfg.train.attack.alpha == 8.0 / 255.0);
  CHECK(cfg.train.metric_every == 3);
  CHECK(cfg.train.attack.loss_mode == LossMode::kCeUntargeted);

  SUBCASE("derived seeds") {
    CHECK(cfg.dataset_seed() == 5);
    CHECK(cfg.model_seed() == 6);
    CHECK(cfg.train_seed() == 7);
    CHECK(cfg.resolved_train().seed == 7);
  }
  SUBCASE("TRADES picks the KL attack unless told otherwise") {
    const auto t = parse_config("train.regime = trades\n");
    CHECK(t.resolved_train().attack.loss_mode == LossMode::kKl);
    CHECK(t.resolved_train().beta == 6.0);
  }
}

TEST_CASE("epsilon sweep scales alpha with epsilon") {
  const auto cfg = parse_config(kSample);
  const auto eps = cfg.sweep();
  REQUIRE(eps.size() == 3);
  const std::vector<double> alphas{0.5 / 255.0, 1.0 / 255.0, 2.0 / 255.0};
  for (std::size_t i = 0; i < 3; ++i) {
    const auto a = cfg.sweep_attack(eps[i], LossMode::kCeUntargeted);
    CHECK(a.epsilon == eps[i]);
    CHECK(a.alpha == doctest::Approx(alphas[i]).epsilon(1e-15));
  }
  const auto single = parse_config("eval.attack.epsilon = 4/255\neval.attack.alpha = 1/255\n");
  CHECK(single.sweep() == std::vector<double>{4.0 / 255.0});
  CHECK(single.sweep_attack(4.0 / 255.0, LossMode::kCeTargeted).alpha == 1.0 / 255.0);
}

TEST_CASE("parse errors carry the line and key") {
  std::string msg = error_of("seed = 1\ntrain.epochs = ten\n");
  CHECK(contains(msg, "exp.cfg:2"));
  CHECK(contains(msg, "train.epochs"));

  msg = error_of("model.width = 3\n");
  CHECK(contains(msg, "exp.cfg:1"));
  CHECK(contains(msg, "unknown key 'model.width'"));

  msg = error_of("\n\njust words\n");
  CHECK(contains(msg, "exp.cfg:3"));

  CHECK(contains(error_of("train.attack.norm = l3\n"), "train.attack.norm"));
  CHECK(contains(error_of("train.lr_drops = 100\n"), "epoch:factor"));
  CHECK(contains(error_of("eval.targeted = maybe\n"), "eval.targeted"));
  CHECK(contains(error_of("train.attack.epsilon = 1/0\n"), "train.attack.epsilon"));
  CHECK(contains(error_of("dataset.classes = 1\n"), "dataset.classes"));
  CHECK(contains(error_of("train.epochs = 0\n"), "exp.cfg"));
  CHECK_FALSE(error_of("# only a comment\n\n").size());
}

TEST_CASE("canonical text and hash") {
  const auto cfg = parse_config(kSample);
  const std::string text = canonical_text(cfg);
  const auto again = parse_config(text);
  CHECK(canonical_text(again) == text);
  CHECK(config_hash(again) == config_hash(cfg));

  SUBCASE("output.dir does not enter the hash") {
    auto moved = cfg;
    moved.output_dir = "elsewhere";
    CHECK(config_hash(moved) == config_hash(cfg));
    CHECK(canonical_text(moved) != text);
  }
  SUBCASE("any computed setting changes the hash") {
    auto other = cfg;
    other.train.epochs = 31;
    CHECK(config_hash(other) != config_hash(cfg));
    other = cfg;
    other.dataset.shift = 1;
    CHECK(config_hash(other) != config_hash(cfg));
  }
  SUBCASE("implicit and explicit seeds agree") {
    const auto spelled = parse_config(std::string(kSample) + "dataset.seed = 5\nmodel.seed = 6\ntrain.seed = 7\n");
    CHECK(canonical_text(spelled) == text);
  }
}

TEST_CASE("apply_setting") {
  ExperimentConfig cfg;
  apply_setting(cfg, "train.beta", "3");
  CHECK(cfg.train.beta == 3.0);
  apply_setting(cfg, "eval.attack.random_start", "yes");
  CHECK(cfg.train.eval_attack.random_start);
  apply_setting(cfg, "train.lr_drops", "none");
  CHECK(cfg.train.lr_drops.empty());
  CHECK_THROWS_AS(apply_setting(cfg, "train.nope", "1"), ConfigError);
}
