#pragma once

// Experiment configuration: flat `key = value` text with dotted section
// prefixes. '#' starts a comment line. Numbers may be written as fractions
// ("8/255"); lists are comma separated.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nclab/attacks.hpp"
#include "nclab/training.hpp"

namespace nclab {

struct DatasetSpec {
  std::string kind = "gaussian";  // gaussian | image | idx | text
  int num_classes = 4;
  int n_train = 200;  // per class (generators)
  int n_test = 0;     // per class, drawn jointly with the train split
  // gaussian
  int dim = 20;
  double radius = 1.0;
  double noise = 0.1;
  // image
  int channels = 1;
  int height = 16;
  int width = 16;
  double contrast = 0.4;
  int shift = 0;  // max circular translation per sample
  // idx / text
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  InputShape shape;  // text files only
  std::optional<std::uint64_t> seed;
};

struct ModelSpec {
  std::string kind = "mlp";  // mlp | convnet
  std::vector<int> hidden{128, 128};
  std::vector<int> channels{8, 16, 32, 64};
  std::optional<std::uint64_t> seed;
};

struct ExperimentConfig {
  DatasetSpec dataset;
  ModelSpec model;
  // train.* keys; eval.attack.*, eval.every and eval.sigma land in
  // train.eval_attack, train.metric_every and train.gaussian_sigma.
  TrainConfig train;
  bool train_seed_set = false;
  // Unless set, the training attack's loss mode follows the regime (kl for
  // TRADES, ce_untargeted otherwise).
  bool train_attack_mode_set = false;
  // Radii of the evaluation sweep; empty means eval.attack.epsilon alone.
  std::vector<double> eval_epsilons;
  double eval_alpha_ratio = 0.25;  // alpha = ratio * epsilon within the sweep
  bool eval_targeted = true;
  std::string output_dir = "run";
  std::uint64_t seed = 0;

  std::uint64_t dataset_seed() const { return dataset.seed.value_or(seed); }
  std::uint64_t model_seed() const { return model.seed.value_or(seed + 1); }
  std::uint64_t train_seed() const { return train_seed_set ? train.seed : seed + 2; }
  // Training config with the resolved seed.
  TrainConfig resolved_train() const;
  std::vector<double> sweep() const;
  // Evaluation attack at one sweep radius.
  AttackConfig sweep_attack(double epsilon, LossMode mode) const;

  void validate() const;
};

// Applies one key. Throws ConfigError naming the key on unknown keys or bad values.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// `origin` prefixes error messages (file name or "<string>").
ExperimentConfig parse_config(const std::string& text, const std::string& origin = "<string>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Every key with its resolved value, one per line, in a fixed order. Parsing
// the result reproduces an equivalent config. An empty output_dir is left out.
std::string canonical_text(const ExperimentConfig& cfg);
// Hash of the canonical text with output.dir left out, so a run is
// identified by what it computes rather than where it writes.
std::uint64_t config_hash(const ExperimentConfig& cfg);

}  // namespace nclab
