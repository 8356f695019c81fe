// Command-line front end. Talks to the library only through the C interface.

#include <cstdio>
#include <cstdlib>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "nclab/nclab.h"

namespace {

struct CliError {
  int code;
};

void check(nclab_status s, const std::string& what) {
  if (s == NCLAB_OK) return;
  std::fprintf(stderr, "nclab: %s: %s: %s\n", what.c_str(), nclab_status_name(s), nclab_last_error());
  throw CliError{static_cast<int>(s)};
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using ConfigPtr = std::unique_ptr<nclab_config, Deleter<nclab_config, nclab_config_free>>;
using NetworkPtr = std::unique_ptr<nclab_network, Deleter<nclab_network, nclab_network_free>>;
using DatasetPtr = std::unique_ptr<nclab_dataset, Deleter<nclab_dataset, nclab_dataset_free>>;

// Options shared by every subcommand.
struct Common {
  std::string config_path;
  std::vector<std::string> settings;  // key=value
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config_path, "experiment config file (key = value lines)");
  app->add_option("-s,--set", c.settings, "override one config key, as key=value (repeatable)");
  app->allow_extras();
}

// Accepts --key=value and --key value for any config key.
std::vector<std::pair<std::string, std::string>> extra_settings(const CLI::App* app) {
  std::vector<std::pair<std::string, std::string>> out;
  const auto extras = app->remaining();
  for (std::size_t i = 0; i < extras.size(); ++i) {
    std::string tok = extras[i];
    if (tok.rfind("--", 0) != 0) {
      std::fprintf(stderr, "nclab: unexpected argument '%s'\n", tok.c_str());
      throw CliError{NCLAB_ERR_ARGUMENT};
    }
    tok = tok.substr(2);
    const auto eq = tok.find('=');
    if (eq != std::string::npos) {
      out.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
    } else if (i + 1 < extras.size()) {
      out.emplace_back(tok, extras[++i]);
    } else {
      std::fprintf(stderr, "nclab: option '--%s' needs a value\n", tok.c_str());
      throw CliError{NCLAB_ERR_ARGUMENT};
    }
  }
  return out;
}

ConfigPtr make_config(const CLI::App* app, const Common& c) {
  nclab_config* raw = nullptr;
  if (c.config_path.empty()) {
    check(nclab_config_default(&raw), "config");
  } else {
    check(nclab_config_load(c.config_path.c_str(), &raw), "config");
  }
  ConfigPtr cfg(raw);
  for (const auto& s : c.settings) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) {
      std::fprintf(stderr, "nclab: --set expects key=value, got '%s'\n", s.c_str());
      throw CliError{NCLAB_ERR_ARGUMENT};
    }
    check(nclab_config_set(cfg.get(), s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()), "--set " + s);
  }
  for (const auto& [k, v] : extra_settings(app)) check(nclab_config_set(cfg.get(), k.c_str(), v.c_str()), "--" + k);
  check(nclab_config_validate(cfg.get()), "config");
  return cfg;
}

DatasetPtr load_split(const nclab_config* cfg, const std::string& split) {
  int which = 0;
  if (split == "test") which = 1;
  else if (split != "train") {
    std::fprintf(stderr, "nclab: split must be train or test, got '%s'\n", split.c_str());
    throw CliError{NCLAB_ERR_ARGUMENT};
  }
  nclab_dataset* raw = nullptr;
  check(nclab_dataset_from_config(cfg, which, &raw), split + " dataset");
  return DatasetPtr(raw);
}

std::optional<DatasetPtr> try_test_split(const nclab_config* cfg) {
  nclab_dataset* raw = nullptr;
  if (nclab_dataset_from_config(cfg, 1, &raw) != NCLAB_OK) return std::nullopt;
  return DatasetPtr(raw);
}

NetworkPtr load_network(const std::string& path, const Common& c, const nclab_config* cfg, const nclab_dataset* ds) {
  nclab_network* raw = nullptr;
  check(nclab_network_load(path.c_str(), &raw), "checkpoint");
  NetworkPtr net(raw);
  // With an explicit config the checkpoint must be the model it describes.
  if (!c.config_path.empty() && ds) check(nclab_network_check(net.get(), cfg, ds), "checkpoint");
  return net;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural Collapse geometry under adversarial perturbations"};
  app.set_version_flag("--version", std::string(nclab_version()));
  app.require_subcommand(1);

  Common train_c, attack_c, report_c, layer_c, leap_c, config_c;
  bool quiet = false;
  std::string out_dir;
  auto* train = app.add_subcommand("train", "train a model and write per-epoch metrics");
  add_common(train, train_c);
  train->add_option("-o,--output-dir", out_dir, "run directory (output.dir)");
  train->add_flag("-q,--quiet", quiet, "no progress lines");

  std::string checkpoint, split = "train", images_out, labels_out, loss_mode;
  const auto modes = CLI::IsMember({"ce_untargeted", "ce_targeted", "kl"});
  auto* attack = app.add_subcommand("attack", "perturb a dataset with a checkpoint (eval.attack.* settings)");
  add_common(attack, attack_c);
  attack->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  attack->add_option("--split", split, "train or test");
  attack->add_option("--loss-mode", loss_mode, "override eval.attack.loss_mode")->check(modes);
  attack->add_option("--images-out", images_out, "perturbed images, float64 IDX")->required();
  attack->add_option("--labels-out", labels_out, "labels, IDX")->required();

  std::string ref_split, features, ref_features, export_path, export_format = "binary", out = "-";
  int classes = 0;
  auto* report = app.add_subcommand("nc-report", "penultimate NC metrics for a checkpoint or FeatureSet files");
  add_common(report, report_c);
  report->add_option("--checkpoint", checkpoint, "model checkpoint");
  report->add_option("--split", split, "evaluated split: train or test");
  report->add_option("--reference-split", ref_split, "split whose class means define the NCC rule");
  report->add_option("--features", features, "evaluated FeatureSet file instead of a dataset");
  report->add_option("--reference-features", ref_features, "reference FeatureSet file");
  report->add_option("--classes", classes, "class count for FeatureSet files");
  report->add_option("--export-features", export_path, "also write the evaluated penultimate features");
  report->add_option("--export-format", export_format, "binary or text")->check(CLI::IsMember({"binary", "text"}));
  report->add_option("-o,--out", out, "output file, - for stdout");

  std::size_t max_dim = 512;
  auto* layer = app.add_subcommand("layerwise", "per-tap NC metrics on clean and perturbed data");
  add_common(layer, layer_c);
  layer->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  layer->add_option("--max-dim", max_dim, "pool each tap down to at most this many features");
  layer->add_option("-o,--out", out, "output file, - for stdout");

  auto* leap = app.add_subcommand("cluster-leap", "where perturbed representations land (targeted by default)");
  add_common(leap, leap_c);
  leap->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
  leap->add_option("--split", split, "train or test");
  leap->add_option("--loss-mode", loss_mode, "attack loss mode (default ce_targeted)")->check(modes);
  leap->add_option("-o,--out", out, "output file, - for stdout");

  auto* show = app.add_subcommand("config", "print the resolved config");
  add_common(show, config_c);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      auto cfg = make_config(train, train_c);
      if (!out_dir.empty()) check(nclab_config_set(cfg.get(), "output.dir", out_dir.c_str()), "--output-dir");
      check(nclab_run_experiment(cfg.get(), quiet ? 0 : 1), "train");
    } else if (*attack) {
      auto cfg = make_config(attack, attack_c);
      auto ds = load_split(cfg.get(), split);
      auto net = load_network(checkpoint, attack_c, cfg.get(), ds.get());
      double success = 0.0;
      check(nclab_attack(net.get(), ds.get(), cfg.get(), loss_mode.empty() ? nullptr : loss_mode.c_str(), images_out.c_str(), labels_out.c_str(), &success), "attack");
      std::printf("attack_success=%.6f\n", success);
    } else if (*report) {
      auto cfg = make_config(report, report_c);
      if (!features.empty()) {
        NetworkPtr net;
        if (!checkpoint.empty()) net = load_network(checkpoint, report_c, cfg.get(), nullptr);
        check(nclab_nc_report_features(features.c_str(), ref_features.empty() ? nullptr : ref_features.c_str(),
                                       classes, net.get(), cfg.get(), out.c_str()),
              "nc-report");
      } else {
        if (checkpoint.empty()) {
          std::fprintf(stderr, "nclab: nc-report needs --checkpoint or --features\n");
          return NCLAB_ERR_ARGUMENT;
        }
        auto eval = load_split(cfg.get(), split);
        auto net = load_network(checkpoint, report_c, cfg.get(), eval.get());
        DatasetPtr ref;
        if (!ref_split.empty()) ref = load_split(cfg.get(), ref_split);
        check(nclab_nc_report(net.get(), ref.get(), eval.get(), cfg.get(), out.c_str()), "nc-report");
        if (!export_path.empty()) {
          check(nclab_export_features(net.get(), eval.get(), export_path.c_str(), export_format == "binary"),
                "export features");
        }
      }
    } else if (*layer) {
      auto cfg = make_config(layer, layer_c);
      auto train_ds = load_split(cfg.get(), "train");
      auto test_ds = try_test_split(cfg.get());
      auto net = load_network(checkpoint, layer_c, cfg.get(), train_ds.get());
      check(nclab_layerwise(net.get(), train_ds.get(), test_ds ? test_ds->get() : nullptr, cfg.get(), max_dim,
                            out.c_str()),
            "layerwise");
    } else if (*leap) {
      auto cfg = make_config(leap, leap_c);
      auto ds = load_split(cfg.get(), split);
      auto net = load_network(checkpoint, leap_c, cfg.get(), ds.get());
      check(nclab_cluster_leap(net.get(), ds.get(), cfg.get(), loss_mode.empty() ? "ce_targeted" : loss_mode.c_str(),
                             out.c_str()), "cluster-leap");
    } else if (*show) {
      auto cfg = make_config(show, config_c);
      std::size_t needed = 0;
      check(nclab_config_text(cfg.get(), nullptr, 0, &needed), "config");
      std::string text(needed, '\0');
      check(nclab_config_text(cfg.get(), text.data(), text.size(), &needed), "config");
      std::fputs(text.c_str(), stdout);
    }
  } catch (const CliError& e) {
    return e.code;
  }
  return 0;
}
