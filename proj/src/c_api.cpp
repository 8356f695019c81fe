#include "nclab/nclab.h"

#include <fstream>
#include <limits>
#include <optional>
#include <stdexcept>
#include <iostream>
#include <memory>
#include <string>

#include "nclab/attacks.hpp"
#include "nclab/checkpoint.hpp"
#include "nclab/config.hpp"
#include "nclab/data.hpp"
#include "nclab/errors.hpp"
#include "nclab/experiment.hpp"
#include "nclab/feature_io.hpp"
#include "nclab/layerwise.hpp"

struct nclab_config {
  nclab::ExperimentConfig value;
};
struct nclab_network {
  nclab::Network value;
};
struct nclab_dataset {
  nclab::Dataset value;
};

namespace {

thread_local std::string g_last_error;

nclab_status fail(nclab_status status, std::string message) {
  g_last_error = std::move(message);
  return status;
}

template <typename Fn>
nclab_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return NCLAB_OK;
  } catch (const nclab::DimensionError& e) {
    return fail(NCLAB_ERR_DIMENSION, e.what());
  } catch (const nclab::IndexError& e) {
    return fail(NCLAB_ERR_INDEX, e.what());
  } catch (const nclab::ContractError& e) {
    return fail(NCLAB_ERR_CONTRACT, e.what());
  } catch (const nclab::ConfigError& e) {
    return fail(NCLAB_ERR_CONFIG, e.what());
  } catch (const nclab::FormatError& e) {
    return fail(NCLAB_ERR_FORMAT, e.what());
  } catch (const nclab::DataError& e) {
    return fail(NCLAB_ERR_DATA, e.what());
  } catch (const nclab::NumericError& e) {
    return fail(NCLAB_ERR_NUMERIC, e.what());
  } catch (const nclab::DegenerateError& e) {
    return fail(NCLAB_ERR_DEGENERATE, e.what());
  } catch (const nclab::IoError& e) {
    return fail(NCLAB_ERR_IO, e.what());
  } catch (const std::invalid_argument& e) {
    return fail(NCLAB_ERR_ARGUMENT, e.what());
  } catch (const std::exception& e) {
    return fail(NCLAB_ERR_INTERNAL, e.what());
  } catch (...) {
    return fail(NCLAB_ERR_INTERNAL, "unknown failure");
  }
}

template <typename T>
void require(const T* p, const char* what) {
  if (!p) throw std::invalid_argument(std::string(what) + " must not be null");
}

// Writes through fn to a file, or to stdout for "-".
template <typename Fn>
void with_output(const char* path, Fn&& fn) {
  require(path, "output path");
  const std::string p(path);
  if (p == "-") {
    fn(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw nclab::IoError("cannot open '" + p + "' for writing");
  fn(out);
  out.flush();
  if (!out) throw nclab::IoError("write failed for '" + p + "'");
}

const nclab::ExperimentConfig& config_or_default(const nclab_config* cfg) {
  static const nclab::ExperimentConfig kDefault;
  return cfg ? cfg->value : kDefault;
}

nclab::AttackConfig report_attack(const nclab_config* cfg, const char* loss_mode) {
  nclab::AttackConfig a = cfg->value.train.eval_attack;
  if (loss_mode) {
    try {
      a.loss_mode = nclab::parse_loss_mode(loss_mode);
    } catch (const nclab::Error& e) {
      throw std::invalid_argument(e.what());
    }
  }
  a.validate();
  return a;
}

template <typename T, typename Make>
nclab_status make_handle(T** out, Make&& make) {
  if (!out) return fail(NCLAB_ERR_ARGUMENT, "output handle pointer must not be null");
  *out = nullptr;
  return guarded([&] { *out = new T{make()}; });
}

}  // namespace

extern "C" {

const char* nclab_version(void) { return nclab::version_string(); }

const char* nclab_status_name(nclab_status status) {
  switch (status) {
    case NCLAB_OK: return "ok";
    case NCLAB_ERR_ARGUMENT: return "argument error";
    case NCLAB_ERR_DIMENSION: return "dimension error";
    case NCLAB_ERR_INDEX: return "index error";
    case NCLAB_ERR_CONTRACT: return "contract error";
    case NCLAB_ERR_CONFIG: return "config error";
    case NCLAB_ERR_FORMAT: return "format error";
    case NCLAB_ERR_DATA: return "data error";
    case NCLAB_ERR_NUMERIC: return "numeric error";
    case NCLAB_ERR_DEGENERATE: return "degenerate error";
    case NCLAB_ERR_IO: return "io error";
    case NCLAB_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* nclab_last_error(void) { return g_last_error.c_str(); }

nclab_status nclab_config_default(nclab_config** out) {
  return make_handle(out, [] { return nclab::ExperimentConfig{}; });
}

nclab_status nclab_config_load(const char* path, nclab_config** out) {
  if (!path) return fail(NCLAB_ERR_ARGUMENT, "path must not be null");
  return make_handle(out, [&] { return nclab::load_config(path); });
}

nclab_status nclab_config_parse(const char* text, nclab_config** out) {
  if (!text) return fail(NCLAB_ERR_ARGUMENT, "text must not be null");
  return make_handle(out, [&] { return nclab::parse_config(text); });
}

nclab_status nclab_config_set(nclab_config* cfg, const char* key, const char* value) {
  if (!cfg || !key || !value) return fail(NCLAB_ERR_ARGUMENT, "config, key and value must not be null");
  return guarded([&] { nclab::apply_setting(cfg->value, key, value); });
}

nclab_status nclab_config_validate(const nclab_config* cfg) {
  if (!cfg) return fail(NCLAB_ERR_ARGUMENT, "config must not be null");
  return guarded([&] { cfg->value.validate(); });
}

nclab_status nclab_config_text(const nclab_config* cfg, char* buf, size_t size, size_t* needed) {
  if (!cfg) return fail(NCLAB_ERR_ARGUMENT, "config must not be null");
  if (!buf && size > 0) return fail(NCLAB_ERR_ARGUMENT, "buffer must not be null when size > 0");
  return guarded([&] {
    const std::string text = nclab::canonical_text(cfg->value);
    if (needed) *needed = text.size() + 1;
    if (size == 0) return;
    const std::size_t n = std::min(size - 1, text.size());
    text.copy(buf, n);
    buf[n] = '\0';
  });
}

nclab_status nclab_config_hash(const nclab_config* cfg, uint64_t* out) {
  if (!cfg || !out) return fail(NCLAB_ERR_ARGUMENT, "config and output must not be null");
  return guarded([&] { *out = nclab::config_hash(cfg->value); });
}

void nclab_config_free(nclab_config* cfg) { delete cfg; }

nclab_status nclab_run_experiment(const nclab_config* cfg, int verbose) {
  if (!cfg) return fail(NCLAB_ERR_ARGUMENT, "config must not be null");
  return guarded([&] { nclab::run_experiment(cfg->value, verbose ? &std::cerr : nullptr); });
}

nclab_status nclab_dataset_from_config(const nclab_config* cfg, int split, nclab_dataset** out) {
  if (!cfg) return fail(NCLAB_ERR_ARGUMENT, "config must not be null");
  if (split != 0 && split != 1) return fail(NCLAB_ERR_ARGUMENT, "split must be 0 (train) or 1 (test)");
  return make_handle(out, [&] {
    nclab::DataSplits splits = nclab::load_datasets(cfg->value);
    if (split == 0) return std::move(splits.train);
    if (!splits.test) throw nclab::ConfigError("the configured dataset has no test split");
    return std::move(*splits.test);
  });
}

nclab_status nclab_dataset_load_idx(const char* images, const char* labels, int num_classes, nclab_dataset** out) {
  if (!images || !labels) return fail(NCLAB_ERR_ARGUMENT, "paths must not be null");
  return make_handle(out, [&] { return nclab::load_idx(images, labels, num_classes); });
}

nclab_status nclab_dataset_size(const nclab_dataset* ds, size_t* samples, size_t* sample_dim, int* num_classes) {
  if (!ds) return fail(NCLAB_ERR_ARGUMENT, "dataset must not be null");
  if (samples) *samples = ds->value.size();
  if (sample_dim) *sample_dim = ds->value.sample_dim();
  if (num_classes) *num_classes = ds->value.num_classes;
  g_last_error.clear();
  return NCLAB_OK;
}

void nclab_dataset_free(nclab_dataset* ds) { delete ds; }

nclab_status nclab_network_load(const char* checkpoint, nclab_network** out) {
  if (!checkpoint) return fail(NCLAB_ERR_ARGUMENT, "checkpoint path must not be null");
  return make_handle(out, [&] { return nclab::load_checkpoint(std::filesystem::path(checkpoint)); });
}

nclab_status nclab_network_accuracy(const nclab_network* net, const nclab_dataset* ds, double* out) {
  if (!net || !ds || !out) return fail(NCLAB_ERR_ARGUMENT, "network, dataset and output must not be null");
  return guarded([&] { *out = nclab::accuracy(nclab::predict(net->value, ds->value.to_tensor()), ds->value.labels); });
}

nclab_status nclab_network_check(const nclab_network* net, const nclab_config* cfg, const nclab_dataset* ds) {
  if (!net || !cfg || !ds) return fail(NCLAB_ERR_ARGUMENT, "network, config and dataset must not be null");
  return guarded([&] { nclab::require_same_architecture(net->value, nclab::build_model(cfg->value, ds->value)); });
}

void nclab_network_free(nclab_network* net) { delete net; }

nclab_status nclab_attack(const nclab_network* net, const nclab_dataset* ds, const nclab_config* cfg,
                          const char* loss_mode, const char* images_out, const char* labels_out, double* success) {
  if (!net || !ds || !cfg || !images_out || !labels_out) {
    return fail(NCLAB_ERR_ARGUMENT, "network, dataset, config and output paths must not be null");
  }
  return guarded([&] {
    const nclab::AttackConfig attack = report_attack(cfg, loss_mode);
    const nclab::Dataset adv = ds->value.with_inputs(nclab::perturb(net->value, ds->value, attack));
    nclab::save_idx(adv, images_out, labels_out, nclab::IdxType::kFloat64);
    if (success) {
      const auto pred = nclab::predict(net->value, adv.to_tensor());
      *success = attack.loss_mode == nclab::LossMode::kCeTargeted
                     ? nclab::accuracy(pred, nclab::circular_targets(adv.labels, adv.num_classes))
                     : 1.0 - nclab::accuracy(pred, adv.labels);
    }
  });
}

nclab_status nclab_nc_report(const nclab_network* net, const nclab_dataset* reference, const nclab_dataset* eval,
                             const nclab_config* cfg, const char* out) {
  if (!net || !eval || !out) return fail(NCLAB_ERR_ARGUMENT, "network, dataset and output must not be null");
  return guarded([&] {
    const nclab::Dataset& ref = reference ? reference->value : eval->value;
    const nclab::NCReport r = nclab::penultimate_report(net->value, ref, eval->value);
    with_output(out, [&](std::ostream& os) {
      os << nclab::provenance_line(config_or_default(cfg)) << '\n'
         << nclab::report_header() << '\n'
         << nclab::format_report_row("penultimate", r) << '\n';
    });
  });
}

nclab_status nclab_nc_report_features(const char* eval_path, const char* reference_path, int num_classes,
                                      const nclab_network* net, const nclab_config* cfg, const char* out) {
  if (!eval_path || !out) return fail(NCLAB_ERR_ARGUMENT, "feature path and output must not be null");
  return guarded([&] {
    const nclab::FeatureSet eval = nclab::load_feature_set(eval_path, num_classes);
    std::optional<nclab::FeatureSet> ref;
    if (reference_path) ref = nclab::load_feature_set(reference_path, eval.num_classes);
    if (ref && (ref->num_classes != eval.num_classes || ref->dim() != eval.dim())) {
      throw nclab::DimensionError("reference and evaluated feature sets differ in class count or dimension");
    }
    const nclab::ClassStats ref_stats = nclab::class_stats(ref ? *ref : eval);
    nclab::ReportOptions ro;
    ro.reference = &ref_stats;
    ro.compare_to_reference = ref.has_value();
    nclab::Matrix W;
    nclab::Vector B;
    std::vector<int> ncc_self;
    if (net) {
      auto [w, b] = net->value.classifier_params();
      if (w.dim(1) != eval.dim()) {
        throw nclab::DimensionError("feature dimension " + std::to_string(eval.dim()) +
                                    " does not match the classifier input " + std::to_string(w.dim(1)));
      }
      W.resize(static_cast<Eigen::Index>(w.dim(0)), static_cast<Eigen::Index>(w.dim(1)));
      for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = w.data()[static_cast<std::size_t>(i * W.cols() + j)];
      B.resize(static_cast<Eigen::Index>(b.numel()));
      for (Eigen::Index i = 0; i < B.size(); ++i) B(i) = b.data()[static_cast<std::size_t>(i)];
      ro.weight = &W;
      ro.bias = &B;
    } else {
      // Without a classifier the prediction-based columns are left empty.
      ncc_self = nclab::ncc_predict_all(eval, ref_stats.means);
      ro.network_predictions = ncc_self;
    }
    const nclab::NCReport r = nclab::nc_report(eval, ro);
    with_output(out, [&](std::ostream& os) {
      os << nclab::provenance_line(config_or_default(cfg)) << '\n'
         << nclab::report_header() << '\n'
         << nclab::format_report_row("features", r, net != nullptr) << '\n';
    });
  });
}

nclab_status nclab_export_features(const nclab_network* net, const nclab_dataset* ds, const char* path, int binary) {
  if (!net || !ds || !path) return fail(NCLAB_ERR_ARGUMENT, "network, dataset and path must not be null");
  return guarded([&] {
    const auto taps = nclab::tap_features(net->value, ds->value, std::numeric_limits<std::size_t>::max());
    nclab::save_feature_set(taps.back(), path, binary ? nclab::FeatureFormat::kBinary : nclab::FeatureFormat::kText);
  });
}

nclab_status nclab_layerwise(const nclab_network* net, const nclab_dataset* train, const nclab_dataset* test,
                             const nclab_config* cfg, size_t max_dim, const char* out) {
  if (!net || !train || !cfg || !out) {
    return fail(NCLAB_ERR_ARGUMENT, "network, train set, config and output must not be null");
  }
  return guarded([&] {
    const auto records = nclab::layerwise_records(net->value, train->value, test ? &test->value : nullptr,
                                                  cfg->value.train.eval_attack, max_dim ? max_dim : 512);
    with_output(out, [&](std::ostream& os) { nclab::emit_layerwise(records, os, nclab::provenance_line(cfg->value)); });
  });
}

nclab_status nclab_cluster_leap(const nclab_network* net, const nclab_dataset* ds, const nclab_config* cfg,
                                const char* loss_mode, const char* out) {
  if (!net || !ds || !cfg || !out) return fail(NCLAB_ERR_ARGUMENT, "network, dataset, config and output must not be null");
  return guarded([&] {
    const nclab::ClusterLeap leap = nclab::cluster_leap(net->value, ds->value, report_attack(cfg, loss_mode));
    with_output(out, [&](std::ostream& os) { nclab::emit_cluster_leap(leap, os, nclab::provenance_line(cfg->value)); });
  });
}

}  // extern "C"
