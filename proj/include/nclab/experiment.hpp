#pragma once

// Experiment runner and CSV report emitters. Every emitted file starts with a
// '#' provenance line (artifact version, config hash, seed) followed by a
// header row.

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "nclab/config.hpp"
#include "nclab/data.hpp"
#include "nclab/models.hpp"
#include "nclab/nc_metrics.hpp"
#include "nclab/training.hpp"

namespace nclab {

const char* version_string();

struct DataSplits {
  Dataset train;
  std::optional<Dataset> test;
};

// Generated sets draw train and test jointly, so both share one squash range.
DataSplits load_datasets(const ExperimentConfig& cfg);

// Fresh network for the configured model with normalization from train.
Network build_model(const ExperimentConfig& cfg, const Dataset& train);

std::string provenance_line(const ExperimentConfig& cfg);

struct RunResult {
  std::filesystem::path dir;
  std::vector<EpochLog> logs;
  Network net;
};

// Writes config.txt, dataset.txt, train_log.csv, metrics.csv and model.ckpt
// into cfg.output_dir. Progress lines go to `progress` when given.
RunResult run_experiment(const ExperimentConfig& cfg, std::ostream* progress = nullptr);

// Applies an attack of any loss mode; targeted attacks aim at (y + 1) mod C.
Tensor perturb(const Network& net, const Dataset& data, const AttackConfig& attack);

// One metrics.csv row without the leading epoch column.
struct MetricRow {
  std::string set;  // clean | gaussian | epoch | untargeted | targeted
  std::optional<double> epsilon;
  std::optional<double> alpha;
  double accuracy = 0.0;
  std::optional<double> attack_success;
  NCReport report;
};

// Penultimate report of `evaluated` with the clean set as reference.
MetricRow metric_row(const Network& net, const Dataset& clean, const Dataset& evaluated, std::string set);

std::string metrics_header();
std::string format_metric_row(int epoch, const MetricRow& row);

// ---- layerwise ----

struct LayerRecord {
  std::size_t tap = 0;
  std::size_t dim = 0;
  NCReport clean_train;
  NCReport perturbed_train;
  std::optional<NCReport> clean_test;
  std::optional<NCReport> perturbed_test;
};

// Centers come from the clean train set at every tap.
std::vector<LayerRecord> layerwise_records(const Network& net, const Dataset& train, const Dataset* test,
                                           const AttackConfig& attack, std::size_t max_dim = 512);
void emit_layerwise(const std::vector<LayerRecord>& records, std::ostream& out, const std::string& provenance);

// ---- cluster leaping ----

struct ClusterLeap {
  int num_classes = 0;
  std::vector<std::size_t> clean_histogram;      // network predictions on clean data
  std::vector<std::size_t> perturbed_histogram;  // network predictions on perturbed data
  std::vector<double> clean_mean_norms;          // ||mu_c - mu_G||
  std::vector<PredictedGroup> predicted;         // perturbed vectors grouped by prediction
  double attack_success = 0.0;
  double clean_interclass_angle = 0.0;  // mean angle between distinct clean centered means

  std::optional<double> mean_angle() const;
};

ClusterLeap cluster_leap(const Network& net, const Dataset& data, const AttackConfig& attack);
void emit_cluster_leap(const ClusterLeap& leap, std::ostream& out, const std::string& provenance);

// ---- single reports ----

std::string report_header();
// Columns left empty when a value is unavailable.
std::string format_report_row(const std::string& label, const NCReport& r, bool has_predictions = true);

}  // namespace nclab
