#include "nclab/experiment.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "nclab/attacks.hpp"
#include "nclab/checkpoint.hpp"
#include "nclab/errors.hpp"
#include "nclab/layerwise.hpp"
#include "nclab/parallel.hpp"
#include "nclab/text_format.hpp"

#ifndef NCLAB_VERSION_STRING
#define NCLAB_VERSION_STRING "0.0.0"
#endif

namespace nclab {

const char* version_string() { return NCLAB_VERSION_STRING; }

namespace {

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  return out;
}

void finish_output(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

FeatureSet penultimate_features(const Network& net, const Dataset& data, std::span<const int> labels) {
  NoGradGuard no_grad;
  const TappedForward fwd = net.forward_with_taps(data.to_tensor(), ParamMode::kConstant);
  return make_feature_set(fwd.taps.back(), labels, data.num_classes);
}

}  // namespace

DataSplits load_datasets(const ExperimentConfig& cfg) {
  const DatasetSpec& d = cfg.dataset;
  DataSplits out;
  if (d.kind == "gaussian" || d.kind == "image") {
    const int total = d.n_train + d.n_test;
    Dataset all = d.kind == "gaussian"
                      ? make_gaussian_mixture(d.num_classes, total, d.dim, d.radius, d.noise, cfg.dataset_seed())
                      : make_image_mixture(d.num_classes, total, d.channels, d.height, d.width, d.contrast, d.noise,
                                           cfg.dataset_seed(), d.shift);
    if (d.n_test > 0) {
      auto [train, test] = split_per_class(all, static_cast<std::size_t>(d.n_train));
      out.train = std::move(train);
      out.test = std::move(test);
    } else {
      out.train = std::move(all);
    }
  } else if (d.kind == "idx") {
    out.train = load_idx(d.train_images, d.train_labels);
    if (!d.test_images.empty()) out.test = load_idx(d.test_images, d.test_labels, out.train.num_classes);
  } else if (d.kind == "text") {
    out.train = load_text_dataset(d.train_images, d.shape);
    if (!d.test_images.empty()) out.test = load_text_dataset(d.test_images, d.shape, out.train.num_classes);
  } else {
    throw ConfigError("dataset.kind '" + d.kind + "' is not supported");
  }
  if (out.test && out.test->num_classes != out.train.num_classes) {
    throw DataError("train and test splits disagree on the class count");
  }
  return out;
}

Network build_model(const ExperimentConfig& cfg, const Dataset& train) {
  Network net;
  if (cfg.model.kind == "mlp") {
    net = build_mlp(static_cast<int>(train.sample_dim()), cfg.model.hidden, train.num_classes, cfg.model_seed());
    if (train.sample_shape.size() != 1) {
      auto layers = net.layers();
      layers.insert(layers.begin(), LayerSpec{LayerKind::kFlatten});
      net = build_network(train.sample_shape, train.num_classes, std::move(layers), cfg.model_seed());
    }
  } else {
    if (train.sample_shape.size() != 3) {
      throw ConfigError("model.kind = convnet needs image samples {c,h,w}, got " + shape_str(train.sample_shape));
    }
    net = build_small_convnet(cfg.model.channels, train.sample_shape, train.num_classes, cfg.model_seed());
  }
  net.set_normalization(to_normalization(normalize_stats(train)));
  return net;
}

std::string provenance_line(const ExperimentConfig& cfg) {
  return "# nclab " + std::string(version_string()) + " config_hash=" + hex64(config_hash(cfg)) +
         " seed=" + std::to_string(cfg.seed);
}

Tensor perturb(const Network& net, const Dataset& data, const AttackConfig& attack) {
  const Tensor x = data.to_tensor();
  switch (attack.loss_mode) {
    case LossMode::kCeUntargeted: return pgd_untargeted(net, x, data.labels, attack);
    case LossMode::kCeTargeted: return pgd_targeted(net, x, circular_targets(data.labels, data.num_classes), attack);
    case LossMode::kKl: return pgd_kl(net, x, attack);
  }
  throw ContractError("perturb: unknown loss mode");
}

MetricRow metric_row(const Network& net, const Dataset& clean, const Dataset& evaluated, std::string set) {
  MetricRow row;
  row.set = std::move(set);
  row.report = penultimate_report(net, clean, evaluated);
  row.accuracy = accuracy(predict(net, evaluated.to_tensor()), evaluated.labels);
  return row;
}

std::string metrics_header() {
  return "epoch,set,epsilon,alpha,accuracy,attack_success,nc1,nc2_equinorm,nc2_equiangular,nc3,nc4_mismatch,"
         "ncc_accuracy,ncc_matching_rate,simplex_similarity,noncentered_angular";
}

std::string format_metric_row(int epoch, const MetricRow& row) {
  const NCReport& r = row.report;
  std::ostringstream os;
  os << epoch << ',' << row.set << ',' << format_optional(row.epsilon) << ',' << format_optional(row.alpha) << ','
     << format_number(row.accuracy) << ',' << format_optional(row.attack_success) << ',' << format_number(r.nc1)
     << ',' << format_number(r.nc2_equinorm) << ',' << format_number(r.nc2_equiangular) << ','
     << format_optional(r.nc3) << ',' << format_optional(r.nc4_mismatch) << ',' << format_number(r.ncc_accuracy)
     << ',' << format_number(r.ncc_matching_rate) << ',' << format_optional(r.simplex_similarity) << ','
     << format_optional(r.noncentered_angular);
  return os.str();
}

RunResult run_experiment(const ExperimentConfig& cfg, std::ostream* progress) {
  cfg.validate();
  const std::filesystem::path dir = cfg.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory '" + dir.string() + "': " + ec.message());

  const std::string prov = provenance_line(cfg);
  {
    const auto path = dir / "config.txt";
    auto out = open_output(path);
    ExperimentConfig portable = cfg;
    portable.output_dir.clear();
    out << prov << '\n' << canonical_text(portable);
    finish_output(out, path);
  }

  DataSplits data = load_datasets(cfg);
  const Dataset& train = data.train;
  Network net = build_model(cfg, train);
  {
    const NormStats stats = normalize_stats(train);
    const auto path = dir / "dataset.txt";
    auto out = open_output(path);
    out << prov << '\n';
    write_metadata_sidecar(train, &stats, out);
    finish_output(out, path);
  }

  const auto metrics_path = dir / "metrics.csv";
  auto metrics = open_output(metrics_path);
  metrics << prov << '\n' << metrics_header() << '\n';

  const TrainConfig tcfg = cfg.resolved_train();
  const std::vector<double> sweep = cfg.sweep();

  auto hook = [&](const EvalContext& ctx) {
    std::vector<MetricRow> rows;
    rows.push_back(metric_row(ctx.net, ctx.clean, ctx.clean, "clean"));

    MetricRow g = metric_row(ctx.net, ctx.clean, ctx.gaussian, "gaussian");
    g.epsilon = tcfg.gaussian_sigma;
    rows.push_back(std::move(g));

    MetricRow e = metric_row(ctx.net, ctx.clean, ctx.perturbed, "epoch");
    const AttackConfig& epoch_attack = tcfg.regime == Regime::kAt ? tcfg.attack : tcfg.eval_attack;
    e.epsilon = epoch_attack.epsilon;
    e.alpha = epoch_attack.alpha;
    e.attack_success = 1.0 - e.accuracy;
    rows.push_back(std::move(e));

    for (double eps : sweep) {
      const AttackConfig ua = cfg.sweep_attack(eps, LossMode::kCeUntargeted);
      MetricRow u = metric_row(ctx.net, ctx.clean, ctx.clean.with_inputs(perturb(ctx.net, ctx.clean, ua)), "untargeted");
      u.epsilon = ua.epsilon;
      u.alpha = ua.alpha;
      u.attack_success = 1.0 - u.accuracy;
      rows.push_back(std::move(u));
      if (!cfg.eval_targeted) continue;
      const AttackConfig ta = cfg.sweep_attack(eps, LossMode::kCeTargeted);
      const Dataset targeted = ctx.clean.with_inputs(perturb(ctx.net, ctx.clean, ta));
      MetricRow t = metric_row(ctx.net, ctx.clean, targeted, "targeted");
      t.epsilon = ta.epsilon;
      t.alpha = ta.alpha;
      t.attack_success = accuracy(predict(ctx.net, targeted.to_tensor()),
                                  circular_targets(ctx.clean.labels, ctx.clean.num_classes));
      rows.push_back(std::move(t));
    }
    for (const auto& row : rows) metrics << format_metric_row(ctx.epoch, row) << '\n';
    metrics.flush();
    if (progress) {
      *progress << "epoch " << ctx.epoch << '/' << tcfg.epochs << " acc=" << format_number(ctx.log.clean_accuracy)
                << " loss=" << format_number(ctx.log.ce_loss) << " nc1=" << format_number(rows.front().report.nc1)
                << '\n';
    }
  };

  RunResult result;
  result.dir = dir;
  result.logs = fit(net, train, tcfg, hook);
  finish_output(metrics, metrics_path);

  {
    const auto path = dir / "train_log.csv";
    auto out = open_output(path);
    out << prov << '\n' << "epoch,lr,clean_accuracy,ce_loss,train_objective,robust_accuracy,robust_loss\n";
    for (const auto& l : result.logs) {
      out << l.epoch << ',' << format_number(l.lr) << ',' << format_number(l.clean_accuracy) << ','
          << format_number(l.ce_loss) << ',' << format_number(l.train_objective) << ','
          << format_optional(l.robust_accuracy) << ',' << format_optional(l.robust_loss) << '\n';
    }
    finish_output(out, path);
  }
  save_checkpoint(net, dir / "model.ckpt");
  result.net = std::move(net);
  return result;
}

// ---- layerwise ----

std::vector<LayerRecord> layerwise_records(const Network& net, const Dataset& train, const Dataset* test,
                                           const AttackConfig& attack, std::size_t max_dim) {
  LayerwiseOptions opts;
  opts.max_dim = max_dim;
  opts.threads = metric_threads();
  const Dataset train_adv = train.with_inputs(perturb(net, train, attack));
  const auto clean_train = layerwise_report(net, train, train, opts);
  const auto adv_train = layerwise_report(net, train, train_adv, opts);
  std::vector<NCReport> clean_test, adv_test;
  if (test) {
    clean_test = layerwise_report(net, train, *test, opts);
    adv_test = layerwise_report(net, train, test->with_inputs(perturb(net, *test, attack)), opts);
  }
  const auto dims = [&] {
    std::vector<std::size_t> out;
    for (const auto& fs : tap_features(net, train.subset(std::vector<std::size_t>{0}), max_dim)) out.push_back(fs.dim());
    return out;
  }();
  std::vector<LayerRecord> records(clean_train.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& r = records[i];
    r.tap = i;
    r.dim = dims[i];
    r.clean_train = clean_train[i];
    r.perturbed_train = adv_train[i];
    if (test) {
      r.clean_test = clean_test[i];
      r.perturbed_test = adv_test[i];
    }
  }
  return records;
}

void emit_layerwise(const std::vector<LayerRecord>& records, std::ostream& out, const std::string& provenance) {
  out << provenance << '\n'
      << "tap,dim,nc1_clean,nc2_equinorm_clean,nc2_equiangular_clean,nc1_perturbed,nc2_equinorm_perturbed,"
         "nc2_equiangular_perturbed,ncc_accuracy_clean_train,ncc_accuracy_perturbed_train,ncc_accuracy_clean_test,"
         "ncc_accuracy_perturbed_test,ncc_matching_rate_clean,ncc_matching_rate_perturbed\n";
  for (const auto& r : records) {
    auto opt_acc = [](const std::optional<NCReport>& rep) {
      return rep ? format_number(rep->ncc_accuracy) : std::string();
    };
    out << r.tap << ',' << r.dim << ',' << format_number(r.clean_train.nc1) << ','
        << format_number(r.clean_train.nc2_equinorm) << ',' << format_number(r.clean_train.nc2_equiangular) << ','
        << format_number(r.perturbed_train.nc1) << ',' << format_number(r.perturbed_train.nc2_equinorm) << ','
        << format_number(r.perturbed_train.nc2_equiangular) << ',' << format_number(r.clean_train.ncc_accuracy)
        << ',' << format_number(r.perturbed_train.ncc_accuracy) << ',' << opt_acc(r.clean_test) << ','
        << opt_acc(r.perturbed_test) << ',' << format_number(r.clean_train.ncc_matching_rate) << ','
        << format_number(r.perturbed_train.ncc_matching_rate) << '\n';
  }
}

// ---- cluster leaping ----

std::optional<double> ClusterLeap::mean_angle() const {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : predicted) {
    if (!g.angle) continue;
    sum += *g.angle;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

ClusterLeap cluster_leap(const Network& net, const Dataset& data, const AttackConfig& attack) {
  const int C = data.num_classes;
  ClusterLeap leap;
  leap.num_classes = C;
  const Tensor adv = perturb(net, data, attack);
  const auto clean_pred = predict(net, data.to_tensor());
  const auto adv_pred = predict(net, adv);
  leap.clean_histogram.assign(static_cast<std::size_t>(C), 0);
  leap.perturbed_histogram.assign(static_cast<std::size_t>(C), 0);
  for (int p : clean_pred) ++leap.clean_histogram[static_cast<std::size_t>(p)];
  for (int p : adv_pred) ++leap.perturbed_histogram[static_cast<std::size_t>(p)];

  if (attack.loss_mode == LossMode::kCeTargeted) {
    leap.attack_success = accuracy(adv_pred, circular_targets(data.labels, C));
  } else {
    leap.attack_success = 1.0 - accuracy(adv_pred, data.labels);
  }

  const ClassStats clean = class_stats(penultimate_features(net, data, data.labels));
  const Matrix centered = clean.centered_means();
  for (int c = 0; c < C; ++c) leap.clean_mean_norms.push_back(centered.row(c).norm());
  double angle_sum = 0.0;
  int pairs = 0;
  for (int a = 0; a < C; ++a)
    for (int b = 0; b < C; ++b) {
      if (a == b) continue;
      const double na = centered.row(a).norm(), nb = centered.row(b).norm();
      if (na == 0.0 || nb == 0.0) continue;
      angle_sum += vector_angle(centered.row(a).transpose(), centered.row(b).transpose());
      ++pairs;
    }
  leap.clean_interclass_angle = pairs ? angle_sum / pairs : 0.0;

  const FeatureSet by_predicted = penultimate_features(net, data.with_inputs(adv), adv_pred);
  leap.predicted = predicted_group_stats(by_predicted, clean);
  return leap;
}

void emit_cluster_leap(const ClusterLeap& leap, std::ostream& out, const std::string& provenance) {
  out << provenance << '\n';
  out << "# attack_success=" << format_number(leap.attack_success)
      << " clean_interclass_angle=" << format_number(leap.clean_interclass_angle)
      << " mean_angle=" << format_optional(leap.mean_angle()) << '\n';
  out << "# section predicted_histogram\nclass,clean_count,perturbed_count\n";
  for (int c = 0; c < leap.num_classes; ++c) {
    out << c << ',' << leap.clean_histogram[static_cast<std::size_t>(c)] << ','
        << leap.perturbed_histogram[static_cast<std::size_t>(c)] << '\n';
  }
  out << "# section clean_mean_norms\nclass,norm\n";
  for (int c = 0; c < leap.num_classes; ++c) {
    out << c << ',' << format_number(leap.clean_mean_norms[static_cast<std::size_t>(c)]) << '\n';
  }
  out << "# section predicted_mean_norms\nclass,count,norm\n";
  for (int c = 0; c < leap.num_classes; ++c) {
    const auto& g = leap.predicted[static_cast<std::size_t>(c)];
    out << c << ',' << g.count << ',' << format_optional(g.mean_norm) << '\n';
  }
  out << "# section angles\nclass,angle\n";
  for (int c = 0; c < leap.num_classes; ++c) {
    out << c << ',' << format_optional(leap.predicted[static_cast<std::size_t>(c)].angle) << '\n';
  }
}

// ---- single reports ----

std::string report_header() {
  return "set,nc1,nc2_equinorm,nc2_equiangular,nc3,nc4_mismatch,ncc_accuracy,ncc_matching_rate,simplex_similarity,"
         "noncentered_angular";
}

std::string format_report_row(const std::string& label, const NCReport& r, bool has_predictions) {
  std::ostringstream os;
  os << label << ',' << format_number(r.nc1) << ',' << format_number(r.nc2_equinorm) << ','
     << format_number(r.nc2_equiangular) << ',' << format_optional(r.nc3) << ','
     << (has_predictions ? format_optional(r.nc4_mismatch) : std::string()) << ',' << format_number(r.ncc_accuracy)
     << ',' << (has_predictions ? format_number(r.ncc_matching_rate) : std::string()) << ','
     << format_optional(r.simplex_similarity) << ',' << format_optional(r.noncentered_angular);
  return os.str();
}

}  // namespace nclab
