// Acceptance run: one PASS/FAIL line per criterion. Exit status is the number
// of failing criteria.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "nclab/attacks.hpp"
#include "nclab/config.hpp"
#include "nclab/data.hpp"
#include "nclab/experiment.hpp"
#include "nclab/layerwise.hpp"
#include "nclab/nc_metrics.hpp"
#include "nclab/training.hpp"
#include "oracles.hpp"

using namespace nclab;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// Appends "name=value" and records whether the condition held.
struct Checks {
  bool ok = true;
  std::ostringstream text;
  void add(const std::string& what, bool cond) {
    if (text.tellp() > 0) text << "; ";
    text << what << (cond ? "" : " [x]");
    ok = ok && cond;
  }
  Outcome done() const { return {ok, text.str()}; }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---- 1: ETF fixture ----

Outcome etf_suite() {
  Checks c;
  for (int classes : {3, 10, 100}) {
    const Matrix etf = standard_etf(classes, classes, 17);
    FeatureSet fs;
    fs.num_classes = classes;
    fs.features = Matrix(3 * classes, classes);
    for (int i = 0; i < 3 * classes; ++i) {
      fs.features.row(i) = etf.row(i % classes);
      fs.labels.push_back(i % classes);
    }
    const Vector zero = Vector::Zero(classes);
    ReportOptions opt;
    opt.weight = &etf;
    opt.bias = &zero;
    const auto r = nc_report(fs, opt);
    const double worst = std::max({r.nc1, r.nc2_equinorm, r.nc2_equiangular, *r.nc3, *r.nc4_mismatch});
    c.add("C=" + std::to_string(classes) + " max metric " + fmt("%.2e", worst), worst <= 1e-10);

    double lo = 10.0, hi = -10.0;
    for (int a = 0; a < classes; ++a)
      for (int b = a + 1; b < classes; ++b) {
        const double t = vector_angle(etf.row(a).transpose(), etf.row(b).transpose());
        lo = std::min(lo, t);
        hi = std::max(hi, t);
      }
    const double exact = std::acos(-1.0 / (classes - 1));
    const double dev = std::max(hi - exact, exact - lo);
    if (classes == 10) {
      c.add("C=10 angle " + fmt("%.12f", lo) + " dev " + fmt("%.1e", dev), dev <= 1e-10 && std::abs(lo - 1.68) < 5e-3);
    } else if (classes == 100) {
      c.add("C=100 angle " + fmt("%.4f", lo), std::abs(lo - 1.58) <= 1e-2 && std::abs(hi - 1.58) <= 1e-2);
    }
  }
  return c.done();
}

// ---- 2: brute force against direct summation ----

FeatureSet to_features(const oracle::Mat& h, const std::vector<int>& y, int classes) {
  FeatureSet fs;
  fs.features = Matrix(static_cast<Eigen::Index>(h.size()), static_cast<Eigen::Index>(h[0].size()));
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h[0].size(); ++j)
      fs.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = h[i][j];
  fs.labels = y;
  fs.num_classes = classes;
  return fs;
}

struct Instance {
  oracle::Mat h;
  std::vector<int> y;
  oracle::Mat w;
  oracle::Vec b;
};

Instance random_instance(std::mt19937_64& rng, int classes, int per_class, std::size_t p) {
  std::normal_distribution<double> n(0.0, 1.0);
  Instance in;
  oracle::Mat centers = oracle::zeros(static_cast<std::size_t>(classes), p);
  for (auto& row : centers)
    for (auto& v : row) v = 2.0 * n(rng);
  for (int c = 0; c < classes; ++c)
    for (int i = 0; i < per_class; ++i) {
      oracle::Vec v(p);
      for (std::size_t j = 0; j < p; ++j) v[j] = centers[static_cast<std::size_t>(c)][j] + 0.5 * n(rng);
      in.h.push_back(v);
      in.y.push_back(c);
    }
  in.w = oracle::zeros(static_cast<std::size_t>(classes), p);
  for (auto& row : in.w)
    for (auto& v : row) v = n(rng);
  in.b.assign(static_cast<std::size_t>(classes), 0.0);
  for (auto& v : in.b) v = 0.3 * n(rng);
  return in;
}

Outcome brute_force() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> classes(2, 5), per(2, 10), dim(1, 6);
  int bad = 0, total = 0;
  double worst = 0.0;
  auto cmp = [&](double got, double want) {
    ++total;
    worst = std::max(worst, std::abs(got - want) / std::max(1.0, std::abs(want)));
    if (!oracle::close(got, want, 1e-10)) ++bad;
  };
  for (int t = 0; t < 100; ++t) {
    const int c = classes(rng);
    const auto p = static_cast<std::size_t>(dim(rng));
    const auto in = random_instance(rng, c, per(rng), p);
    const auto fs = to_features(in.h, in.y, c);
    const auto s = class_stats(fs);
    const auto o = oracle::stats(in.h, in.y, static_cast<std::size_t>(c));
    Matrix w(c, static_cast<Eigen::Index>(p));
    for (int i = 0; i < c; ++i)
      for (std::size_t j = 0; j < p; ++j) w(i, static_cast<Eigen::Index>(j)) = in.w[static_cast<std::size_t>(i)][j];
    const Vector b = Eigen::Map<const Vector>(in.b.data(), c);
    cmp(nc1(s), oracle::nc1(o));
    const auto n2 = nc2(s);
    cmp(n2.equinorm, oracle::equinorm(o));
    cmp(n2.equiangular, oracle::equiangular(o));
    cmp(nc3(s, w), oracle::nc3(o, in.w));
    cmp(nc4_mismatch(fs, s, w, b), oracle::nc4(in.h, o, in.w, in.b));
    cmp(ncc_accuracy(fs, s.means), oracle::ncc_accuracy(in.h, in.y, o.means));
    const auto pred = linear_predict(fs, w, b);
    cmp(ncc_matching_rate(pred, fs, s.means), oracle::matching_rate(in.h, pred, o.means));
    const auto in2 = random_instance(rng, c, per(rng), p);
    const auto s2 = class_stats(to_features(in2.h, in2.y, c));
    const auto o2 = oracle::stats(in2.h, in2.y, static_cast<std::size_t>(c));
    cmp(simplex_similarity(s, s2), oracle::simplex_similarity(o, o2));
    cmp(noncentered_angular(s, s2), oracle::noncentered(o, o2));
  }
  Checks ch;
  ch.add(std::to_string(total - bad) + "/" + std::to_string(total) + " values match, worst rel " + fmt("%.1e", worst),
         bad == 0);
  return ch.done();
}

// ---- 3: gradients ----

Tensor random_input(const InputShape& shape, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::vector<double> v(n * shape_numel(shape));
  for (auto& x : v) x = u(rng);
  return make_input_batch(shape, v, n);
}

Network trained(Network net, const Dataset& ds) {
  net.set_normalization(to_normalization(normalize_stats(ds)));
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 16;
  cfg.lr_initial = 0.05;
  cfg.lr_drops.clear();
  cfg.metric_every = 1000;
  fit(net, ds, cfg, nullptr);
  return net;
}

// At initialization the convnet is nearly constant in its input and long
// training saturates the softmax; either way ~1e-9 coordinates drown in
// finite-difference roundoff. A few epochs avoid both. Step 1e-5 sits near
// cbrt(machine eps).
Outcome gradients() {
  Checks c;
  const Network mlp = trained(build_mlp(6, std::vector<int>{10, 8}, 3, 1), make_gaussian_mixture(3, 20, 6, 1.0, 0.3, 5));
  const Network conv =
      trained(build_small_convnet(std::vector<int>{3, 4}, {1, 8, 8}, 3, 2), make_image_mixture(3, 20, 1, 8, 8, 0.4, 0.2, 5));
  const std::vector<int> y{0, 1, 2};
  for (const auto* which : {&mlp, &conv}) {
    const Network& net = *which;
    const InputShape shape = which == &mlp ? InputShape{6} : InputShape{1, 8, 8};
    double ce = 0.0, kl = 0.0, w_ce = 0.0;
    for (std::uint64_t k = 0; k < 10; ++k) {
      const Tensor x = random_input(shape, 3, 100 + k);
      const Tensor ref = random_input(shape, 3, 200 + k);
      ce = std::max(ce, check_gradients(
                            [&](const Tensor& t) { return softmax_cross_entropy(net.forward(t, ParamMode::kConstant), y); },
                            x, 1e-5));
      const Tensor p_logits = net.forward(ref, ParamMode::kConstant).detach();
      kl = std::max(kl, check_gradients(
                            [&](const Tensor& t) { return kl_divergence(p_logits, net.forward(t, ParamMode::kConstant)); },
                            x, 1e-5));
      const Tensor h = net.forward_with_taps(x, ParamMode::kConstant).taps.back().detach();
      const auto [w, b] = net.classifier_params();
      const Tensor bias = b.detach();
      w_ce = std::max(w_ce, check_gradients(
                                [&](const Tensor& wt) { return softmax_cross_entropy(linear(h, wt, bias), y); },
                                w.detach(), 1e-5));
    }
    const std::string name = which == &mlp ? "mlp" : "convnet";
    c.add(name + " ce " + fmt("%.1e", ce), ce <= 1e-5);
    c.add(name + " kl " + fmt("%.1e", kl), kl <= 1e-5);
    c.add(name + " classifier ce " + fmt("%.1e", w_ce), w_ce <= 1e-5);
  }
  return c.done();
}

// ---- 4: attack contracts ----

std::vector<double> flat_params(const Network& net) {
  std::vector<double> out;
  for (const auto& p : net.parameters()) out.insert(out.end(), p.value.data().begin(), p.value.data().end());
  return out;
}

Outcome attack_contracts() {
  const Network mlp = build_mlp(8, std::vector<int>{12}, 3, 4);
  const Network conv = build_small_convnet(std::vector<int>{3}, {1, 4, 4}, 3, 5);
  const auto mlp_params = flat_params(mlp), conv_params = flat_params(conv);
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> steps(0, 6), pick(0, 5), batch(1, 5);
  int ball = 0, range = 0, params = 0, identity = 0;
  double worst_excess = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const bool use_conv = t % 2 == 1;
    const Network& net = use_conv ? conv : mlp;
    const InputShape shape = use_conv ? InputShape{1, 4, 4} : InputShape{8};
    const auto n = static_cast<std::size_t>(batch(rng));
    std::vector<int> y(n);
    for (auto& v : y) v = pick(rng) % 3;
    const Tensor x = random_input(shape, n, 1000 + static_cast<std::uint64_t>(t));
    AttackConfig cfg;
    cfg.norm = pick(rng) % 2 ? NormKind::kL2 : NormKind::kLinf;
    cfg.loss_mode = std::array{LossMode::kCeUntargeted, LossMode::kCeTargeted, LossMode::kKl}[pick(rng) % 3];
    cfg.epsilon = (cfg.norm == NormKind::kL2 ? 1.5 : 0.3) * u(rng);
    cfg.alpha = std::max(1e-4, cfg.epsilon * (0.1 + u(rng)));
    cfg.steps = steps(rng);
    cfg.random_start = pick(rng) % 2 == 0;
    cfg.clamp_input_range = pick(rng) != 0;
    cfg.seed = static_cast<std::uint64_t>(t);
    Tensor adv;
    switch (cfg.loss_mode) {
      case LossMode::kCeUntargeted: adv = pgd_untargeted(net, x, y, cfg); break;
      case LossMode::kCeTargeted: adv = pgd_targeted(net, x, circular_targets(y, 3), cfg); break;
      case LossMode::kKl: adv = pgd_kl(net, x, cfg); break;
    }
    const std::size_t d = x.numel() / n;
    bool in_ball = true, in_range = true;
    for (std::size_t i = 0; i < n; ++i) {
      double linf = 0.0, l2 = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = adv.data()[i * d + j] - x.data()[i * d + j];
        linf = std::max(linf, std::abs(diff));
        l2 += diff * diff;
      }
      const double dist = cfg.norm == NormKind::kLinf ? linf : std::sqrt(l2);
      worst_excess = std::max(worst_excess, dist - cfg.epsilon);
      if (dist > cfg.epsilon + 1e-12) in_ball = false;
    }
    if (cfg.clamp_input_range)
      for (double v : adv.data())
        if (v < 0.0 || v > 1.0) in_range = false;
    ball += in_ball;
    range += in_range;
    params += flat_params(net) == (use_conv ? conv_params : mlp_params);
    if (cfg.steps == 0) identity += adv.to_vector() == x.to_vector() ? 0 : 1;
  }
  Checks c;
  c.add("ball " + std::to_string(ball) + "/1000 (worst excess " + fmt("%.1e", worst_excess) + ")", ball == 1000);
  c.add("range " + std::to_string(range) + "/1000", range == 1000);
  c.add("params unchanged " + std::to_string(params) + "/1000", params == 1000);
  c.add("N=0 identity violations " + std::to_string(identity), identity == 0);
  return c.done();
}

// ---- 5-9: Gaussian-mixture task ----

struct Task {
  Dataset data;
  double center_distance = 0.0;
};

Task mixture_task() {
  Task t;
  t.data = make_gaussian_mixture(4, 200, 20, 1.0, 0.35, 7);
  t.center_distance = std::stod(t.data.metadata.at("squash.center_distance"));
  return t;
}

Network fresh_mlp(const Dataset& ds) {
  Network net = build_mlp(20, std::vector<int>{128, 128}, 4, 11);
  net.set_normalization(to_normalization(normalize_stats(ds)));
  return net;
}

TrainConfig schedule(int epochs, int every) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 128;
  cfg.lr_initial = 0.1;
  cfg.lr_drops = {{epochs / 2, 0.1}, {epochs * 3 / 4, 0.1}};
  cfg.metric_every = every;
  cfg.seed = 3;
  return cfg;
}

struct StRun {
  Network net;
  bool pass = false;
  std::string detail;
};

StRun st_collapse(const Task& task) {
  StRun run;
  run.net = fresh_mlp(task.data);
  std::vector<double> nc1s;
  const auto logs = fit(run.net, task.data, schedule(200, 1), [&](const EvalContext& ctx) {
    nc1s.push_back(penultimate_report(ctx.net, ctx.clean, ctx.clean).nc1);
  });
  const auto onset = zero_error_onset(logs);
  Checks c;
  c.add("zero-error onset epoch " + std::to_string(onset.value_or(-1)), onset && *onset <= 50);
  bool stays = onset.has_value();
  if (onset)
    for (const auto& l : logs)
      if (l.epoch >= *onset && l.clean_accuracy != 1.0) stays = false;
  c.add(std::string("error stays 0: ") + (stays ? "yes" : "no"), stays);
  const auto r = penultimate_report(run.net, task.data, task.data);
  const double ratio = onset ? nc1s.back() / nc1s[static_cast<std::size_t>(*onset - 1)] : INFINITY;
  c.add("nc1 onset " + fmt("%.4g", onset ? nc1s[static_cast<std::size_t>(*onset - 1)] : NAN) + " final " +
            fmt("%.4g", nc1s.back()) + " ratio " + fmt("%.3f", ratio),
        ratio <= 0.1);
  c.add("nc2_equiangular " + fmt("%.4f", r.nc2_equiangular), r.nc2_equiangular <= 0.05);
  c.add("nc4 " + fmt("%.4g", *r.nc4_mismatch), *r.nc4_mismatch == 0.0);
  run.pass = c.ok;
  run.detail = c.text.str();
  return run;
}

Outcome fragility(const Task& task, const Network& net) {
  const double eps = 1.5 * task.center_distance / 2.0;
  AttackConfig a;
  a.norm = NormKind::kL2;
  a.epsilon = eps;
  a.alpha = eps / 4.0;
  a.steps = 10;
  const Dataset& ds = task.data;
  const Dataset adv = ds.with_inputs(perturb(net, ds, a));
  const Dataset noisy = ds.with_inputs(gaussian_perturb(ds.to_tensor(), eps / std::sqrt(20.0), 5));
  const double clean = penultimate_report(net, ds, ds).nc1;
  const double pert = penultimate_report(net, ds, adv).nc1;
  const double gauss = penultimate_report(net, ds, noisy).nc1;
  const double success = 1.0 - accuracy(predict(net, adv.to_tensor()), ds.labels);
  Checks c;
  c.add("l2 eps " + fmt("%.4f", eps) + " success " + fmt("%.3f", success), success >= 0.95);
  c.add("nc1 perturbed/clean " + fmt("%.1f", pert / clean), pert >= 10.0 * clean);
  c.add("nc1 gaussian/clean " + fmt("%.2f", gauss / clean), gauss <= 2.0 * clean && gauss >= 0.5 * clean);
  return c.done();
}

Outcome cluster_leaping(const Task& task, const Network& net) {
  AttackConfig a;
  a.norm = NormKind::kLinf;
  a.epsilon = 0.2;
  a.alpha = 0.05;
  a.steps = 10;
  a.loss_mode = LossMode::kCeTargeted;
  const Dataset& ds = task.data;
  const ClusterLeap leap = cluster_leap(net, ds, a);
  const auto targets = circular_targets(ds.labels, 4);
  std::vector<std::size_t> counts(4, 0);
  for (int t : targets) ++counts[static_cast<std::size_t>(t)];
  const bool balanced = std::all_of(counts.begin(), counts.end(), [&](std::size_t k) { return k == ds.size() / 4; });

  NoGradGuard guard;
  const auto fs = make_feature_set(net.forward_with_taps(ds.to_tensor(), ParamMode::kConstant).taps.back(), ds.labels, 4);
  const Matrix centered = class_stats(fs).centered_means();
  double min_angle = 10.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      min_angle = std::min(min_angle, vector_angle(centered.row(i).transpose(), centered.row(j).transpose()));
  const double bound = std::acos(-1.0 / 3.0) - 0.1;
  const double angle = leap.mean_angle().value_or(INFINITY);
  Checks c;
  c.add("targeted success " + fmt("%.4f", leap.attack_success), leap.attack_success == 1.0);
  c.add("mean angle " + fmt("%.3f", angle), angle <= 0.3);
  c.add("clean inter-class angle min " + fmt("%.3f", min_angle) + " mean " + fmt("%.3f", leap.clean_interclass_angle),
        min_angle >= bound);
  c.add(std::string("targets balanced: ") + (balanced ? "yes" : "no"), balanced);
  return c.done();
}

AttackConfig robust_attack(const Task& task, LossMode mode) {
  AttackConfig a;
  a.norm = NormKind::kL2;
  a.epsilon = 0.1 * task.center_distance / 2.0;
  a.alpha = a.epsilon / 4.0;
  a.steps = 10;
  a.loss_mode = mode;
  return a;
}

struct RobustRun {
  Network net;
  std::vector<EpochLog> logs;
  std::vector<double> equiangular;  // clean, at each evaluation
};

RobustRun robust_fit(const Task& task, Regime regime) {
  RobustRun run;
  run.net = fresh_mlp(task.data);
  TrainConfig cfg = schedule(100, 10);
  cfg.regime = regime;
  cfg.attack = robust_attack(task, regime == Regime::kTrades ? LossMode::kKl : LossMode::kCeUntargeted);
  cfg.eval_attack = robust_attack(task, LossMode::kCeUntargeted);
  run.logs = fit(run.net, task.data, cfg, [&](const EvalContext& ctx) {
    run.equiangular.push_back(penultimate_report(ctx.net, ctx.clean, ctx.clean).nc2_equiangular);
  });
  return run;
}

Outcome twin_simplices(const Task& task, const RobustRun& at) {
  const Dataset& ds = task.data;
  const AttackConfig a = robust_attack(task, LossMode::kCeUntargeted);
  const Dataset adv = ds.with_inputs(perturb(at.net, ds, a));
  const double clean_acc = accuracy(predict(at.net, ds.to_tensor()), ds.labels);
  const double robust_acc = accuracy(predict(at.net, adv.to_tensor()), ds.labels);
  const auto rc = penultimate_report(at.net, ds, ds), rp = penultimate_report(at.net, ds, adv);
  Checks c;
  c.add("l2 eps " + fmt("%.4f", a.epsilon) + " clean acc " + fmt("%.3f", clean_acc) + " robust acc " +
            fmt("%.3f", robust_acc),
        clean_acc == 1.0 && robust_acc == 1.0);
  c.add("nc2_equiangular clean " + fmt("%.4f", rc.nc2_equiangular) + " perturbed " + fmt("%.4f", rp.nc2_equiangular),
        rc.nc2_equiangular <= 0.05 && rp.nc2_equiangular <= 0.05);
  c.add("nc4 clean " + fmt("%.3g", *rc.nc4_mismatch) + " perturbed " + fmt("%.3g", *rp.nc4_mismatch),
        *rc.nc4_mismatch == 0.0 && *rp.nc4_mismatch == 0.0);
  const double sim = rp.simplex_similarity.value_or(INFINITY), nonc = rp.noncentered_angular.value_or(INFINITY);
  c.add("simplex_similarity " + fmt("%.4f", sim) + " noncentered " + fmt("%.4f", nonc), sim <= 0.1 && nonc <= 0.1);
  c.add("nc1 perturbed " + fmt("%.4g", rp.nc1) + " > clean " + fmt("%.4g", rc.nc1), rp.nc1 > rc.nc1);
  return c.done();
}

Outcome trades_noncollapse(const Task& task, const RobustRun& at, const RobustRun& trades) {
  const Dataset& ds = task.data;
  const double at_nc1 = penultimate_report(at.net, ds, ds).nc1;
  const double tr_nc1 = penultimate_report(trades.net, ds, ds).nc1;
  const auto& last = trades.logs.back();
  const double min_eqa = *std::min_element(trades.equiangular.begin(), trades.equiangular.end());
  Checks c;
  c.add("final ce " + fmt("%.3g", last.ce_loss) + " kl " + fmt("%.3g", last.robust_loss.value_or(NAN)),
        last.ce_loss <= 0.05 && last.robust_loss.value_or(INFINITY) <= 0.05);
  c.add("clean nc1 trades " + fmt("%.4g", tr_nc1) + " vs AT " + fmt("%.4g", at_nc1) + " ratio " +
            fmt("%.2f", tr_nc1 / at_nc1),
        tr_nc1 >= 5.0 * at_nc1);
  c.add("min nc2_equiangular " + fmt("%.4f", min_eqa), min_eqa >= 0.1);
  return c.done();
}

// ---- 10: layerwise profile ----

Outcome layerwise_profile() {
  const Dataset ds = make_image_mixture(4, 100, 1, 16, 16, 0.4, 0.3, 7, 3);
  Network net = build_small_convnet(std::vector<int>{8, 16, 32, 64}, {1, 16, 16}, 4, 11);
  net.set_normalization(to_normalization(normalize_stats(ds)));
  TrainConfig cfg = schedule(100, 1000);
  cfg.lr_initial = 0.05;
  const auto logs = fit(net, ds, cfg, nullptr);
  AttackConfig a;
  a.norm = NormKind::kLinf;
  a.epsilon = 32.0 / 255.0;
  a.alpha = a.epsilon / 4.0;
  a.steps = 10;
  const auto recs = layerwise_records(net, ds, nullptr, a, 512);
  Checks c;
  c.add("final train acc " + fmt("%.3f", logs.back().clean_accuracy), logs.back().clean_accuracy == 1.0);
  int inversions = 0;
  std::string profile;
  for (std::size_t i = 0; i < recs.size(); ++i) {
    profile += (i ? "," : "") + fmt("%.3g", recs[i].clean_train.nc1);
    if (i > 0 && recs[i].clean_train.nc1 > recs[i - 1].clean_train.nc1) ++inversions;
  }
  c.add("clean nc1 by tap [" + profile + "] inversions " + std::to_string(inversions), inversions <= 1);
  const auto& first = recs.front();
  const auto& last = recs.back();
  const double r0 = first.perturbed_train.nc1 / first.clean_train.nc1;
  const double rl = last.perturbed_train.nc1 / last.clean_train.nc1;
  c.add("perturbed/clean nc1 first " + fmt("%.2f", r0), r0 <= 2.0);
  c.add("last " + fmt("%.1f", rl), rl >= 10.0);
  const double gap = first.perturbed_train.ncc_accuracy - last.perturbed_train.ncc_accuracy;
  c.add("perturbed NCC acc first " + fmt("%.3f", first.perturbed_train.ncc_accuracy) + " last " +
            fmt("%.3f", last.perturbed_train.ncc_accuracy),
        gap >= 0.20);
  return c.done();
}

// ---- 11: determinism ----

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Outcome determinism() {
  const char* configs[] = {
      "seed = 21\ndataset.kind = gaussian\ndataset.classes = 3\ndataset.n_train = 30\ndataset.n_test = 10\n"
      "dataset.dim = 8\nmodel.hidden = 32, 32\ntrain.regime = at\ntrain.epochs = 6\ntrain.lr_drops = 3:0.1\n"
      "train.attack.random_start = true\neval.every = 2\neval.epsilons = 2/255, 8/255\n",
      "seed = 22\ndataset.kind = image\ndataset.classes = 3\ndataset.n_train = 12\ndataset.channels = 1\n"
      "dataset.height = 8\ndataset.width = 8\ndataset.shift = 2\nmodel.kind = convnet\nmodel.channels = 4, 8\n"
      "train.regime = trades\ntrain.epochs = 3\ntrain.lr_drops = none\neval.every = 1\n",
  };
  const auto root = std::filesystem::temp_directory_path() / "nclab_acceptance_determinism";
  std::filesystem::remove_all(root);
  int files = 0, differing = 0;
  for (int k = 0; k < 2; ++k) {
    for (const char* rerun : {"a", "b"}) {
      auto cfg = parse_config(configs[k], "determinism");
      cfg.output_dir = (root / (std::to_string(k) + rerun)).string();
      run_experiment(cfg);
    }
    for (const auto& entry : std::filesystem::directory_iterator(root / (std::to_string(k) + "a"))) {
      ++files;
      if (slurp(entry.path()) != slurp(root / (std::to_string(k) + "b") / entry.path().filename())) ++differing;
    }
  }
  std::filesystem::remove_all(root);
  Checks c;
  c.add(std::to_string(files) + " files compared across 2 configs, " + std::to_string(differing) + " differ",
        files == 10 && differing == 0);
  return c.done();
}

}  // namespace

int main() {
  int failures = 0;
  auto report = [&](int id, double budget, const std::function<Outcome()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    const bool in_time = budget <= 0 || secs <= budget;
    const bool pass = o.pass && in_time;
    failures += pass ? 0 : 1;
    std::printf("criterion %2d: %s  %s; %.1fs%s\n", id, pass ? "PASS" : "FAIL", o.detail.c_str(), secs,
                in_time ? "" : " (over budget)");
    std::fflush(stdout);
  };

  report(1, 1.0, etf_suite);
  report(2, 10.0, brute_force);
  report(3, 30.0, gradients);
  report(4, 60.0, attack_contracts);

  const Task task = mixture_task();
  StRun st;
  report(5, 300.0, [&] {
    st = st_collapse(task);
    return Outcome{st.pass, st.detail};
  });
  report(6, 300.0, [&] { return fragility(task, st.net); });
  report(7, 0.0, [&] { return cluster_leaping(task, st.net); });
  RobustRun at, trades;
  report(8, 900.0, [&] {
    at = robust_fit(task, Regime::kAt);
    return twin_simplices(task, at);
  });
  report(9, 900.0, [&] {
    trades = robust_fit(task, Regime::kTrades);
    return trades_noncollapse(task, at, trades);
  });
  report(10, 900.0, layerwise_profile);
  report(11, 0.0, determinism);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures;
}
