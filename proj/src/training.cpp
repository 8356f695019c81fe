#include "nclab/training.hpp"

#include <algorithm>
#include <cmath>

#include "nclab/errors.hpp"

namespace nclab {

std::string regime_name(Regime regime) {
  switch (regime) {
    case Regime::kSt: return "st";
    case Regime::kAt: return "at";
    case Regime::kTrades: return "trades";
  }
  return "unknown";
}

Regime parse_regime(const std::string& name) {
  if (name == "st") return Regime::kSt;
  if (name == "at") return Regime::kAt;
  if (name == "trades") return Regime::kTrades;
  throw ConfigError("unknown regime '" + name + "' (expected st, at or trades)");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(lr_initial > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train.momentum must be in [0,1)");
  if (metric_every < 1) throw ConfigError("eval.every must be >= 1");
  if (!(gaussian_sigma >= 0.0)) throw ConfigError("eval.sigma must be >= 0");
  for (const auto& d : lr_drops)
    if (!(d.factor > 0.0)) throw ConfigError("learning-rate drop factors must be > 0");
  attack.validate();
  eval_attack.validate();
  if (regime == Regime::kAt && attack.loss_mode != LossMode::kCeUntargeted) {
    throw ConfigError("adversarial training needs a ce_untargeted attack");
  }
  if (regime == Regime::kTrades) {
    if (!(beta >= 0.0)) throw ConfigError("train.beta must be >= 0");
    if (attack.loss_mode != LossMode::kKl) throw ConfigError("TRADES needs a kl attack");
  }
  if (eval_attack.loss_mode != LossMode::kCeUntargeted) {
    throw ConfigError("per-epoch evaluation attack must be ce_untargeted");
  }
}

double lr_at(const TrainConfig& cfg, int epoch) {
  if (epoch < 0 || epoch >= cfg.epochs) {
    throw ContractError("lr_at: epoch " + std::to_string(epoch) + " outside [0," + std::to_string(cfg.epochs) + ")");
  }
  double lr = cfg.lr_initial;
  for (const auto& d : cfg.lr_drops)
    if (d.epoch <= epoch) lr *= d.factor;
  return lr;
}

void sgd_step(Network& net, double lr, double momentum) {
  for (auto& p : net.parameters()) {
    if (!p.value.has_grad()) throw ContractError("sgd_step: parameter '" + p.name + "' has no gradient");
  }
  for (auto& p : net.parameters()) {
    auto g = p.value.grad();
    auto w = p.value.mutable_data();
    if (p.velocity.size() != w.size()) p.velocity.assign(w.size(), 0.0);
    for (std::size_t i = 0; i < w.size(); ++i) {
      p.velocity[i] = momentum * p.velocity[i] + g[i];
      w[i] -= lr * p.velocity[i];
    }
    p.value.zero_grad();
  }
}

namespace {

std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word.
  std::uint64_t z = a + 0x9E3779B97F4A7C15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

struct Batches {
  std::vector<std::size_t> order;
  std::size_t batch_size;
  std::size_t count() const { return (order.size() + batch_size - 1) / batch_size; }
  std::span<const std::size_t> operator[](std::size_t b) const {
    const std::size_t lo = b * batch_size;
    return std::span<const std::size_t>(order).subspan(lo, std::min(batch_size, order.size() - lo));
  }
};

std::vector<int> gather_labels(const Dataset& data, std::span<const std::size_t> idx) {
  std::vector<int> out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = data.labels[idx[k]];
  return out;
}

AttackConfig batch_attack(const AttackConfig& base, const TrainConfig& cfg, int epoch, std::size_t batch) {
  AttackConfig a = base;
  a.seed = mix(mix(base.seed ^ cfg.seed, static_cast<std::uint64_t>(epoch)), batch);
  return a;
}

void finish_log(EpochLog& log, const Network& net, const Dataset& data) {
  NoGradGuard no_grad;
  const Tensor logits = net.forward(data.to_tensor(), ParamMode::kConstant);
  log.ce_loss = softmax_cross_entropy(logits, data.labels).item();
  log.clean_accuracy = accuracy(argmax_rows(logits), data.labels);
}

void scatter_rows(std::vector<double>& dst, const Tensor& rows, std::span<const std::size_t> idx, std::size_t d) {
  auto src = rows.data();
  for (std::size_t k = 0; k < idx.size(); ++k)
    std::copy(src.begin() + static_cast<long>(k * d), src.begin() + static_cast<long>((k + 1) * d),
              dst.begin() + static_cast<long>(idx[k] * d));
}

void check_data(const Dataset& data) {
  if (data.size() == 0) throw DataError("training data is empty");
}

}  // namespace

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::uint64_t state = mix(seed, static_cast<std::uint64_t>(epoch));
  for (std::size_t i = n; i > 1; --i) {
    state = mix(state, i);
    std::swap(order[i - 1], order[state % i]);
  }
  return order;
}

EpochResult run_epoch_st(Network& net, const Dataset& data, const TrainConfig& cfg, int epoch) {
  check_data(data);
  EpochResult res;
  res.log.epoch = epoch + 1;
  res.log.lr = lr_at(cfg, epoch);
  const Batches batches{epoch_order(data.size(), cfg.seed, epoch), static_cast<std::size_t>(cfg.batch_size)};
  double objective = 0.0;
  for (std::size_t b = 0; b < batches.count(); ++b) {
    const auto idx = batches[b];
    const auto labels = gather_labels(data, idx);
    Tensor loss = softmax_cross_entropy(net.forward(data.batch(idx)), labels);
    backward(loss);
    sgd_step(net, res.log.lr, cfg.momentum);
    objective += loss.item();
  }
  res.log.train_objective = objective / static_cast<double>(batches.count());
  finish_log(res.log, net, data);
  return res;
}

EpochResult run_epoch_at(Network& net, const Dataset& data, const TrainConfig& cfg, int epoch) {
  check_data(data);
  if (cfg.attack.loss_mode != LossMode::kCeUntargeted) {
    throw ContractError("run_epoch_at: attack must be ce_untargeted");
  }
  EpochResult res;
  res.log.epoch = epoch + 1;
  res.log.lr = lr_at(cfg, epoch);
  const std::size_t d = data.sample_dim();
  std::vector<double> perturbed(data.inputs.size());
  const Batches batches{epoch_order(data.size(), cfg.seed, epoch), static_cast<std::size_t>(cfg.batch_size)};
  double objective = 0.0;
  std::size_t robust_hits = 0;
  for (std::size_t b = 0; b < batches.count(); ++b) {
    const auto idx = batches[b];
    const auto labels = gather_labels(data, idx);
    // Attack reads parameters as constants; only the update below touches them.
    const Tensor x_adv = pgd_untargeted(net, data.batch(idx), labels, batch_attack(cfg.attack, cfg, epoch, b));
    scatter_rows(perturbed, x_adv, idx, d);
    const Tensor logits = net.forward(x_adv);
    const auto pred = argmax_rows(logits);
    for (std::size_t k = 0; k < idx.size(); ++k) robust_hits += pred[k] == labels[k];
    Tensor loss = softmax_cross_entropy(logits, labels);
    backward(loss);
    sgd_step(net, res.log.lr, cfg.momentum);
    objective += loss.item();
  }
  res.log.train_objective = objective / static_cast<double>(batches.count());
  res.log.robust_loss = res.log.train_objective;
  res.log.robust_accuracy = static_cast<double>(robust_hits) / static_cast<double>(data.size());
  res.perturbed = make_input_batch(data.sample_shape, perturbed, data.size());
  finish_log(res.log, net, data);
  return res;
}

EpochResult run_epoch_trades(Network& net, const Dataset& data, const TrainConfig& cfg, int epoch) {
  check_data(data);
  if (cfg.attack.loss_mode != LossMode::kKl) throw ContractError("run_epoch_trades: attack must be kl");
  EpochResult res;
  res.log.epoch = epoch + 1;
  res.log.lr = lr_at(cfg, epoch);
  const std::size_t d = data.sample_dim();
  std::vector<double> perturbed(data.inputs.size());
  const Batches batches{epoch_order(data.size(), cfg.seed, epoch), static_cast<std::size_t>(cfg.batch_size)};
  double objective = 0.0, kl_total = 0.0;
  std::size_t robust_hits = 0;
  for (std::size_t b = 0; b < batches.count(); ++b) {
    const auto idx = batches[b];
    const auto labels = gather_labels(data, idx);
    const Tensor x = data.batch(idx);
    const Tensor x_bar = pgd_kl(net, x, batch_attack(cfg.attack, cfg, epoch, b));
    scatter_rows(perturbed, x_bar, idx, d);
    const Tensor clean_logits = net.forward(x);
    const Tensor adv_logits = net.forward(x_bar);
    const auto pred = argmax_rows(adv_logits);
    for (std::size_t k = 0; k < idx.size(); ++k) robust_hits += pred[k] == labels[k];
    const Tensor kl = kl_divergence(clean_logits, adv_logits);
    Tensor loss = add(softmax_cross_entropy(clean_logits, labels), scale(kl, cfg.beta));
    backward(loss);
    sgd_step(net, res.log.lr, cfg.momentum);
    objective += loss.item();
    kl_total += kl.item();
  }
  const double nb = static_cast<double>(batches.count());
  res.log.train_objective = objective / nb;
  res.log.robust_loss = kl_total / nb;
  res.log.robust_accuracy = static_cast<double>(robust_hits) / static_cast<double>(data.size());
  res.perturbed = make_input_batch(data.sample_shape, perturbed, data.size());
  finish_log(res.log, net, data);
  return res;
}

namespace {

template <typename Fn>
auto with_epoch_context(int epoch, Fn&& fn) {
  try {
    return fn();
  } catch (const Error&) {
    rethrow_with_context("epoch " + std::to_string(epoch) + ": ");
  }
}

}  // namespace

std::vector<EpochLog> fit(Network& net, const Dataset& data, const TrainConfig& cfg, const MetricHook& hook) {
  cfg.validate();
  data.validate();
  if (hook && !data.balanced()) throw DataError("fit: metric hooks need a class-balanced dataset");
  std::vector<EpochLog> logs;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochResult res = with_epoch_context(epoch + 1, [&] {
      switch (cfg.regime) {
        case Regime::kAt: return run_epoch_at(net, data, cfg, epoch);
        case Regime::kTrades: return run_epoch_trades(net, data, cfg, epoch);
        case Regime::kSt: break;
      }
      return run_epoch_st(net, data, cfg, epoch);
    });
    if (!std::isfinite(res.log.ce_loss) || !std::isfinite(res.log.train_objective)) {
      throw NumericError("epoch " + std::to_string(epoch + 1) + ": training loss is not finite");
    }
    const bool evaluate = (epoch + 1) % cfg.metric_every == 0 || epoch + 1 == cfg.epochs;
    if (hook && evaluate) {
      with_epoch_context(epoch + 1, [&] {
        const Tensor clean = data.to_tensor();
        Tensor adv;
        if (cfg.regime == Regime::kAt) {
          adv = *res.perturbed;
        } else {
          AttackConfig ea = cfg.eval_attack;
          ea.seed = mix(ea.seed ^ cfg.seed, static_cast<std::uint64_t>(epoch) + 0x5EED);
          adv = pgd_untargeted(net, clean, data.labels, ea);
          if (!res.log.robust_accuracy || cfg.regime == Regime::kSt) {
            res.log.robust_accuracy = accuracy(predict(net, adv), data.labels);
          }
        }
        const Dataset perturbed = data.with_inputs(adv);
        const Dataset gaussian =
            data.with_inputs(gaussian_perturb(clean, cfg.gaussian_sigma, mix(cfg.seed, 0x6A05 + static_cast<std::uint64_t>(epoch))));
        hook(EvalContext{epoch + 1, net, data, perturbed, gaussian, res.log});
      });
    }
    logs.push_back(res.log);
  }
  return logs;
}

std::optional<int> zero_error_onset(const std::vector<EpochLog>& logs) {
  for (const auto& l : logs)
    if (l.clean_accuracy == 1.0) return l.epoch;
  return std::nullopt;
}

}  // namespace nclab
