#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "nclab/attacks.hpp"
#include "nclab/data.hpp"
#include "nclab/models.hpp"

namespace nclab {

enum class Regime { kSt, kAt, kTrades };

std::string regime_name(Regime regime);
Regime parse_regime(const std::string& name);

struct LrDrop {
  int epoch = 0;
  double factor = 1.0;
};

struct TrainConfig {
  Regime regime = Regime::kSt;
  int epochs = 200;
  int batch_size = 128;
  double lr_initial = 0.1;
  std::vector<LrDrop> lr_drops{{100, 0.1}, {150, 0.1}};
  double momentum = 0.9;
  std::uint64_t seed = 0;
  // Training-time perturbation (ce_untargeted for AT, kl for TRADES).
  AttackConfig attack = AttackConfig::defaults(NormKind::kLinf);
  double beta = 6.0;
  // Perturbation used for per-epoch metric evaluation of ST/TRADES models.
  AttackConfig eval_attack = AttackConfig::defaults(NormKind::kLinf);
  int metric_every = 5;
  double gaussian_sigma = kDefaultGaussianSigma;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;  // 1-based count of completed epochs
  double lr = 0.0;
  double clean_accuracy = 0.0;            // full training set, end of epoch
  double ce_loss = 0.0;                   // clean CE, full training set, end of epoch
  double train_objective = 0.0;           // mean minibatch objective during the epoch
  std::optional<double> robust_accuracy;  // accuracy on this epoch's perturbations
  std::optional<double> robust_loss;      // AT: CE on perturbations; TRADES: KL component
};

// Log plus the perturbed inputs an epoch trained on (AT/TRADES), in dataset order.
struct EpochResult {
  EpochLog log;
  std::optional<Tensor> perturbed;
};

// lr_initial times every drop factor whose epoch is <= the given 0-based epoch.
double lr_at(const TrainConfig& cfg, int epoch);

// v <- momentum * v + grad; param <- param - lr * v; grads zeroed afterwards.
void sgd_step(Network& net, double lr, double momentum);

// Deterministic per-epoch permutation of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

EpochResult run_epoch_st(Network& net, const Dataset& data, const TrainConfig& cfg, int epoch);
EpochResult run_epoch_at(Network& net, const Dataset& data, const TrainConfig& cfg, int epoch);
EpochResult run_epoch_trades(Network& net, const Dataset& data, const TrainConfig& cfg, int epoch);

struct EvalContext {
  int epoch = 0;
  const Network& net;
  const Dataset& clean;
  const Dataset& perturbed;  // epoch-relevant adversarial perturbations
  const Dataset& gaussian;   // same-sigma random perturbations
  const EpochLog& log;
};

using MetricHook = std::function<void(const EvalContext&)>;

// Trains for cfg.epochs, invoking the hook every metric_every epochs and after
// the last one. Hook errors propagate with the epoch prefixed.
std::vector<EpochLog> fit(Network& net, const Dataset& data, const TrainConfig& cfg, const MetricHook& hook);

// First epoch with zero training error, if any.
std::optional<int> zero_error_onset(const std::vector<EpochLog>& logs);

}  // namespace nclab
