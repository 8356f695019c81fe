#include "nclab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nclab/errors.hpp"

namespace nclab {

std::string norm_kind_name(NormKind norm) { return norm == NormKind::kLinf ? "linf" : "l2"; }

NormKind parse_norm_kind(const std::string& name) {
  if (name == "linf") return NormKind::kLinf;
  if (name == "l2") return NormKind::kL2;
  throw ConfigError("unknown norm '" + name + "' (expected linf or l2)");
}

std::string loss_mode_name(LossMode mode) {
  switch (mode) {
    case LossMode::kCeUntargeted: return "ce_untargeted";
    case LossMode::kCeTargeted: return "ce_targeted";
    case LossMode::kKl: return "kl";
  }
  return "unknown";
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "ce_untargeted") return LossMode::kCeUntargeted;
  if (name == "ce_targeted") return LossMode::kCeTargeted;
  if (name == "kl") return LossMode::kKl;
  throw ConfigError("unknown loss_mode '" + name + "'");
}

AttackConfig AttackConfig::defaults(NormKind norm, LossMode mode) {
  AttackConfig cfg;
  cfg.norm = norm;
  cfg.loss_mode = mode;
  if (norm == NormKind::kL2) {
    cfg.epsilon = 128.0 / 255.0;
    cfg.alpha = 15.0 / 255.0;
  }
  return cfg;
}

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) throw ConfigError("attack epsilon must be >= 0");
  if (steps < 0) throw ConfigError("attack steps must be >= 0");
  if (steps > 0 && !(alpha > 0.0)) throw ConfigError("attack alpha must be > 0 when steps > 0");
}

namespace {

std::size_t per_sample(const Tensor& x) {
  const std::size_t batch = x.dim(0);
  return batch == 0 ? 0 : x.numel() / batch;
}

void require_mode(const AttackConfig& cfg, LossMode mode, const char* fn) {
  if (cfg.loss_mode != mode) {
    throw ContractError(std::string(fn) + ": config loss_mode is " + loss_mode_name(cfg.loss_mode) +
                        ", expected " + loss_mode_name(mode));
  }
  cfg.validate();
}

template <typename GradFn>
Tensor run_pgd(const Tensor& x, const AttackConfig& cfg, double direction, GradFn grad_fn) {
  if (cfg.steps == 0) return x.detach();
  Tensor origin = x.detach();
  Tensor cur = attack_start(origin, cfg);
  const std::size_t batch = x.dim(0);
  for (int k = 0; k < cfg.steps; ++k) {
    const std::vector<double> g = grad_fn(cur);
    const std::vector<double> step = steepest_direction(g, batch, cfg.norm);
    std::vector<double> next = cur.to_vector();
    for (std::size_t i = 0; i < next.size(); ++i) next[i] += direction * cfg.alpha * step[i];
    cur = project(Tensor::from_data(x.shape(), std::move(next)), origin, cfg);
  }
  return cur;
}

}  // namespace

Tensor project(const Tensor& x, const Tensor& origin, const AttackConfig& cfg) {
  if (x.shape() != origin.shape()) {
    throw DimensionError("project: shape " + shape_str(x.shape()) + " vs origin " + shape_str(origin.shape()));
  }
  std::vector<double> out = x.to_vector();
  const auto o = origin.data();
  const double eps = cfg.epsilon;
  if (cfg.norm == NormKind::kLinf) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], o[i] - eps, o[i] + eps);
  } else {
    const std::size_t batch = x.rank() == 0 ? 1 : x.dim(0);
    const std::size_t d = batch == 0 ? 0 : out.size() / batch;
    for (std::size_t b = 0; b < batch; ++b) {
      double sq = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double diff = out[b * d + j] - o[b * d + j];
        sq += diff * diff;
      }
      const double norm = std::sqrt(sq);
      if (norm > eps) {
        const double factor = eps / norm;
        for (std::size_t j = 0; j < d; ++j) {
          const std::size_t i = b * d + j;
          out[i] = o[i] + (out[i] - o[i]) * factor;
        }
      }
    }
  }
  if (cfg.clamp_input_range) {
    for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

std::vector<double> ce_input_gradient(const Network& net, const Tensor& x, std::span<const int> labels) {
  Tensor xk = Tensor::from_data(x.shape(), x.to_vector(), true);
  Tensor loss = softmax_cross_entropy(net.forward(xk, ParamMode::kConstant), labels);
  backward(loss);
  return {xk.grad().begin(), xk.grad().end()};
}

std::vector<double> kl_input_gradient(const Network& net, const Tensor& clean, const Tensor& x) {
  Tensor p_logits;
  {
    NoGradGuard no_grad;
    p_logits = net.forward(clean, ParamMode::kConstant);
  }
  Tensor xk = Tensor::from_data(x.shape(), x.to_vector(), true);
  Tensor loss = kl_divergence(p_logits, net.forward(xk, ParamMode::kConstant));
  backward(loss);
  return {xk.grad().begin(), xk.grad().end()};
}

std::vector<double> steepest_direction(std::span<const double> grad, std::size_t batch, NormKind norm) {
  std::vector<double> out(grad.size(), 0.0);
  if (norm == NormKind::kLinf) {
    for (std::size_t i = 0; i < grad.size(); ++i) out[i] = grad[i] > 0.0 ? 1.0 : (grad[i] < 0.0 ? -1.0 : 0.0);
    return out;
  }
  const std::size_t d = batch == 0 ? 0 : grad.size() / batch;
  for (std::size_t b = 0; b < batch; ++b) {
    double sq = 0.0;
    for (std::size_t j = 0; j < d; ++j) sq += grad[b * d + j] * grad[b * d + j];
    const double norm2 = std::sqrt(sq);
    if (norm2 == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] = grad[b * d + j] / norm2;
  }
  return out;
}

Tensor attack_start(const Tensor& x, const AttackConfig& cfg) {
  if (cfg.steps == 0) return x.detach();
  std::mt19937_64 rng(cfg.seed);
  std::vector<double> start = x.to_vector();
  if (cfg.random_start) {
    if (cfg.norm == NormKind::kLinf) {
      std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
      for (double& v : start) v += u(rng);
    } else {
      std::normal_distribution<double> n01(0.0, 1.0);
      std::uniform_real_distribution<double> u01(0.0, 1.0);
      const std::size_t batch = x.dim(0), d = per_sample(x);
      std::vector<double> dir(d);
      for (std::size_t b = 0; b < batch; ++b) {
        double sq = 0.0;
        for (double& v : dir) {
          v = n01(rng);
          sq += v * v;
        }
        const double radius = cfg.epsilon * u01(rng) / std::max(std::sqrt(sq), 1e-300);
        for (std::size_t j = 0; j < d; ++j) start[b * d + j] += radius * dir[j];
      }
    }
  } else if (cfg.loss_mode == LossMode::kKl) {
    std::normal_distribution<double> jitter(0.0, kKlStartJitter);
    for (double& v : start) v += jitter(rng);
  } else {
    return x.detach();
  }
  return project(Tensor::from_data(x.shape(), std::move(start)), x, cfg);
}

Tensor pgd_untargeted(const Network& net, const Tensor& x, std::span<const int> labels, const AttackConfig& cfg) {
  require_mode(cfg, LossMode::kCeUntargeted, "pgd_untargeted");
  return run_pgd(x, cfg, +1.0, [&](const Tensor& cur) { return ce_input_gradient(net, cur, labels); });
}

Tensor pgd_targeted(const Network& net, const Tensor& x, std::span<const int> targets, const AttackConfig& cfg) {
  require_mode(cfg, LossMode::kCeTargeted, "pgd_targeted");
  return run_pgd(x, cfg, -1.0, [&](const Tensor& cur) { return ce_input_gradient(net, cur, targets); });
}

Tensor pgd_kl(const Network& net, const Tensor& x, const AttackConfig& cfg) {
  require_mode(cfg, LossMode::kKl, "pgd_kl");
  const Tensor clean = x.detach();
  return run_pgd(x, cfg, +1.0, [&](const Tensor& cur) { return kl_input_gradient(net, clean, cur); });
}

std::vector<int> circular_targets(std::span<const int> labels, int num_classes) {
  if (num_classes < 1) throw ConfigError("circular_targets: num_classes must be >= 1");
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw IndexError("circular_targets: label " + std::to_string(labels[i]) + " outside [0," +
                       std::to_string(num_classes) + ")");
    }
    out[i] = (labels[i] + 1) % num_classes;
  }
  return out;
}

Tensor gaussian_perturb(const Tensor& x, double sigma, std::uint64_t seed, bool clamp_input_range) {
  if (!(sigma >= 0.0)) throw ConfigError("gaussian_perturb: sigma must be >= 0");
  std::vector<double> out = x.to_vector();
  if (sigma > 0.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (double& v : out) v += noise(rng);
  }
  if (clamp_input_range) {
    for (double& v : out) v = std::clamp(v, 0.0, 1.0);
  }
  return Tensor::from_data(x.shape(), std::move(out));
}

std::vector<int> predict(const Network& net, const Tensor& x) {
  NoGradGuard no_grad;
  return argmax_rows(net.forward(x, ParamMode::kConstant));
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) throw DimensionError("accuracy: length mismatch");
  if (labels.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace nclab
