#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nclab/models.hpp"
#include "nclab/tensor.hpp"

namespace nclab {

enum class NormKind { kLinf, kL2 };
enum class LossMode { kCeUntargeted, kCeTargeted, kKl };

std::string norm_kind_name(NormKind norm);
NormKind parse_norm_kind(const std::string& name);
std::string loss_mode_name(LossMode mode);
LossMode parse_loss_mode(const std::string& name);

// Radii and step sizes are in raw input units, i.e. on the [0,1] pixel scale.
struct AttackConfig {
  NormKind norm = NormKind::kLinf;
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 10;
  LossMode loss_mode = LossMode::kCeUntargeted;
  bool random_start = false;
  bool clamp_input_range = true;
  std::uint64_t seed = 0;

  // linf: eps 8/255, alpha 2/255; l2: eps 128/255, alpha 15/255; 10 steps.
  static AttackConfig defaults(NormKind norm, LossMode mode = LossMode::kCeUntargeted);
  void validate() const;
};

inline constexpr double kDefaultGaussianSigma = 8.0 / 255.0;
// Initial jitter for the KL attack; the KL gradient vanishes at x itself.
inline constexpr double kKlStartJitter = 1e-3;

// Projects each sample of x onto the eps-ball around the matching origin
// sample, then (unless disabled) clamps into [0,1].
Tensor project(const Tensor& x, const Tensor& origin, const AttackConfig& cfg);

// Gradient of the mean cross-entropy w.r.t. the input, with parameters held
// constant.
std::vector<double> ce_input_gradient(const Network& net, const Tensor& x, std::span<const int> labels);
// Gradient w.r.t. x of mean KL(softmax(f(clean)) || softmax(f(x))); the clean
// branch is a constant.
std::vector<double> kl_input_gradient(const Network& net, const Tensor& clean, const Tensor& x);

// The per-step ascent direction: sign(g) for linf, g/||g||_2 per sample for l2.
std::vector<double> steepest_direction(std::span<const double> grad, std::size_t batch, NormKind norm);

// Starting iterate x^0 for a configuration (x itself unless a random start or
// KL jitter applies).
Tensor attack_start(const Tensor& x, const AttackConfig& cfg);

Tensor pgd_untargeted(const Network& net, const Tensor& x, std::span<const int> labels,
                      const AttackConfig& cfg);
Tensor pgd_targeted(const Network& net, const Tensor& x, std::span<const int> targets,
                    const AttackConfig& cfg);
Tensor pgd_kl(const Network& net, const Tensor& x, const AttackConfig& cfg);

// (y + 1) mod C.
std::vector<int> circular_targets(std::span<const int> labels, int num_classes);

Tensor gaussian_perturb(const Tensor& x, double sigma, std::uint64_t seed, bool clamp_input_range = true);

// Predictions of the network on x, evaluated without a graph.
std::vector<int> predict(const Network& net, const Tensor& x);
double accuracy(std::span<const int> predictions, std::span<const int> labels);

}  // namespace nclab
