#include "nclab/layerwise.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "nclab/attacks.hpp"
#include "nclab/errors.hpp"
#include "nclab/parallel.hpp"

namespace nclab {

Matrix pool_representation(const Tensor& tap, std::size_t max_dim) {
  if (max_dim == 0) throw ContractError("pool_representation: max_dim must be >= 1");
  const Shape& s = tap.shape();
  if (s.size() != 2 && s.size() != 4) {
    throw DimensionError("pool_representation: expected [N x d] or [N x c x h x w], got " + shape_str(s));
  }
  const std::size_t n = s[0];
  const std::size_t c = s.size() == 4 ? s[1] : 1;
  const std::size_t h = s.size() == 4 ? s[2] : 1;
  const std::size_t w = s.size() == 4 ? s[3] : s[1];
  const std::size_t full = c * h * w;
  auto data = tap.data();

  std::size_t k = 1;
  auto pooled_dim = [&](std::size_t kk) { return c * ((h + kk - 1) / kk) * ((w + kk - 1) / kk); };
  while (pooled_dim(k) > max_dim) {
    if (k >= std::max(h, w)) {
      throw DimensionError("pool_representation: " + std::to_string(c) +
                           " channels exceed max_dim " + std::to_string(max_dim) + " even after full pooling");
    }
    ++k;
  }
  if (k == 1) {
    Matrix out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(full));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < full; ++j) out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = data[i * full + j];
    return out;
  }
  const std::size_t oh = (h + k - 1) / k, ow = (w + k - 1) / k;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c * oh * ow));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = data.data() + i * full + ch * h * w;
      for (std::size_t bi = 0; bi < oh; ++bi) {
        for (std::size_t bj = 0; bj < ow; ++bj) {
          double acc = 0.0;
          std::size_t cells = 0;
          for (std::size_t y = bi * k; y < std::min(h, (bi + 1) * k); ++y)
            for (std::size_t x = bj * k; x < std::min(w, (bj + 1) * k); ++x) {
              acc += src[y * w + x];
              ++cells;
            }
          out(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>((ch * oh + bi) * ow + bj)) = acc / static_cast<double>(cells);
        }
      }
    }
  }
  return out;
}

std::vector<FeatureSet> tap_features(const Network& net, const Dataset& data, std::size_t max_dim) {
  NoGradGuard no_grad;
  const TappedForward fwd = net.forward_with_taps(data.to_tensor(), ParamMode::kConstant);
  std::vector<FeatureSet> out;
  out.reserve(fwd.taps.size());
  for (const Tensor& tap : fwd.taps) {
    FeatureSet fs;
    fs.features = pool_representation(tap, max_dim);
    fs.labels = data.labels;
    fs.num_classes = data.num_classes;
    fs.validate();
    out.push_back(std::move(fs));
  }
  return out;
}

namespace {

std::pair<Matrix, Vector> classifier_of(const Network& net) {
  auto [w, b] = net.classifier_params();
  Matrix W(static_cast<Eigen::Index>(w.dim(0)), static_cast<Eigen::Index>(w.dim(1)));
  auto wd = w.data();
  for (Eigen::Index i = 0; i < W.rows(); ++i)
    for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = wd[static_cast<std::size_t>(i * W.cols() + j)];
  Vector B(static_cast<Eigen::Index>(b.numel()));
  for (Eigen::Index i = 0; i < B.size(); ++i) B(i) = b.data()[static_cast<std::size_t>(i)];
  return {W, B};
}

}  // namespace

std::vector<NCReport> layerwise_report(const Network& net, const Dataset& reference, const Dataset& eval,
                                       const LayerwiseOptions& options) {
  if (reference.num_classes != eval.num_classes) {
    throw DimensionError("layerwise_report: reference and evaluated sets differ in class count");
  }
  const auto ref_taps = tap_features(net, reference, options.max_dim);
  const auto eval_taps = tap_features(net, eval, options.max_dim);
  const auto predictions = predict(net, eval.to_tensor());
  const auto [W, B] = classifier_of(net);
  const std::size_t last = ref_taps.size() - 1;

  std::vector<NCReport> reports(ref_taps.size());
  parallel_for(ref_taps.size(), options.threads, [&](std::size_t layer) {
    try {
      const ClassStats ref_stats = class_stats(ref_taps[layer]);
      ReportOptions ro;
      ro.network_predictions = predictions;
      ro.reference = &ref_stats;
      if (layer == last) {
        ro.weight = &W;
        ro.bias = &B;
      }
      reports[layer] = nc_report(eval_taps[layer], ro);
    } catch (const Error&) {
      rethrow_with_context("layer " + std::to_string(layer) + ": ");
    }
  });
  return reports;
}

NCReport penultimate_report(const Network& net, const Dataset& reference, const Dataset& eval) {
  const std::size_t unlimited = std::numeric_limits<std::size_t>::max();
  const FeatureSet ref = tap_features(net, reference, unlimited).back();
  const FeatureSet ev = tap_features(net, eval, unlimited).back();
  const auto [W, B] = classifier_of(net);
  const auto predictions = predict(net, eval.to_tensor());
  const ClassStats ref_stats = class_stats(ref);
  ReportOptions ro;
  ro.weight = &W;
  ro.bias = &B;
  ro.network_predictions = predictions;
  ro.reference = &ref_stats;
  ro.compare_to_reference = true;
  return nc_report(ev, ro);
}

}  // namespace nclab
