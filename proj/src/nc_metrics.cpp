#include "nclab/nc_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "nclab/errors.hpp"
#include "nclab/models.hpp"

namespace nclab {

namespace {

// Angle between unit vectors; accurate near 0 and pi, unlike arccos of the dot product.
double unit_angle(const Eigen::Ref<const Vector>& u, const Eigen::Ref<const Vector>& v) {
  return 2.0 * std::atan2((u - v).norm(), (u + v).norm());
}

// Norms of the rows of m, throwing for rows that vanish relative to the largest.
Vector checked_row_norms(const Matrix& m, const std::vector<bool>& active, const char* what) {
  Vector norms = m.rowwise().norm();
  double largest = 0.0;
  for (Eigen::Index c = 0; c < norms.size(); ++c)
    if (active[static_cast<std::size_t>(c)]) largest = std::max(largest, norms(c));
  for (Eigen::Index c = 0; c < norms.size(); ++c) {
    if (!active[static_cast<std::size_t>(c)]) continue;
    if (norms(c) == 0.0 || norms(c) <= 1e-12 * largest) {
      throw DegenerateError(std::string(what) + " of class " + std::to_string(c) + " is zero");
    }
  }
  return norms;
}

std::vector<bool> all_active(int n) { return std::vector<bool>(static_cast<std::size_t>(n), true); }

std::vector<bool> retained_mask(const ClassStats& s) {
  std::vector<bool> mask(static_cast<std::size_t>(s.num_classes));
  for (int c = 0; c < s.num_classes; ++c) mask[static_cast<std::size_t>(c)] = s.retained(c);
  return mask;
}

Matrix normalized_rows(const Matrix& m, const Vector& norms) {
  Matrix out = m;
  for (Eigen::Index c = 0; c < m.rows(); ++c)
    if (norms(c) > 0.0) out.row(c) /= norms(c);
  return out;
}

}  // namespace

std::vector<std::size_t> FeatureSet::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_classes, 0)), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

void FeatureSet::validate() const {
  if (num_classes < 2) throw ContractError("FeatureSet: need at least 2 classes");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw DimensionError("FeatureSet: " + std::to_string(features.rows()) + " rows but " +
                         std::to_string(labels.size()) + " labels");
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw IndexError("FeatureSet: label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                       " outside [0," + std::to_string(num_classes) + ")");
    }
  }
}

FeatureSet make_feature_set(const Tensor& representations, std::span<const int> labels, int num_classes) {
  const std::size_t n = representations.dim(0);
  if (n != labels.size()) {
    throw DimensionError("make_feature_set: " + std::to_string(n) + " representations for " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t p = n == 0 ? 0 : representations.numel() / n;
  FeatureSet fs;
  fs.features = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      representations.data().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
  fs.labels.assign(labels.begin(), labels.end());
  fs.num_classes = num_classes;
  fs.validate();
  return fs;
}

Matrix ClassStats::centered_means() const {
  Matrix out = means.rowwise() - global_mean.transpose();
  for (int c = 0; c < num_classes; ++c)
    if (!retained(c)) out.row(c).setZero();
  return out;
}

ClassStats class_stats(const FeatureSet& fs, ClassCoverage coverage) {
  fs.validate();
  if (fs.size() == 0) throw ContractError("class_stats: empty feature set");
  const Eigen::Index p = fs.features.cols();
  ClassStats s;
  s.num_classes = fs.num_classes;
  s.counts = fs.class_counts();
  if (coverage == ClassCoverage::kRequireAll) {
    for (int c = 0; c < fs.num_classes; ++c) {
      if (s.counts[static_cast<std::size_t>(c)] == 0) {
        throw ContractError("class_stats: class " + std::to_string(c) + " has no vectors");
      }
    }
  }
  s.means = Matrix::Zero(fs.num_classes, p);
  for (std::size_t i = 0; i < fs.size(); ++i) s.means.row(fs.labels[i]) += fs.features.row(static_cast<Eigen::Index>(i));
  int retained = 0;
  for (int c = 0; c < fs.num_classes; ++c) {
    const auto n = s.counts[static_cast<std::size_t>(c)];
    if (n > 0) {
      s.means.row(c) /= static_cast<double>(n);
      ++retained;
    }
  }
  s.global_mean = fs.features.colwise().mean().transpose();

  const Matrix centered = s.centered_means();
  s.sigma_b = centered.transpose() * centered / static_cast<double>(retained);

  Matrix within = fs.features;
  for (std::size_t i = 0; i < fs.size(); ++i) within.row(static_cast<Eigen::Index>(i)) -= s.means.row(fs.labels[i]);
  s.sigma_w = within.transpose() * within / static_cast<double>(fs.size());
  return s;
}

Matrix pinv_psd(const Matrix& m) {
  if (m.rows() != m.cols()) throw DimensionError("pinv_psd: matrix is not square");
  const Eigen::Index p = m.rows();
  if (p == 0) return m;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-10 * scale) {
    throw ContractError("pinv_psd: matrix is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  if (eig.info() != Eigen::Success) throw NumericError("pinv_psd: eigendecomposition failed");
  const Vector& lambda = eig.eigenvalues();
  const double lambda_max = lambda.cwiseAbs().maxCoeff();
  const double cutoff = static_cast<double>(p) * std::numeric_limits<double>::epsilon() * 16.0 * lambda_max;
  Vector inv = Vector::Zero(p);
  for (Eigen::Index i = 0; i < p; ++i)
    if (lambda(i) > cutoff) inv(i) = 1.0 / lambda(i);
  const Matrix& v = eig.eigenvectors();
  return v * inv.asDiagonal() * v.transpose();
}

double nc1(const ClassStats& stats) {
  // Tr(A B) for symmetric A, B is the sum of the elementwise product.
  return pinv_psd(stats.sigma_b).cwiseProduct(stats.sigma_w).sum();
}

Nc2 nc2(const ClassStats& stats) {
  const auto mask = retained_mask(stats);
  const Matrix centered = stats.centered_means();
  const Vector norms = checked_row_norms(centered, mask, "centered class mean");
  std::vector<int> active;
  for (int c = 0; c < stats.num_classes; ++c)
    if (mask[static_cast<std::size_t>(c)]) active.push_back(c);
  const double k = static_cast<double>(active.size());

  Nc2 out;
  double mean_norm = 0.0;
  for (int c : active) mean_norm += norms(c);
  mean_norm /= k;
  double var = 0.0;
  for (int c : active) var += (norms(c) - mean_norm) * (norms(c) - mean_norm);
  out.equinorm = std::sqrt(var / k);

  const Matrix unit = normalized_rows(centered, norms);
  const double shift = 1.0 / (static_cast<double>(stats.num_classes) - 1.0);
  double acc = 0.0;
  std::size_t pairs = 0;
  for (int a : active)
    for (int b : active) {
      if (a == b) continue;
      acc += std::abs(unit.row(a).dot(unit.row(b)) + shift);
      ++pairs;
    }
  out.equiangular = pairs ? acc / static_cast<double>(pairs) : 0.0;
  return out;
}

double nc3(const ClassStats& stats, const Matrix& classifier_weight) {
  if (classifier_weight.rows() != stats.num_classes || classifier_weight.cols() != stats.means.cols()) {
    throw DimensionError("nc3: classifier is " + std::to_string(classifier_weight.rows()) + "x" +
                         std::to_string(classifier_weight.cols()) + ", expected " +
                         std::to_string(stats.num_classes) + "x" + std::to_string(stats.means.cols()));
  }
  const auto mask = retained_mask(stats);
  const Matrix centered = stats.centered_means();
  const Matrix mu = normalized_rows(centered, checked_row_norms(centered, mask, "centered class mean"));
  const Matrix w = normalized_rows(classifier_weight,
                                   checked_row_norms(classifier_weight, all_active(stats.num_classes), "classifier row"));
  double total = 0.0;
  for (int c = 0; c < stats.num_classes; ++c)
    if (mask[static_cast<std::size_t>(c)]) total += (w.row(c) - mu.row(c)).squaredNorm();
  return std::sqrt(total);
}

int ncc_predict(const Eigen::Ref<const Vector>& h, const Matrix& centers) {
  if (centers.cols() != h.size()) throw DimensionError("ncc_predict: center dimension mismatch");
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centers.rows(); ++c) {
    const double d = (centers.row(c).transpose() - h).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<int> ncc_predict_all(const FeatureSet& fs, const Matrix& centers) {
  if (centers.cols() != fs.features.cols()) {
    throw DimensionError("ncc_predict_all: centers have dimension " + std::to_string(centers.cols()) +
                         ", features " + std::to_string(fs.features.cols()));
  }
  std::vector<int> out(fs.size());
  for (std::size_t i = 0; i < fs.size(); ++i)
    out[i] = ncc_predict(fs.features.row(static_cast<Eigen::Index>(i)).transpose(), centers);
  return out;
}

std::vector<int> linear_predict(const FeatureSet& fs, const Matrix& weight, const Vector& bias) {
  if (weight.cols() != fs.features.cols() || bias.size() != weight.rows()) {
    throw DimensionError("linear_predict: classifier shape does not match features");
  }
  const Matrix logits = (fs.features * weight.transpose()).rowwise() + bias.transpose();
  std::vector<int> out(fs.size());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index c = 1; c < logits.cols(); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

double nc4_mismatch(const FeatureSet& fs, const ClassStats& stats, const Matrix& weight, const Vector& bias) {
  if (fs.size() == 0) return 0.0;
  const auto net = linear_predict(fs, weight, bias);
  const auto ncc = ncc_predict_all(fs, stats.means);
  std::size_t miss = 0;
  for (std::size_t i = 0; i < fs.size(); ++i) miss += net[i] != ncc[i];
  return static_cast<double>(miss) / static_cast<double>(fs.size());
}

namespace {

std::pair<Matrix, Vector> classifier_matrices(const Network& net) {
  auto [w, b] = net.classifier_params();
  Matrix W = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      w.data().data(), static_cast<Eigen::Index>(w.dim(0)), static_cast<Eigen::Index>(w.dim(1)));
  Vector B = Eigen::Map<const Vector>(b.data().data(), static_cast<Eigen::Index>(b.numel()));
  return {W, B};
}

}  // namespace

double nc4_mismatch(const Network& net, const FeatureSet& penultimate, const ClassStats& stats) {
  auto [w, b] = classifier_matrices(net);
  return nc4_mismatch(penultimate, stats, w, b);
}

double ncc_matching_rate(std::span<const int> network_predictions, const FeatureSet& eval,
                         const Matrix& reference_centers) {
  if (network_predictions.size() != eval.size()) {
    throw DimensionError("ncc_matching_rate: " + std::to_string(network_predictions.size()) +
                         " predictions for " + std::to_string(eval.size()) + " representations");
  }
  if (eval.size() == 0) return 0.0;
  const auto ncc = ncc_predict_all(eval, reference_centers);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) hit += ncc[i] == network_predictions[i];
  return static_cast<double>(hit) / static_cast<double>(eval.size());
}

double ncc_accuracy(const FeatureSet& eval, const Matrix& reference_centers) {
  if (eval.size() == 0) return 0.0;
  const auto ncc = ncc_predict_all(eval, reference_centers);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) hit += ncc[i] == eval.labels[i];
  return static_cast<double>(hit) / static_cast<double>(eval.size());
}

double vector_angle(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) throw DegenerateError("vector_angle: zero vector");
  return unit_angle(a / na, b / nb);
}

double simplex_similarity(const ClassStats& a, const ClassStats& b) {
  if (a.num_classes != b.num_classes || a.means.cols() != b.means.cols()) {
    throw DimensionError("simplex_similarity: simplices differ in class count or dimension");
  }
  const auto mask = all_active(a.num_classes);
  const Matrix ca = a.centered_means();
  const Matrix cb = b.centered_means();
  const Matrix ua = normalized_rows(ca, checked_row_norms(ca, mask, "centered class mean"));
  const Matrix ub = normalized_rows(cb, checked_row_norms(cb, mask, "centered class mean"));
  double total = 0.0;
  for (int c = 0; c < a.num_classes; ++c) total += unit_angle(ua.row(c).transpose(), ub.row(c).transpose());
  return total / a.num_classes;
}

double noncentered_angular(const ClassStats& a, const ClassStats& b) {
  if (a.num_classes != b.num_classes || a.means.cols() != b.means.cols()) {
    throw DimensionError("noncentered_angular: simplices differ in class count or dimension");
  }
  const auto mask = all_active(a.num_classes);
  const Matrix ua = normalized_rows(a.means, checked_row_norms(a.means, mask, "class mean"));
  const Matrix ub = normalized_rows(b.means, checked_row_norms(b.means, mask, "class mean"));
  double total = 0.0;
  for (int c = 0; c < a.num_classes; ++c) total += unit_angle(ua.row(c).transpose(), ub.row(c).transpose());
  return total / a.num_classes;
}

Matrix standard_etf(int num_classes, int dim, std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("standard_etf: need at least 2 classes");
  if (dim < num_classes - 1) {
    throw ConfigError("standard_etf: dimension " + std::to_string(dim) + " cannot hold " +
                      std::to_string(num_classes) + " simplex vertices (needs >= C-1)");
  }
  const Eigen::Index c = num_classes;
  const double s = std::sqrt(static_cast<double>(c) / static_cast<double>(c - 1));
  const Matrix frame = s * (Matrix::Identity(c, c) - Matrix::Constant(c, c, 1.0 / static_cast<double>(c)));
  if (dim == num_classes) return frame;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  if (dim == num_classes - 1) {
    // Orthonormal basis of the sum-zero subspace from the frame's own columns.
    Eigen::HouseholderQR<Matrix> qr(frame);
    const Matrix basis = Matrix(qr.householderQ()).leftCols(c - 1);
    Matrix rot(c - 1, c - 1);
    for (Eigen::Index i = 0; i < rot.size(); ++i) rot.data()[i] = n01(rng);
    Eigen::HouseholderQR<Matrix> rqr(rot);
    return frame * basis * Matrix(rqr.householderQ());
  }
  Matrix g(dim, c);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n01(rng);
  Eigen::HouseholderQR<Matrix> qr(g);
  const Matrix iso = Matrix(qr.householderQ()).leftCols(c);  // dim x C, orthonormal columns
  return frame * iso.transpose();
}

std::vector<PredictedGroup> predicted_group_stats(const FeatureSet& by_predicted, const ClassStats& clean) {
  if (by_predicted.num_classes != clean.num_classes || static_cast<Eigen::Index>(by_predicted.dim()) != clean.means.cols()) {
    throw DimensionError("predicted_group_stats: feature set does not match clean statistics");
  }
  by_predicted.validate();
  const int C = clean.num_classes;
  std::vector<PredictedGroup> out(static_cast<std::size_t>(C));
  Matrix sums = Matrix::Zero(C, clean.means.cols());
  for (std::size_t i = 0; i < by_predicted.size(); ++i) {
    sums.row(by_predicted.labels[i]) += by_predicted.features.row(static_cast<Eigen::Index>(i));
    ++out[static_cast<std::size_t>(by_predicted.labels[i])].count;
  }
  const Matrix clean_centered = clean.centered_means();
  for (int c = 0; c < C; ++c) {
    auto& g = out[static_cast<std::size_t>(c)];
    if (g.count == 0) continue;
    const Vector nu = sums.row(c).transpose() / static_cast<double>(g.count) - clean.global_mean;
    const double norm = nu.norm();
    g.mean_norm = norm;
    const double ref = clean_centered.row(c).norm();
    if (norm > 0.0 && ref > 0.0) g.angle = vector_angle(nu, clean_centered.row(c).transpose());
  }
  return out;
}

NCReport nc_report(const FeatureSet& eval, const ReportOptions& options) {
  if ((options.weight == nullptr) != (options.bias == nullptr)) {
    throw ContractError("nc_report: weight and bias must be given together");
  }
  const ClassStats own = class_stats(eval);
  const ClassStats& ref = options.reference ? *options.reference : own;

  std::vector<int> derived;
  std::span<const int> predictions = options.network_predictions;
  if (predictions.empty()) {
    if (!options.weight) throw ContractError("nc_report: need network predictions or a classifier");
    derived = linear_predict(eval, *options.weight, *options.bias);
    predictions = derived;
  }

  NCReport r;
  r.nc1 = nc1(own);
  const Nc2 n2 = nc2(own);
  r.nc2_equinorm = n2.equinorm;
  r.nc2_equiangular = n2.equiangular;
  if (options.weight) {
    r.nc3 = nc3(own, *options.weight);
    r.nc4_mismatch = nc4_mismatch(eval, own, *options.weight, *options.bias);
  } else {
    r.nc4_mismatch = 1.0 - ncc_matching_rate(predictions, eval, own.means);
  }
  r.ncc_accuracy = ncc_accuracy(eval, ref.means);
  r.ncc_matching_rate = ncc_matching_rate(predictions, eval, ref.means);
  if (options.compare_to_reference) {
    // A zero class mean (e.g. a dead ReLU layer) leaves the angle undefined.
    try {
      r.simplex_similarity = simplex_similarity(ref, own);
    } catch (const DegenerateError&) {
    }
    try {
      r.noncentered_angular = noncentered_angular(ref, own);
    } catch (const DegenerateError&) {
    }
  }
  return r;
}

}  // namespace nclab
