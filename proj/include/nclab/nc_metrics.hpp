#pragma once

// Neural Collapse geometry on sets of representation vectors.
//
// Notation follows the usual conventions: h_{i,c} are representations of
// class c, mu_c the class means, mu_G the global mean, and the normalized
// centered means are (mu_c - mu_G) / ||mu_c - mu_G||.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "nclab/tensor.hpp"

namespace nclab {

class Network;

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct FeatureSet {
  Matrix features;  // one representation per row, N x p
  std::vector<int> labels;
  int num_classes = 0;

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }
  std::vector<std::size_t> class_counts() const;
  void validate() const;
};

// Flattens a batched representation tensor [N x ...] into a FeatureSet.
FeatureSet make_feature_set(const Tensor& representations, std::span<const int> labels, int num_classes);

enum class ClassCoverage {
  kRequireAll,  // every class must own at least one vector
  kAllowEmpty,  // empty classes are skipped in the between-class average
};

struct ClassStats {
  int num_classes = 0;
  std::vector<std::size_t> counts;
  Matrix means;         // C x p; rows of empty classes are zero
  Vector global_mean;   // mean over all vectors
  Matrix sigma_b;       // AVG_c (mu_c - mu_G)(mu_c - mu_G)^T over retained classes
  Matrix sigma_w;       // AVG_{i,c} (h - mu_c)(h - mu_c)^T

  bool retained(int c) const { return counts[static_cast<std::size_t>(c)] > 0; }
  // Row c is mu_c - mu_G.
  Matrix centered_means() const;
};

ClassStats class_stats(const FeatureSet& fs, ClassCoverage coverage = ClassCoverage::kRequireAll);

// Moore-Penrose pseudoinverse of a symmetric PSD matrix through its
// eigendecomposition. Eigenvalues at or below p * eps * 16 * lambda_max are
// dropped.
Matrix pinv_psd(const Matrix& m);

// Tr(pinv(Sigma_B) * Sigma_W).
double nc1(const ClassStats& stats);

struct Nc2 {
  double equinorm = 0.0;     // population std of ||mu_c - mu_G||
  double equiangular = 0.0;  // AVG_{c != c'} |<mu~_c, mu~_c'> + 1/(C-1)|
};
Nc2 nc2(const ClassStats& stats);

// sqrt(sum_c || w_c/||w_c|| - (mu_c - mu_G)/||mu_c - mu_G|| ||^2).
double nc3(const ClassStats& stats, const Matrix& classifier_weight);

// Index of the nearest center; ties resolve to the lowest index.
int ncc_predict(const Eigen::Ref<const Vector>& h, const Matrix& centers);
std::vector<int> ncc_predict_all(const FeatureSet& fs, const Matrix& centers);

// argmax_c <w_c, h> + b_c for every row; ties resolve to the lowest index.
std::vector<int> linear_predict(const FeatureSet& fs, const Matrix& weight, const Vector& bias);

// Fraction of rows where the linear classifier and the NCC rule on the
// set's own class means disagree.
double nc4_mismatch(const FeatureSet& fs, const ClassStats& stats, const Matrix& weight, const Vector& bias);
double nc4_mismatch(const Network& net, const FeatureSet& penultimate, const ClassStats& stats);

// Agreement between given network predictions on S' and the NCC rule with
// centers from a reference set S.
double ncc_matching_rate(std::span<const int> network_predictions, const FeatureSet& eval,
                         const Matrix& reference_centers);
// Accuracy of the NCC rule with reference centers against the labels of eval.
double ncc_accuracy(const FeatureSet& eval, const Matrix& reference_centers);

// Angle in [0, pi] between two nonzero vectors.
double vector_angle(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b);

// AVG_c arccos<mu~_c, mu~'_c>, each set centered by its own global mean.
double simplex_similarity(const ClassStats& a, const ClassStats& b);
// AVG_c arccos of the angle between the raw class means.
double noncentered_angular(const ClassStats& a, const ClassStats& b);

// C unit vectors in R^p forming a standard simplex ETF (rows). For p > C the
// frame is carried into R^p by a seeded random isometry; for p = C - 1 it is
// expressed in an orthonormal basis of the sum-zero subspace.
Matrix standard_etf(int num_classes, int dim, std::uint64_t seed);

struct PredictedGroup {
  std::size_t count = 0;
  std::optional<double> mean_norm;  // ||nu_c - mu_G(clean)||
  std::optional<double> angle;      // angle to the clean centered mean of c
};

// Groups perturbed representations by their predicted labels (the labels of
// fs) and compares each group mean, centered with the clean global mean, to
// the clean centered class mean.
std::vector<PredictedGroup> predicted_group_stats(const FeatureSet& by_predicted, const ClassStats& clean);

struct NCReport {
  double nc1 = 0.0;
  double nc2_equinorm = 0.0;
  double nc2_equiangular = 0.0;
  std::optional<double> nc3;
  std::optional<double> nc4_mismatch;
  double ncc_accuracy = 0.0;
  double ncc_matching_rate = 0.0;
  std::optional<double> simplex_similarity;
  std::optional<double> noncentered_angular;
};

struct ReportOptions {
  // Final linear layer; enables nc3 and the W/b form of nc4.
  const Matrix* weight = nullptr;
  const Vector* bias = nullptr;
  // Network output on each row of the evaluated set. Derived from weight/bias
  // when empty.
  std::span<const int> network_predictions;
  // Statistics of the reference set S whose centers define the NCC rule. Null
  // means the evaluated set is its own reference.
  const ClassStats* reference = nullptr;
  // Also report simplex_similarity / noncentered_angular against reference;
  // each stays empty when a class mean is zero.
  bool compare_to_reference = false;
};

// NC1-NC3 and nc4 use the class means induced by the evaluated set; the NCC
// accuracy and matching rate use the reference centers.
NCReport nc_report(const FeatureSet& eval, const ReportOptions& options);

}  // namespace nclab
