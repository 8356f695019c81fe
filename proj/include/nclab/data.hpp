#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "nclab/models.hpp"
#include "nclab/tensor.hpp"

namespace nclab {

// Raw inputs in [0,1], one row-major sample per row.
struct Dataset {
  InputShape sample_shape;
  std::vector<double> inputs;
  std::vector<int> labels;
  int num_classes = 0;
  // Free-form provenance (generator parameters, squash range, ...).
  std::map<std::string, std::string> metadata;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_dim() const { return shape_numel(sample_shape); }
  std::span<const double> sample(std::size_t i) const;
  std::vector<std::size_t> class_counts() const;
  bool balanced() const;

  Tensor to_tensor() const;
  Tensor batch(std::span<const std::size_t> indices) const;
  Dataset subset(std::span<const std::size_t> indices) const;
  // Same labels/metadata, inputs replaced by the values of x.
  Dataset with_inputs(const Tensor& x) const;

  void validate() const;
};

struct NormStats {
  std::vector<double> mean;
  std::vector<double> std;
};

inline constexpr double kStdFloor = 1e-8;

// Class centers at center_radius times the vertices of a standard simplex ETF
// embedded in dim, plus isotropic Gaussian noise; the whole sample is then
// mapped affinely into [0,1] using its global min and max.
Dataset make_gaussian_mixture(int num_classes, int n_per_class, int dim, double center_radius,
                              double noise_std, std::uint64_t seed);

// Images {channels,h,w}: each class has a smooth prototype pattern (low
// frequency sinusoids) scaled by contrast around 0.5; every sample adds i.i.d.
// pixel noise and is clamped into [0,1]. With max_shift > 0 each sample's
// prototype is first translated circularly by a uniform offset in
// [-max_shift, max_shift] along both axes.
Dataset make_image_mixture(int num_classes, int n_per_class, int channels, int height, int width,
                           double contrast, double noise_std, std::uint64_t seed, int max_shift = 0);

// Splits every class into its first n_train samples (in dataset order) and the rest.
std::pair<Dataset, Dataset> split_per_class(const Dataset& ds, std::size_t n_train);

// Per-channel population mean/std over all train pixels, std floored at kStdFloor.
NormStats normalize_stats(const Dataset& train);
Normalization to_normalization(const NormStats& stats);

std::vector<std::size_t> balanced_subset_indices(const Dataset& ds, std::size_t n_per_class,
                                                 std::uint64_t seed);
Dataset balanced_subset(const Dataset& ds, std::size_t n_per_class, std::uint64_t seed);

// ---- IDX ----

enum class IdxType : std::uint8_t { kUByte = 0x08, kFloat64 = 0x0E };

// Images file: rank 2 {N,d} -> sample {d}; rank 3 {N,h,w} -> {1,h,w}; rank 4
// {N,c,h,w} -> {c,h,w}. Unsigned bytes are scaled by 1/255; float64 values are
// read as stored (big-endian).
Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                 int num_classes = 0);
void save_idx(const Dataset& ds, const std::filesystem::path& images_path,
              const std::filesystem::path& labels_path, IdxType type);

// Parsed header of an IDX stream (exposed for diagnostics and tests).
struct IdxHeader {
  IdxType type;
  std::vector<std::uint32_t> dims;
};
IdxHeader read_idx_header(std::istream& in, const std::string& what);

// ---- text ----

// One row per sample: label, then the flattened values; separators are
// whitespace or commas. Lines starting with '#' are skipped.
Dataset load_text_dataset(const std::filesystem::path& path, const InputShape& sample_shape,
                          int num_classes = 0);
void save_text_dataset(const Dataset& ds, const std::filesystem::path& path);

// key = value sidecar: counts, normalization stats and metadata entries.
void write_metadata_sidecar(const Dataset& ds, const NormStats* stats, const std::filesystem::path& path);
void write_metadata_sidecar(const Dataset& ds, const NormStats* stats, std::ostream& out);
std::map<std::string, std::string> read_key_values(const std::filesystem::path& path);

}  // namespace nclab
