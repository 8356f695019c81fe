#pragma once

// FeatureSet files for metrics on representations computed elsewhere.
//
// Binary: "NCLABFS1", u32 classes C, u64 dim p, C x u64 per-class counts, then
// the vectors as float64, class 0 first; all little-endian. Loading returns
// rows grouped by class, in their original order within a class.
// Text: optional "# classes = C" line, then one row per vector: label followed
// by the values, separated by commas or whitespace.

#include <filesystem>

#include "nclab/nc_metrics.hpp"

namespace nclab {

enum class FeatureFormat { kBinary, kText };

void save_feature_set(const FeatureSet& fs, const std::filesystem::path& path, FeatureFormat format);
// The format is detected from the leading magic. num_classes > 0 overrides
// the count stored in the file; text files without one use max label + 1.
FeatureSet load_feature_set(const std::filesystem::path& path, int num_classes = 0);

}  // namespace nclab
