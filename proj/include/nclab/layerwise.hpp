#pragma once

#include <vector>

#include "nclab/data.hpp"
#include "nclab/models.hpp"
#include "nclab/nc_metrics.hpp"

namespace nclab {

// Flattens one tap [N x ...] to an N x p matrix. When p exceeds max_dim the
// spatial extent is average-pooled with the smallest square window k that
// brings c * ceil(h/k) * ceil(w/k) within max_dim; windows clipped at the
// border average over the cells they cover. Flat taps are pooled as a 1 x d
// map. Throws DimensionError when no window suffices.
Matrix pool_representation(const Tensor& tap, std::size_t max_dim);

// Pooled representations of every tap, ordered by depth.
std::vector<FeatureSet> tap_features(const Network& net, const Dataset& data, std::size_t max_dim);

struct LayerwiseOptions {
  std::size_t max_dim = 512;
  std::size_t threads = 1;
};

// One report per tap: NC1/NC2/nc4 from the evaluated set's own class means,
// NCC accuracy and matching rate against the network output using centers
// from the reference set. The last tap also carries nc3 and the classifier
// form of nc4.
std::vector<NCReport> layerwise_report(const Network& net, const Dataset& reference, const Dataset& eval,
                                       const LayerwiseOptions& options = {});

// Penultimate-layer report of eval against reference, including the simplex
// comparisons.
NCReport penultimate_report(const Network& net, const Dataset& reference, const Dataset& eval);

}  // namespace nclab
