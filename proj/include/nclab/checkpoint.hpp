#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "nclab/models.hpp"

namespace nclab {

// Binary checkpoint: magic "NCLABCKP", format version, input shape, class
// count, layer specs, normalization and named float64 parameter tensors. All
// integers and doubles little-endian; doubles are stored as raw IEEE-754 bits,
// so save/load round-trips exactly.
inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const Network& net, std::ostream& out);
void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(std::istream& in);
Network load_checkpoint(const std::filesystem::path& path);

// Throws FormatError naming the first difference when the checkpoint's
// architecture is not the expected one.
void require_same_architecture(const Network& loaded, const Network& expected);

}  // namespace nclab
