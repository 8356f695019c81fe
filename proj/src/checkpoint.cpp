#include "nclab/checkpoint.hpp"

#include <fstream>

#include "nclab/binary_io.hpp"
#include "nclab/errors.hpp"

namespace nclab {

namespace {

constexpr char kMagic[8] = {'N', 'C', 'L', 'A', 'B', 'C', 'K', 'P'};
constexpr std::uint32_t kMaxCount = 1u << 20;

void put_doubles(std::ostream& out, std::span<const double> values) {
  bin::put_le<std::uint64_t>(out, values.size());
  for (double v : values) bin::put_f64_le(out, v);
}

std::vector<double> get_doubles(bin::Reader& r, std::uint64_t expected_max) {
  const auto n = r.le<std::uint64_t>();
  if (n > expected_max) r.fail("implausible value count " + std::to_string(n));
  std::vector<double> out(n);
  for (auto& v : out) v = r.f64_le();
  return out;
}

std::uint32_t get_count(bin::Reader& r, const char* what) {
  const auto n = r.le<std::uint32_t>();
  if (n > kMaxCount) r.fail(std::string("implausible ") + what + " count " + std::to_string(n));
  return n;
}

}  // namespace

void save_checkpoint(const Network& net, std::ostream& out) {
  out.write(kMagic, sizeof(kMagic));
  bin::put_le<std::uint32_t>(out, kCheckpointVersion);
  bin::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.input_shape().size()));
  for (std::size_t d : net.input_shape()) bin::put_le<std::uint64_t>(out, d);
  bin::put_le<std::int32_t>(out, net.num_classes());
  bin::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.layers().size()));
  for (const auto& l : net.layers()) {
    bin::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(l.kind));
    bin::put_le<std::int32_t>(out, l.in);
    bin::put_le<std::int32_t>(out, l.out);
    bin::put_le<std::int32_t>(out, l.kernel);
    bin::put_le<std::int32_t>(out, l.stride);
    bin::put_le<std::int32_t>(out, l.padding);
  }
  put_doubles(out, net.normalization().mean);
  put_doubles(out, net.normalization().std);
  bin::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) {
    bin::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const auto& shape = p.value.shape();
    bin::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(shape.size()));
    for (std::size_t d : shape) bin::put_le<std::uint64_t>(out, d);
    put_doubles(out, p.value.data());
  }
  if (!out) throw IoError("checkpoint: write failed");
}

void save_checkpoint(const Network& net, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  save_checkpoint(net, out);
}

Network load_checkpoint(std::istream& in) {
  bin::Reader r(in, "checkpoint");
  char magic[8];
  r.read(magic, sizeof(magic));
  if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic))) {
    throw FormatError("checkpoint: bad magic at byte offset 0");
  }
  const auto version = r.le<std::uint32_t>();
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));

  InputShape input_shape(get_count(r, "input rank"));
  for (auto& d : input_shape) d = r.le<std::uint64_t>();
  const int num_classes = r.le<std::int32_t>();
  std::vector<LayerSpec> layers(get_count(r, "layer"));
  for (auto& l : layers) {
    const auto kind = r.le<std::uint8_t>();
    if (kind > static_cast<std::uint8_t>(LayerKind::kFlatten)) r.fail("unknown layer kind " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.in = r.le<std::int32_t>();
    l.out = r.le<std::int32_t>();
    l.kernel = r.le<std::int32_t>();
    l.stride = r.le<std::int32_t>();
    l.padding = r.le<std::int32_t>();
  }
  Normalization norm;
  norm.mean = get_doubles(r, kMaxCount);
  norm.std = get_doubles(r, kMaxCount);

  std::vector<Parameter> params(get_count(r, "parameter"));
  for (auto& p : params) {
    const auto len = get_count(r, "name length");
    p.name.resize(len);
    r.read(p.name.data(), len);
    Shape shape(get_count(r, "rank"));
    for (auto& d : shape) d = r.le<std::uint64_t>();
    auto values = get_doubles(r, std::uint64_t{1} << 32);
    if (values.size() != shape_numel(shape)) r.fail("parameter '" + p.name + "' size does not match its shape");
    p.value = Tensor::from_data(std::move(shape), std::move(values), true);
  }
  try {
    return network_from_parts(std::move(input_shape), num_classes, std::move(layers), std::move(norm),
                              std::move(params));
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: inconsistent architecture: ") + e.what());
  }
}

Network load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  try {
    return load_checkpoint(in);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void require_same_architecture(const Network& loaded, const Network& expected) {
  if (loaded.input_shape() != expected.input_shape()) {
    throw FormatError("checkpoint input shape " + shape_str(loaded.input_shape()) +
                      " does not match model spec " + shape_str(expected.input_shape()));
  }
  if (loaded.num_classes() != expected.num_classes()) {
    throw FormatError("checkpoint has " + std::to_string(loaded.num_classes()) +
                      " classes, model spec has " + std::to_string(expected.num_classes()));
  }
  if (loaded.layers() != expected.layers()) {
    const auto& a = loaded.layers();
    const auto& b = expected.layers();
    std::size_t i = 0;
    while (i < a.size() && i < b.size() && a[i] == b[i]) ++i;
    throw FormatError("checkpoint layer stack differs from model spec at layer " + std::to_string(i));
  }
}

}  // namespace nclab
