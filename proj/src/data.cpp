#include "nclab/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>

#include "nclab/binary_io.hpp"
#include "nclab/errors.hpp"
#include "nclab/nc_metrics.hpp"
#include "nclab/text_format.hpp"

namespace nclab {

namespace {

int infer_classes(const std::vector<int>& labels, int requested) {
  int mx = -1;
  for (int y : labels) mx = std::max(mx, y);
  return requested > 0 ? requested : std::max(mx + 1, 2);
}

}  // namespace

// ---- Dataset ----

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t d = sample_dim();
  return std::span<const double>(inputs).subspan(i * d, d);
}

std::vector<std::size_t> Dataset::class_counts() const {
  std::vector<std::size_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (int y : labels) ++counts[static_cast<std::size_t>(y)];
  return counts;
}

bool Dataset::balanced() const {
  const auto counts = class_counts();
  return std::adjacent_find(counts.begin(), counts.end(), std::not_equal_to<>()) == counts.end();
}

Tensor Dataset::to_tensor() const { return make_input_batch(sample_shape, inputs, size()); }

Tensor Dataset::batch(std::span<const std::size_t> indices) const {
  const std::size_t d = sample_dim();
  std::vector<double> flat(indices.size() * d);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    auto s = sample(indices[k]);
    std::copy(s.begin(), s.end(), flat.begin() + static_cast<long>(k * d));
  }
  return make_input_batch(sample_shape, flat, indices.size());
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.sample_shape = sample_shape;
  out.num_classes = num_classes;
  out.metadata = metadata;
  const std::size_t d = sample_dim();
  out.inputs.reserve(indices.size() * d);
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= size()) throw IndexError("subset: index " + std::to_string(i) + " out of range");
    auto s = sample(i);
    out.inputs.insert(out.inputs.end(), s.begin(), s.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset Dataset::with_inputs(const Tensor& x) const {
  if (x.numel() != inputs.size()) {
    throw DimensionError("with_inputs: tensor " + shape_str(x.shape()) + " does not match dataset of " +
                         std::to_string(size()) + " samples");
  }
  Dataset out = *this;
  out.inputs = x.to_vector();
  return out;
}

void Dataset::validate() const {
  if (num_classes < 2) throw DataError("dataset needs at least 2 classes");
  if (inputs.size() != labels.size() * sample_dim()) {
    throw DataError("dataset has " + std::to_string(inputs.size()) + " values for " +
                    std::to_string(labels.size()) + " samples of shape " + shape_str(sample_shape));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes) {
      throw DataError("label " + std::to_string(labels[i]) + " at sample " + std::to_string(i) +
                      " outside [0," + std::to_string(num_classes) + ")");
    }
  }
  for (double v : inputs) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("dataset input value outside [0,1]");
  }
}

// ---- generators ----

Dataset make_gaussian_mixture(int num_classes, int n_per_class, int dim, double center_radius, double noise_std,
                              std::uint64_t seed) {
  if (num_classes < 2) throw ConfigError("make_gaussian_mixture: need at least 2 classes");
  if (n_per_class < 1) throw ConfigError("make_gaussian_mixture: n_per_class must be >= 1");
  if (!(noise_std >= 0.0)) throw ConfigError("make_gaussian_mixture: noise_std must be >= 0");
  if (dim < num_classes - 1) {
    throw ConfigError("make_gaussian_mixture: dim " + std::to_string(dim) + " < C-1 = " +
                      std::to_string(num_classes - 1));
  }
  const Matrix centers = center_radius * standard_etf(num_classes, dim, seed);
  std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
  std::normal_distribution<double> noise(0.0, 1.0);

  Dataset ds;
  ds.sample_shape = {static_cast<std::size_t>(dim)};
  ds.num_classes = num_classes;
  const std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(n_per_class);
  ds.inputs.resize(n * static_cast<std::size_t>(dim));
  ds.labels.resize(n);
  // Interleaved: sample i belongs to class i mod C.
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    ds.labels[i] = c;
    for (int j = 0; j < dim; ++j)
      ds.inputs[i * static_cast<std::size_t>(dim) + static_cast<std::size_t>(j)] = centers(c, j) + noise_std * noise(rng);
  }
  const auto [lo_it, hi_it] = std::minmax_element(ds.inputs.begin(), ds.inputs.end());
  const double lo = *lo_it, hi = *hi_it;
  const double span = hi - lo;
  for (double& v : ds.inputs) v = span > 0.0 ? std::clamp((v - lo) / span, 0.0, 1.0) : 0.5;

  ds.metadata["generator"] = "gaussian_mixture";
  ds.metadata["generator.classes"] = std::to_string(num_classes);
  ds.metadata["generator.n_per_class"] = std::to_string(n_per_class);
  ds.metadata["generator.dim"] = std::to_string(dim);
  ds.metadata["generator.center_radius"] = format_number(center_radius);
  ds.metadata["generator.noise_std"] = format_number(noise_std);
  ds.metadata["generator.seed"] = std::to_string(seed);
  ds.metadata["squash.min"] = format_number(lo);
  ds.metadata["squash.max"] = format_number(hi);
  // Distance between class centers after squashing, in input units.
  const double center_gap = span > 0.0 ? center_radius * std::sqrt(2.0 * num_classes / (num_classes - 1.0)) / span : 0.0;
  ds.metadata["squash.center_distance"] = format_number(center_gap);
  return ds;
}

Dataset make_image_mixture(int num_classes, int n_per_class, int channels, int height, int width, double contrast,
                           double noise_std, std::uint64_t seed, int max_shift) {
  if (num_classes < 2) throw ConfigError("make_image_mixture: need at least 2 classes");
  if (n_per_class < 1 || channels < 1 || height < 1 || width < 1) {
    throw ConfigError("make_image_mixture: sizes must be >= 1");
  }
  if (!(noise_std >= 0.0)) throw ConfigError("make_image_mixture: noise_std must be >= 0");
  if (max_shift < 0) throw ConfigError("make_image_mixture: max_shift must be >= 0");
  const std::size_t hw = static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  const std::size_t d = static_cast<std::size_t>(channels) * hw;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<int> freq(0, 2);

  // Prototype: sum of three low-frequency plane waves per channel, rescaled to
  // unit max magnitude.
  std::vector<double> protos(static_cast<std::size_t>(num_classes) * d, 0.0);
  for (int c = 0; c < num_classes; ++c) {
    for (int ch = 0; ch < channels; ++ch) {
      double* p = protos.data() + static_cast<std::size_t>(c) * d + static_cast<std::size_t>(ch) * hw;
      for (int wave = 0; wave < 3; ++wave) {
        int fy = freq(rng), fx = freq(rng);
        if (fy == 0 && fx == 0) fx = 1;
        const double ph = phase(rng);
        for (int i = 0; i < height; ++i)
          for (int j = 0; j < width; ++j)
            p[static_cast<std::size_t>(i * width + j)] +=
                std::sin(2.0 * std::numbers::pi * (fy * (i + 0.5) / height + fx * (j + 0.5) / width) + ph);
      }
      const double mx = std::max(1e-12, *std::max_element(p, p + hw, [](double a, double b) {
        return std::abs(a) < std::abs(b);
      }));
      const double peak = std::abs(mx);
      for (std::size_t k = 0; k < hw; ++k) p[k] /= peak;
    }
  }

  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_int_distribution<int> shift(-max_shift, max_shift);
  Dataset ds;
  ds.sample_shape = {static_cast<std::size_t>(channels), static_cast<std::size_t>(height),
                     static_cast<std::size_t>(width)};
  ds.num_classes = num_classes;
  const std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(n_per_class);
  ds.inputs.resize(n * d);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    ds.labels[i] = c;
    const double* p = protos.data() + static_cast<std::size_t>(c) * d;
    int dy = 0, dx = 0;
    if (max_shift > 0) {
      dy = shift(rng);
      dx = shift(rng);
    }
    // Circular translation of the prototype by (dy, dx).
    for (std::size_t k = 0; k < d; ++k) {
      const int ch = static_cast<int>(k / hw), y = static_cast<int>(k % hw) / width, x = static_cast<int>(k % hw) % width;
      const int sy = ((y - dy) % height + height) % height, sx = ((x - dx) % width + width) % width;
      const double v = p[static_cast<std::size_t>(ch) * hw + static_cast<std::size_t>(sy * width + sx)];
      ds.inputs[i * d + k] = std::clamp(0.5 + contrast * v + noise_std * noise(rng), 0.0, 1.0);
    }
  }
  ds.metadata["generator"] = "image_mixture";
  ds.metadata["generator.classes"] = std::to_string(num_classes);
  ds.metadata["generator.n_per_class"] = std::to_string(n_per_class);
  ds.metadata["generator.shape"] = shape_str(ds.sample_shape);
  ds.metadata["generator.contrast"] = format_number(contrast);
  ds.metadata["generator.noise_std"] = format_number(noise_std);
  ds.metadata["generator.max_shift"] = std::to_string(max_shift);
  ds.metadata["generator.seed"] = std::to_string(seed);
  return ds;
}

std::pair<Dataset, Dataset> split_per_class(const Dataset& ds, std::size_t n_train) {
  std::vector<std::size_t> seen(static_cast<std::size_t>(ds.num_classes), 0);
  std::vector<std::size_t> train, test;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& k = seen[static_cast<std::size_t>(ds.labels[i])];
    (k++ < n_train ? train : test).push_back(i);
  }
  return {ds.subset(train), ds.subset(test)};
}

NormStats normalize_stats(const Dataset& train) {
  if (train.size() == 0) throw DataError("normalize_stats: empty train split");
  const std::size_t channels = train.sample_shape.size() == 3 ? train.sample_shape[0] : 1;
  const std::size_t block = train.sample_dim() / channels;
  NormStats st;
  st.mean.assign(channels, 0.0);
  st.std.assign(channels, 0.0);
  const double count = static_cast<double>(train.size() * block);
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto s = train.sample(i);
    for (std::size_t k = 0; k < s.size(); ++k) st.mean[k / block] += s[k];
  }
  for (double& m : st.mean) m /= count;
  for (std::size_t i = 0; i < train.size(); ++i) {
    auto s = train.sample(i);
    for (std::size_t k = 0; k < s.size(); ++k) {
      const double diff = s[k] - st.mean[k / block];
      st.std[k / block] += diff * diff;
    }
  }
  for (double& v : st.std) v = std::max(std::sqrt(v / count), kStdFloor);
  return st;
}

Normalization to_normalization(const NormStats& stats) { return Normalization{stats.mean, stats.std}; }

std::vector<std::size_t> balanced_subset_indices(const Dataset& ds, std::size_t n_per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> out;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& idx = by_class[c];
    if (idx.size() < n_per_class) {
      throw DataError("balanced_subset: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                      " examples, need " + std::to_string(n_per_class));
    }
    // Partial Fisher-Yates with an explicit index draw keeps the result
    // independent of the standard library's shuffle implementation.
    for (std::size_t k = 0; k < n_per_class; ++k) {
      const std::size_t j = k + static_cast<std::size_t>(rng() % (idx.size() - k));
      std::swap(idx[k], idx[j]);
    }
    out.insert(out.end(), idx.begin(), idx.begin() + static_cast<long>(n_per_class));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset balanced_subset(const Dataset& ds, std::size_t n_per_class, std::uint64_t seed) {
  return ds.subset(balanced_subset_indices(ds, n_per_class, seed));
}

// ---- IDX ----

IdxHeader read_idx_header(std::istream& in, const std::string& what) {
  bin::Reader r(in, what);
  unsigned char magic[4];
  r.read(magic, 4);
  if (magic[0] != 0 || magic[1] != 0) {
    throw FormatError(what + ": bad magic number at byte offset 0 (expected two zero bytes)");
  }
  if (magic[2] != static_cast<unsigned char>(IdxType::kUByte) &&
      magic[2] != static_cast<unsigned char>(IdxType::kFloat64)) {
    throw FormatError(what + ": unsupported element type 0x" + [&] {
      std::ostringstream os;
      os << std::hex << static_cast<int>(magic[2]);
      return os.str();
    }() + " at byte offset 2");
  }
  if (magic[3] == 0) throw FormatError(what + ": zero dimensions at byte offset 3");
  IdxHeader h{static_cast<IdxType>(magic[2]), std::vector<std::uint32_t>(magic[3])};
  for (auto& d : h.dims) d = r.be<std::uint32_t>();
  return h;
}

namespace {

std::uint64_t header_bytes(const IdxHeader& h) { return 4 + 4 * h.dims.size(); }

std::vector<double> read_idx_values(std::istream& in, const IdxHeader& h, std::uint64_t count,
                                    const std::string& what) {
  std::vector<double> out(count);
  const std::uint64_t base = header_bytes(h);
  const std::size_t elem = h.type == IdxType::kUByte ? 1 : 8;
  std::vector<unsigned char> buf(count * elem);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  const auto got = static_cast<std::uint64_t>(in.gcount());
  if (got != buf.size()) {
    throw FormatError(what + ": truncated data at byte offset " + std::to_string(base + got) + ", expected " +
                      std::to_string(base + buf.size()) + " bytes");
  }
  if (h.type == IdxType::kUByte) {
    for (std::uint64_t i = 0; i < count; ++i) out[i] = static_cast<double>(buf[i]) / 255.0;
  } else {
    for (std::uint64_t i = 0; i < count; ++i) {
      std::uint64_t u = 0;
      for (std::size_t b = 0; b < 8; ++b) u = (u << 8) | buf[i * 8 + b];
      out[i] = std::bit_cast<double>(u);
    }
  }
  return out;
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path, int num_classes) {
  std::ifstream img(images_path, std::ios::binary);
  if (!img) throw IoError("cannot open IDX images '" + images_path.string() + "'");
  std::ifstream lab(labels_path, std::ios::binary);
  if (!lab) throw IoError("cannot open IDX labels '" + labels_path.string() + "'");
  const std::string img_what = images_path.string(), lab_what = labels_path.string();

  const IdxHeader ih = read_idx_header(img, img_what);
  const IdxHeader lh = read_idx_header(lab, lab_what);
  if (ih.dims.size() < 2 || ih.dims.size() > 4) {
    throw FormatError(img_what + ": images need 2 to 4 dimensions, got " + std::to_string(ih.dims.size()));
  }
  if (lh.dims.size() != 1 || lh.type != IdxType::kUByte) {
    throw FormatError(lab_what + ": labels must be a 1-D unsigned byte array");
  }
  if (ih.dims[0] != lh.dims[0]) {
    throw FormatError("image count " + std::to_string(ih.dims[0]) + " (" + img_what + ", byte offset 4) != label count " +
                      std::to_string(lh.dims[0]) + " (" + lab_what + ", byte offset 4)");
  }
  Dataset ds;
  switch (ih.dims.size()) {
    case 2: ds.sample_shape = {ih.dims[1]}; break;
    case 3: ds.sample_shape = {1, ih.dims[1], ih.dims[2]}; break;
    default: ds.sample_shape = {ih.dims[1], ih.dims[2], ih.dims[3]}; break;
  }
  const std::uint64_t n = ih.dims[0];
  ds.inputs = read_idx_values(img, ih, n * ds.sample_dim(), img_what);
  std::vector<unsigned char> raw(n);
  lab.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
  if (static_cast<std::uint64_t>(lab.gcount()) != n) {
    throw FormatError(lab_what + ": truncated labels at byte offset " +
                      std::to_string(header_bytes(lh) + static_cast<std::uint64_t>(lab.gcount())));
  }
  ds.labels.assign(raw.begin(), raw.end());
  ds.num_classes = infer_classes(ds.labels, num_classes);
  for (std::size_t i = 0; i < ds.labels.size(); ++i) {
    if (ds.labels[i] >= ds.num_classes) {
      throw FormatError(lab_what + ": label " + std::to_string(ds.labels[i]) + " at byte offset " +
                        std::to_string(header_bytes(lh) + i) + " exceeds class count " +
                        std::to_string(ds.num_classes));
    }
  }
  ds.validate();
  return ds;
}

void save_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
              IdxType type) {
  std::ofstream img(images_path, std::ios::binary | std::ios::trunc);
  if (!img) throw IoError("cannot open '" + images_path.string() + "' for writing");
  std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(ds.size())};
  if (ds.sample_shape.size() == 3 && ds.sample_shape[0] == 1) {
    dims.push_back(static_cast<std::uint32_t>(ds.sample_shape[1]));
    dims.push_back(static_cast<std::uint32_t>(ds.sample_shape[2]));
  } else {
    for (std::size_t d : ds.sample_shape) dims.push_back(static_cast<std::uint32_t>(d));
  }
  const unsigned char magic[4] = {0, 0, static_cast<unsigned char>(type), static_cast<unsigned char>(dims.size())};
  img.write(reinterpret_cast<const char*>(magic), 4);
  for (auto d : dims) bin::put_be<std::uint32_t>(img, d);
  if (type == IdxType::kUByte) {
    std::vector<unsigned char> bytes(ds.inputs.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
      bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(ds.inputs[i], 0.0, 1.0) * 255.0));
    img.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  } else {
    for (double v : ds.inputs) bin::put_be<std::uint64_t>(img, std::bit_cast<std::uint64_t>(v));
  }
  if (!img) throw IoError("write failed for '" + images_path.string() + "'");

  std::ofstream lab(labels_path, std::ios::binary | std::ios::trunc);
  if (!lab) throw IoError("cannot open '" + labels_path.string() + "' for writing");
  const unsigned char lmagic[4] = {0, 0, static_cast<unsigned char>(IdxType::kUByte), 1};
  lab.write(reinterpret_cast<const char*>(lmagic), 4);
  bin::put_be<std::uint32_t>(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) {
    if (y < 0 || y > 255) throw DataError("save_idx: label " + std::to_string(y) + " does not fit a byte");
    lab.put(static_cast<char>(y));
  }
  if (!lab) throw IoError("write failed for '" + labels_path.string() + "'");
}

// ---- text ----

Dataset load_text_dataset(const std::filesystem::path& path, const InputShape& sample_shape, int num_classes) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  Dataset ds;
  ds.sample_shape = sample_shape;
  std::size_t dim = sample_shape.empty() ? 0 : shape_numel(sample_shape);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    for (char& ch : line)
      if (ch == ',') ch = ' ';
    std::istringstream row(line);
    std::string tok;
    std::vector<std::string> toks;
    while (row >> tok) toks.push_back(tok);
    if (toks.empty() || toks[0][0] == '#') continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    int label = 0;
    auto [p, ec] = std::from_chars(toks[0].data(), toks[0].data() + toks[0].size(), label);
    if (ec != std::errc() || p != toks[0].data() + toks[0].size() || label < 0) {
      throw FormatError(where + ": invalid label '" + toks[0] + "'");
    }
    if (dim == 0) {
      dim = toks.size() - 1;
      ds.sample_shape = {dim};
    }
    if (toks.size() - 1 != dim) {
      throw FormatError(where + ": expected " + std::to_string(dim) + " values, got " + std::to_string(toks.size() - 1));
    }
    for (std::size_t k = 1; k < toks.size(); ++k) {
      double v = 0.0;
      auto [vp, vec] = std::from_chars(toks[k].data(), toks[k].data() + toks[k].size(), v);
      if (vec != std::errc() || vp != toks[k].data() + toks[k].size()) {
        throw FormatError(where + ": invalid value '" + toks[k] + "'");
      }
      ds.inputs.push_back(v);
    }
    ds.labels.push_back(label);
  }
  ds.num_classes = infer_classes(ds.labels, num_classes);
  ds.validate();
  return ds;
}

void save_text_dataset(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << std::setprecision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    for (double v : ds.sample(i)) out << ' ' << format_number(v);
    out << '\n';
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_metadata_sidecar(const Dataset& ds, const NormStats* stats, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  write_metadata_sidecar(ds, stats, out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

void write_metadata_sidecar(const Dataset& ds, const NormStats* stats, std::ostream& out) {
  out << "samples = " << ds.size() << '\n';
  out << "classes = " << ds.num_classes << '\n';
  out << "sample_shape = " << shape_str(ds.sample_shape) << '\n';
  const auto counts = ds.class_counts();
  out << "class_counts = ";
  for (std::size_t c = 0; c < counts.size(); ++c) out << (c ? "," : "") << counts[c];
  out << '\n';
  if (stats) {
    out << "normalization.mean = ";
    for (std::size_t c = 0; c < stats->mean.size(); ++c) out << (c ? "," : "") << format_number(stats->mean[c]);
    out << "\nnormalization.std = ";
    for (std::size_t c = 0; c < stats->std.size(); ++c) out << (c ? "," : "") << format_number(stats->std[c]);
    out << '\n';
  }
  for (const auto& [k, v] : ds.metadata) out << k << " = " << v << '\n';
}

std::map<std::string, std::string> read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(path.string() + ":" + std::to_string(lineno) + ": empty key");
    out[key] = trim(t.substr(eq + 1));
  }
  return out;
}

}  // namespace nclab
