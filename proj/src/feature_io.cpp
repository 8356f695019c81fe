#include "nclab/feature_io.hpp"

#include <algorithm>
#include <charconv>
#include <cstring>
#include <fstream>
#include <sstream>

#include "nclab/binary_io.hpp"
#include "nclab/errors.hpp"
#include "nclab/text_format.hpp"

namespace nclab {

namespace {

constexpr char kMagic[8] = {'N', 'C', 'L', 'A', 'B', 'F', 'S', '1'};

FeatureSet read_binary(std::istream& in, const std::string& what, int num_classes) {
  bin::Reader r(in, what);
  char magic[8];
  r.read(magic, sizeof magic);
  const auto classes = r.le<std::uint32_t>();
  const auto dim = r.le<std::uint64_t>();
  if (classes < 1 || classes > (1u << 20)) r.fail("invalid class count");
  if (dim > (std::uint64_t{1} << 24)) r.fail("implausible dimension");
  std::vector<std::uint64_t> counts(classes);
  std::uint64_t rows = 0;
  for (auto& n : counts) {
    n = r.le<std::uint64_t>();
    rows += n;
    if (rows > (std::uint64_t{1} << 32)) r.fail("implausible size");
  }
  FeatureSet fs;
  fs.num_classes = num_classes > 0 ? num_classes : static_cast<int>(classes);
  fs.labels.reserve(rows);
  for (std::uint32_t c = 0; c < classes; ++c) fs.labels.insert(fs.labels.end(), counts[c], static_cast<int>(c));
  fs.features.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < fs.features.rows(); ++i)
    for (Eigen::Index j = 0; j < fs.features.cols(); ++j) fs.features(i, j) = r.f64_le();
  if (in.peek() != std::char_traits<char>::eof()) r.fail("trailing bytes");
  return fs;
}

FeatureSet read_text(std::istream& in, const std::string& what, int num_classes) {
  std::vector<int> labels;
  std::vector<double> values;
  std::size_t dim = 0;
  int stored_classes = 0;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = what + ":" + std::to_string(lineno);
    const std::string_view t = trim_view(line);
    if (t.empty()) continue;
    if (t.front() == '#') {
      const auto eq = t.find('=');
      if (eq != std::string_view::npos && trim_view(t.substr(1, eq - 1)) == "classes") {
        const auto c = parse_integer(t.substr(eq + 1));
        if (!c || *c < 1) throw FormatError(where + ": invalid class count");
        stored_classes = static_cast<int>(*c);
      }
      continue;
    }
    std::string row(t);
    std::replace(row.begin(), row.end(), ',', ' ');
    std::istringstream tokens(row);
    std::string tok;
    std::vector<std::string> toks;
    while (tokens >> tok) toks.push_back(tok);
    const auto label = parse_integer(toks[0]);
    if (!label || *label < 0) throw FormatError(where + ": invalid label '" + toks[0] + "'");
    if (labels.empty()) dim = toks.size() - 1;
    if (toks.size() - 1 != dim || dim == 0) {
      throw FormatError(where + ": expected " + std::to_string(dim) + " values, got " + std::to_string(toks.size() - 1));
    }
    for (std::size_t k = 1; k < toks.size(); ++k) {
      double v = 0.0;
      const auto res = std::from_chars(toks[k].data(), toks[k].data() + toks[k].size(), v);
      if (res.ec != std::errc() || res.ptr != toks[k].data() + toks[k].size()) {
        throw FormatError(where + ": invalid value '" + toks[k] + "'");
      }
      values.push_back(v);
    }
    labels.push_back(static_cast<int>(*label));
  }
  if (labels.empty()) throw FormatError(what + ": no feature rows");
  FeatureSet fs;
  fs.labels = std::move(labels);
  if (num_classes > 0) fs.num_classes = num_classes;
  else if (stored_classes > 0) fs.num_classes = stored_classes;
  else fs.num_classes = *std::max_element(fs.labels.begin(), fs.labels.end()) + 1;
  fs.features.resize(static_cast<Eigen::Index>(fs.labels.size()), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < fs.features.rows(); ++i)
    for (Eigen::Index j = 0; j < fs.features.cols(); ++j)
      fs.features(i, j) = values[static_cast<std::size_t>(i) * dim + static_cast<std::size_t>(j)];
  return fs;
}

}  // namespace

void save_feature_set(const FeatureSet& fs, const std::filesystem::path& path, FeatureFormat format) {
  fs.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  if (format == FeatureFormat::kBinary) {
    out.write(kMagic, sizeof kMagic);
    bin::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(fs.num_classes));
    bin::put_le<std::uint64_t>(out, fs.dim());
    std::vector<std::vector<Eigen::Index>> members(static_cast<std::size_t>(fs.num_classes));
    for (std::size_t i = 0; i < fs.labels.size(); ++i)
      members[static_cast<std::size_t>(fs.labels[i])].push_back(static_cast<Eigen::Index>(i));
    for (const auto& m : members) bin::put_le<std::uint64_t>(out, m.size());
    for (const auto& m : members)
      for (Eigen::Index i : m)
        for (Eigen::Index j = 0; j < fs.features.cols(); ++j) bin::put_f64_le(out, fs.features(i, j));
  } else {
    out << "# classes = " << fs.num_classes << '\n';
    for (Eigen::Index i = 0; i < fs.features.rows(); ++i) {
      out << fs.labels[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < fs.features.cols(); ++j) out << ',' << format_number(fs.features(i, j));
      out << '\n';
    }
  }
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

FeatureSet load_feature_set(const std::filesystem::path& path, int num_classes) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char head[sizeof kMagic] = {};
  in.read(head, sizeof head);
  const bool binary = in.gcount() == static_cast<std::streamsize>(sizeof head) &&
                      std::memcmp(head, kMagic, sizeof kMagic) == 0;
  in.clear();
  in.seekg(0);
  FeatureSet fs = binary ? read_binary(in, path.string(), num_classes) : read_text(in, path.string(), num_classes);
  try {
    fs.validate();
  } catch (const Error&) {
    rethrow_with_context(path.string() + ": ");
  }
  return fs;
}

}  // namespace nclab
