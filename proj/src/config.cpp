#include "nclab/config.hpp"

#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "nclab/errors.hpp"
#include "nclab/text_format.hpp"

namespace nclab {

namespace {

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& expected) {
  throw ConfigError("key '" + key + "': expected " + expected + ", got '" + value + "'");
}

double to_real(const std::string& key, const std::string& value) {
  const auto v = parse_number(value);
  if (!v || !std::isfinite(*v)) bad_value(key, value, "a number");
  return *v;
}

std::int64_t to_int(const std::string& key, const std::string& value) {
  const auto v = parse_integer(value);
  if (!v) bad_value(key, value, "an integer");
  return *v;
}

int to_int32(const std::string& key, const std::string& value) {
  const auto v = to_int(key, value);
  if (v < INT32_MIN || v > INT32_MAX) bad_value(key, value, "an integer in 32-bit range");
  return static_cast<int>(v);
}

std::uint64_t to_seed(const std::string& key, const std::string& value) {
  const std::string_view t = trim_view(value);
  std::uint64_t v = 0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || res.ec != std::errc() || res.ptr != t.data() + t.size()) bad_value(key, value, "an unsigned integer");
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  const std::string t(trim_view(value));
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  bad_value(key, value, "true or false");
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  const std::string_view t = trim_view(value);
  if (t.empty() || t == "none") return out;
  std::size_t start = 0;
  while (start <= t.size()) {
    const auto comma = t.find(',', start);
    const auto end = comma == std::string_view::npos ? t.size() : comma;
    out.emplace_back(trim_view(t.substr(start, end - start)));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

std::vector<int> to_int_list(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& item : split_list(value)) out.push_back(to_int32(key, item));
  return out;
}

std::vector<double> to_real_list(const std::string& key, const std::string& value) {
  std::vector<double> out;
  for (const auto& item : split_list(value)) out.push_back(to_real(key, item));
  return out;
}

std::vector<LrDrop> to_drops(const std::string& key, const std::string& value) {
  std::vector<LrDrop> out;
  for (const auto& item : split_list(value)) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) bad_value(key, value, "epoch:factor pairs");
    out.push_back({to_int32(key, item.substr(0, colon)), to_real(key, item.substr(colon + 1))});
  }
  return out;
}

template <typename Parse>
auto parse_enum(const std::string& key, const std::string& value, Parse parse) {
  try {
    return parse(std::string(trim_view(value)));
  } catch (const Error& e) {
    throw ConfigError("key '" + key + "': " + e.what());
  }
}

bool apply_attack(AttackConfig& a, const std::string& field, const std::string& key, const std::string& value) {
  if (field == "norm") a.norm = parse_enum(key, value, parse_norm_kind);
  else if (field == "epsilon") a.epsilon = to_real(key, value);
  else if (field == "alpha") a.alpha = to_real(key, value);
  else if (field == "steps") a.steps = to_int32(key, value);
  else if (field == "loss_mode") a.loss_mode = parse_enum(key, value, parse_loss_mode);
  else if (field == "random_start") a.random_start = to_bool(key, value);
  else if (field == "clamp_input_range") a.clamp_input_range = to_bool(key, value);
  else if (field == "seed") a.seed = to_seed(key, value);
  else return false;
  return true;
}

std::string join_ints(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out.empty() ? "none" : out;
}

std::string join_reals(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + format_number(v[i]);
  return out.empty() ? "none" : out;
}

void write_attack(std::ostringstream& os, const std::string& prefix, const AttackConfig& a) {
  os << prefix << "norm = " << norm_kind_name(a.norm) << '\n'
     << prefix << "epsilon = " << format_number(a.epsilon) << '\n'
     << prefix << "alpha = " << format_number(a.alpha) << '\n'
     << prefix << "steps = " << a.steps << '\n'
     << prefix << "loss_mode = " << loss_mode_name(a.loss_mode) << '\n'
     << prefix << "random_start = " << (a.random_start ? "true" : "false") << '\n'
     << prefix << "clamp_input_range = " << (a.clamp_input_range ? "true" : "false") << '\n'
     << prefix << "seed = " << a.seed << '\n';
}

}  // namespace

TrainConfig ExperimentConfig::resolved_train() const {
  TrainConfig t = train;
  t.seed = train_seed();
  if (!train_attack_mode_set) t.attack.loss_mode = t.regime == Regime::kTrades ? LossMode::kKl : LossMode::kCeUntargeted;
  return t;
}

std::vector<double> ExperimentConfig::sweep() const {
  return eval_epsilons.empty() ? std::vector<double>{train.eval_attack.epsilon} : eval_epsilons;
}

AttackConfig ExperimentConfig::sweep_attack(double epsilon, LossMode mode) const {
  AttackConfig a = train.eval_attack;
  a.loss_mode = mode;
  if (!eval_epsilons.empty()) {
    a.epsilon = epsilon;
    a.alpha = eval_alpha_ratio * epsilon;
  }
  return a;
}

void ExperimentConfig::validate() const {
  const auto& d = dataset;
  if (d.kind == "gaussian" || d.kind == "image") {
    if (d.num_classes < 2) throw ConfigError("dataset.classes must be >= 2");
    if (d.n_train < 1) throw ConfigError("dataset.n_train must be >= 1");
    if (d.n_test < 0) throw ConfigError("dataset.n_test must be >= 0");
  } else if (d.kind == "idx" || d.kind == "text") {
    if (d.train_images.empty()) throw ConfigError("dataset.train_images is required for " + d.kind + " data");
    if (d.kind == "idx" && d.train_labels.empty()) throw ConfigError("dataset.train_labels is required for idx data");
    if (d.kind == "text" && d.shape.empty()) throw ConfigError("dataset.shape is required for text data");
  } else {
    throw ConfigError("dataset.kind must be gaussian, image, idx or text, got '" + d.kind + "'");
  }
  if (model.kind != "mlp" && model.kind != "convnet") {
    throw ConfigError("model.kind must be mlp or convnet, got '" + model.kind + "'");
  }
  for (int w : model.hidden)
    if (w < 1) throw ConfigError("model.hidden widths must be >= 1");
  if (model.kind == "convnet" && model.channels.empty()) throw ConfigError("model.channels must not be empty");
  for (int c : model.channels)
    if (c < 1) throw ConfigError("model.channels must be >= 1");
  resolved_train().validate();
  for (double e : eval_epsilons)
    if (!(e >= 0.0)) throw ConfigError("eval.epsilons must be >= 0");
  if (!(eval_alpha_ratio > 0.0)) throw ConfigError("eval.alpha_ratio must be > 0");
  if (output_dir.empty()) throw ConfigError("output.dir must not be empty");
}

void apply_setting(ExperimentConfig& cfg, const std::string& raw_key, const std::string& value) {
  const std::string key(trim_view(raw_key));
  auto& d = cfg.dataset;
  auto& m = cfg.model;
  auto& t = cfg.train;

  static const std::string kTrainAttack = "train.attack.";
  static const std::string kEvalAttack = "eval.attack.";
  if (key.rfind(kTrainAttack, 0) == 0) {
    const std::string field = key.substr(kTrainAttack.size());
    if (!apply_attack(t.attack, field, key, value)) throw ConfigError("unknown key '" + key + "'");
    if (field == "loss_mode") cfg.train_attack_mode_set = true;
    return;
  }
  if (key.rfind(kEvalAttack, 0) == 0) {
    if (!apply_attack(t.eval_attack, key.substr(kEvalAttack.size()), key, value)) {
      throw ConfigError("unknown key '" + key + "'");
    }
    return;
  }

  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters = {
      {"seed", [&](const std::string& v) { cfg.seed = to_seed(key, v); }},
      {"output.dir", [&](const std::string& v) { cfg.output_dir = std::string(trim_view(v)); }},
      {"dataset.kind", [&](const std::string& v) { d.kind = std::string(trim_view(v)); }},
      {"dataset.classes", [&](const std::string& v) { d.num_classes = to_int32(key, v); }},
      {"dataset.n_train", [&](const std::string& v) { d.n_train = to_int32(key, v); }},
      {"dataset.n_test", [&](const std::string& v) { d.n_test = to_int32(key, v); }},
      {"dataset.dim", [&](const std::string& v) { d.dim = to_int32(key, v); }},
      {"dataset.radius", [&](const std::string& v) { d.radius = to_real(key, v); }},
      {"dataset.noise", [&](const std::string& v) { d.noise = to_real(key, v); }},
      {"dataset.channels", [&](const std::string& v) { d.channels = to_int32(key, v); }},
      {"dataset.height", [&](const std::string& v) { d.height = to_int32(key, v); }},
      {"dataset.width", [&](const std::string& v) { d.width = to_int32(key, v); }},
      {"dataset.contrast", [&](const std::string& v) { d.contrast = to_real(key, v); }},
      {"dataset.shift", [&](const std::string& v) { d.shift = to_int32(key, v); }},
      {"dataset.train_images", [&](const std::string& v) { d.train_images = std::string(trim_view(v)); }},
      {"dataset.train_labels", [&](const std::string& v) { d.train_labels = std::string(trim_view(v)); }},
      {"dataset.test_images", [&](const std::string& v) { d.test_images = std::string(trim_view(v)); }},
      {"dataset.test_labels", [&](const std::string& v) { d.test_labels = std::string(trim_view(v)); }},
      {"dataset.shape",
       [&](const std::string& v) {
         d.shape.clear();
         for (int s : to_int_list(key, v)) {
           if (s < 1) bad_value(key, v, "positive sizes");
           d.shape.push_back(static_cast<std::size_t>(s));
         }
       }},
      {"dataset.seed", [&](const std::string& v) { d.seed = to_seed(key, v); }},
      {"model.kind", [&](const std::string& v) { m.kind = std::string(trim_view(v)); }},
      {"model.hidden", [&](const std::string& v) { m.hidden = to_int_list(key, v); }},
      {"model.channels", [&](const std::string& v) { m.channels = to_int_list(key, v); }},
      {"model.seed", [&](const std::string& v) { m.seed = to_seed(key, v); }},
      {"train.regime", [&](const std::string& v) { t.regime = parse_enum(key, v, parse_regime); }},
      {"train.epochs", [&](const std::string& v) { t.epochs = to_int32(key, v); }},
      {"train.batch_size", [&](const std::string& v) { t.batch_size = to_int32(key, v); }},
      {"train.lr", [&](const std::string& v) { t.lr_initial = to_real(key, v); }},
      {"train.lr_drops", [&](const std::string& v) { t.lr_drops = to_drops(key, v); }},
      {"train.momentum", [&](const std::string& v) { t.momentum = to_real(key, v); }},
      {"train.beta", [&](const std::string& v) { t.beta = to_real(key, v); }},
      {"train.seed",
       [&](const std::string& v) {
         t.seed = to_seed(key, v);
         cfg.train_seed_set = true;
       }},
      {"eval.every", [&](const std::string& v) { t.metric_every = to_int32(key, v); }},
      {"eval.sigma", [&](const std::string& v) { t.gaussian_sigma = to_real(key, v); }},
      {"eval.epsilons", [&](const std::string& v) { cfg.eval_epsilons = to_real_list(key, v); }},
      {"eval.alpha_ratio", [&](const std::string& v) { cfg.eval_alpha_ratio = to_real(key, v); }},
      {"eval.targeted", [&](const std::string& v) { cfg.eval_targeted = to_bool(key, v); }},
  };
  const auto it = setters.find(key);
  if (it == setters.end()) throw ConfigError("unknown key '" + key + "'");
  it->second(value);
}

ExperimentConfig parse_config(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view t = trim_view(line);
    if (t.empty() || t.front() == '#') continue;
    const std::string where = origin + ":" + std::to_string(lineno) + ": ";
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key(trim_view(t.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + "empty key");
    try {
      apply_setting(cfg, key, std::string(t.substr(eq + 1)));
    } catch (const ConfigError&) {
      rethrow_with_context(where);
    }
  }
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    rethrow_with_context(origin + ": ");
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

std::string canonical_text(const ExperimentConfig& cfg) {
  const auto& d = cfg.dataset;
  const auto& m = cfg.model;
  const TrainConfig t = cfg.resolved_train();
  std::ostringstream os;
  os << "seed = " << cfg.seed << '\n';
  if (!cfg.output_dir.empty()) os << "output.dir = " << cfg.output_dir << '\n';
  os << "dataset.kind = " << d.kind << '\n'
     << "dataset.classes = " << d.num_classes << '\n'
     << "dataset.n_train = " << d.n_train << '\n'
     << "dataset.n_test = " << d.n_test << '\n'
     << "dataset.dim = " << d.dim << '\n'
     << "dataset.radius = " << format_number(d.radius) << '\n'
     << "dataset.noise = " << format_number(d.noise) << '\n'
     << "dataset.channels = " << d.channels << '\n'
     << "dataset.height = " << d.height << '\n'
     << "dataset.width = " << d.width << '\n'
     << "dataset.contrast = " << format_number(d.contrast) << '\n'
     << "dataset.shift = " << d.shift << '\n'
     << "dataset.train_images = " << d.train_images << '\n'
     << "dataset.train_labels = " << d.train_labels << '\n'
     << "dataset.test_images = " << d.test_images << '\n'
     << "dataset.test_labels = " << d.test_labels << '\n';
  std::vector<int> shape(d.shape.begin(), d.shape.end());
  os << "dataset.shape = " << join_ints(shape) << '\n' << "dataset.seed = " << cfg.dataset_seed() << '\n';
  os << "model.kind = " << m.kind << '\n'
     << "model.hidden = " << join_ints(m.hidden) << '\n'
     << "model.channels = " << join_ints(m.channels) << '\n'
     << "model.seed = " << cfg.model_seed() << '\n';
  os << "train.regime = " << regime_name(t.regime) << '\n'
     << "train.epochs = " << t.epochs << '\n'
     << "train.batch_size = " << t.batch_size << '\n'
     << "train.lr = " << format_number(t.lr_initial) << '\n';
  os << "train.lr_drops = ";
  if (t.lr_drops.empty()) os << "none";
  for (std::size_t i = 0; i < t.lr_drops.size(); ++i) {
    os << (i ? "," : "") << t.lr_drops[i].epoch << ':' << format_number(t.lr_drops[i].factor);
  }
  os << '\n'
     << "train.momentum = " << format_number(t.momentum) << '\n'
     << "train.beta = " << format_number(t.beta) << '\n'
     << "train.seed = " << t.seed << '\n';
  write_attack(os, "train.attack.", t.attack);
  write_attack(os, "eval.attack.", t.eval_attack);
  os << "eval.every = " << t.metric_every << '\n'
     << "eval.sigma = " << format_number(t.gaussian_sigma) << '\n'
     << "eval.epsilons = " << join_reals(cfg.eval_epsilons) << '\n'
     << "eval.alpha_ratio = " << format_number(cfg.eval_alpha_ratio) << '\n'
     << "eval.targeted = " << (cfg.eval_targeted ? "true" : "false") << '\n';
  return os.str();
}

std::uint64_t config_hash(const ExperimentConfig& cfg) {
  ExperimentConfig c = cfg;
  c.output_dir.clear();
  return fnv1a64(canonical_text(c));
}

}  // namespace nclab
