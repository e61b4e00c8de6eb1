#include "fsvae/run_config.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace fsvae::config {

namespace {

enum class Type { size, u64, real, boolean, choice, reals, sizes, strings };

struct KeySpec {
  const char* key;
  Type type;
  const char* fallback;
  std::vector<std::string> choices = {};
};

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      {"seed", Type::u64, "0"},

      {"synth.classes", Type::size, "12"},
      {"synth.joints", Type::size, "5"},
      {"synth.coords", Type::size, "3"},
      {"synth.frames", Type::size, "64"},
      {"synth.train_per_class", Type::size, "40"},
      {"synth.test_per_class", Type::size, "20"},
      {"synth.unseen_classes", Type::size, "2"},
      {"synth.low_band_first", Type::size, "1"},
      {"synth.low_band_last", Type::size, "4"},
      {"synth.prototype_rank", Type::size, "4"},
      {"synth.orthogonal_prototypes", Type::boolean, "false"},
      {"synth.amplitude_jitter", Type::real, "0.1"},
      {"synth.phase_jitter", Type::real, "0.2"},
      {"synth.jitter", Type::real, "0"},
      {"synth.jitter_band_first", Type::size, "35"},
      {"synth.jitter_leak", Type::real, "0.02"},
      {"synth.label_noise", Type::real, "0"},
      {"synth.embed_dim", Type::size, "16"},
      {"synth.semantic_noise", Type::real, "0.05"},

      {"freq.enabled", Type::boolean, "true"},
      {"freq.mode", Type::choice, "piecewise", {"piecewise", "learnable_only"}},
      {"freq.low_threshold", Type::size, "35"},
      {"freq.adjust", Type::real, "30"},
      {"freq.cuts", Type::sizes, ""},
      {"freq.initial_weight", Type::real, "0.5"},
      {"freq.floor", Type::real, "0"},
      {"freq.learn", Type::boolean, "true"},

      {"encoder.dim", Type::size, "64"},
      {"encoder.seed", Type::u64, "0"},

      {"loss.kind", Type::choice, "calibrated", {"calibrated", "t1", "t2", "t3", "t4"}},
      {"loss.lambda", Type::real, "100"},
      {"loss.alpha", Type::real, "0.1"},
      {"loss.beta", Type::real, "1"},
      {"loss.margin", Type::real, "1"},

      {"vae.latent_dim", Type::size, "100"},
      {"vae.hidden_dim", Type::size, "128"},

      {"stage2.epochs", Type::size, "1900"},
      {"stage2.batch_size", Type::size, "64"},
      {"stage2.learning_rate", Type::real, "1e-4"},

      {"stage3.samples", Type::size, "500"},
      {"stage3.epochs", Type::size, "300"},
      {"stage3.learning_rate", Type::real, "1e-3"},
      {"stage3.batch_size", Type::size, "64"},

      {"train.label_noise", Type::real, "0"},

      {"seen.epochs", Type::size, "300"},
      {"seen.learning_rate", Type::real, "1e-3"},
      {"seen.batch_size", Type::size, "64"},

      {"gate.C", Type::real, "1"},
      {"gate.holdout", Type::real, "0.2"},

      {"bench.noise_rates", Type::reals, "0,0.2"},
      {"bench.seeds", Type::size, "5"},
      {"bench.losses", Type::strings, "calibrated,t1,t2,t3,t4"},
  };
  return keys;
}

const KeySpec* find_spec(const std::string& key) {
  for (const auto& s : schema()) {
    if (key == s.key) return &s;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  if (trim(text).empty()) return out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& key, const std::string& text) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(text, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + text + "' is not a number");
  }
  if (pos != text.size()) throw ConfigError(key + ": '" + text + "' is not a number");
  if (!std::isfinite(v)) throw ConfigError(key + ": value must be finite");
  return v;
}

std::uint64_t parse_unsigned(const std::string& key, const std::string& text) {
  if (text.empty() || text.find_first_not_of("0123456789") != std::string::npos) {
    throw ConfigError(key + ": '" + text + "' is not a non-negative integer");
  }
  try {
    return std::stoull(text);
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + text + "' is out of range");
  }
}

std::string canonicalise(const KeySpec& spec, const std::string& value) {
  const std::string v = trim(value);
  switch (spec.type) {
    case Type::size:
    case Type::u64:
      return std::to_string(parse_unsigned(spec.key, v));
    case Type::real:
      return format_double(parse_double(spec.key, v));
    case Type::boolean:
      if (v == "true" || v == "1" || v == "yes") return "true";
      if (v == "false" || v == "0" || v == "no") return "false";
      throw ConfigError(std::string(spec.key) + ": '" + v + "' is not a boolean");
    case Type::choice:
      if (std::find(spec.choices.begin(), spec.choices.end(), v) == spec.choices.end()) {
        std::string msg = std::string(spec.key) + ": '" + v + "' is not one of";
        for (const auto& c : spec.choices) msg += " " + c;
        throw ConfigError(msg);
      }
      return v;
    case Type::reals: {
      std::string out;
      for (const auto& item : split_list(v)) out += (out.empty() ? "" : ",") + format_double(parse_double(spec.key, item));
      return out;
    }
    case Type::sizes: {
      std::string out;
      for (const auto& item : split_list(v)) out += (out.empty() ? "" : ",") + std::to_string(parse_unsigned(spec.key, item));
      return out;
    }
    case Type::strings: {
      std::string out;
      for (const auto& item : split_list(v)) {
        if (item.empty()) throw ConfigError(std::string(spec.key) + ": empty list item");
        out += (out.empty() ? "" : ",") + item;
      }
      return out;
    }
  }
  return v;
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

RunConfig::RunConfig() {
  for (const auto& s : schema()) values_[s.key] = canonicalise(s, s.fallback);
}

RunConfig RunConfig::parse(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::map<std::string, std::size_t> seen_at;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = source + ":" + std::to_string(line_no);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (auto it = seen_at.find(key); it != seen_at.end()) {
      throw ConfigError(where + ": duplicate key '" + key + "' (first set on line " + std::to_string(it->second) + ")");
    }
    seen_at[key] = line_no;
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_spec(key);
  if (spec == nullptr) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = canonicalise(*spec, value);
}

const std::string& RunConfig::raw(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

bool RunConfig::has_key(const std::string& key) const { return values_.count(key) != 0; }

std::int64_t RunConfig::get_int(const std::string& key) const { return std::stoll(raw(key)); }
std::size_t RunConfig::get_size(const std::string& key) const { return static_cast<std::size_t>(std::stoull(raw(key))); }
std::uint64_t RunConfig::get_u64(const std::string& key) const { return std::stoull(raw(key)); }
double RunConfig::get_double(const std::string& key) const { return std::stod(raw(key)); }
bool RunConfig::get_bool(const std::string& key) const { return raw(key) == "true"; }

std::vector<double> RunConfig::get_doubles(const std::string& key) const {
  std::vector<double> out;
  for (const auto& s : split_list(raw(key))) out.push_back(std::stod(s));
  return out;
}

std::vector<std::size_t> RunConfig::get_sizes(const std::string& key) const {
  std::vector<std::size_t> out;
  for (const auto& s : split_list(raw(key))) out.push_back(static_cast<std::size_t>(std::stoull(s)));
  return out;
}

std::vector<std::string> RunConfig::get_strings(const std::string& key) const { return split_list(raw(key)); }

std::string RunConfig::canonical() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
  return out;
}

std::string RunConfig::hash() const { return hex64(fnv1a64(canonical())); }

std::uint64_t RunConfig::seed() const { return get_u64("seed"); }

synth::SynthConfig RunConfig::synth() const {
  synth::SynthConfig s;
  s.classes = get_size("synth.classes");
  s.joints = get_size("synth.joints");
  s.coords = get_size("synth.coords");
  s.frames = get_size("synth.frames");
  s.train_per_class = get_size("synth.train_per_class");
  s.test_per_class = get_size("synth.test_per_class");
  s.unseen_classes = get_size("synth.unseen_classes");
  s.low_band_first = get_size("synth.low_band_first");
  s.low_band_last = get_size("synth.low_band_last");
  s.prototype_rank = get_size("synth.prototype_rank");
  s.orthogonal_prototypes = get_bool("synth.orthogonal_prototypes");
  s.amplitude_jitter = get_double("synth.amplitude_jitter");
  s.phase_jitter = get_double("synth.phase_jitter");
  s.jitter = get_double("synth.jitter");
  s.jitter_band_first = get_size("synth.jitter_band_first");
  s.jitter_leak = get_double("synth.jitter_leak");
  s.label_noise = get_double("synth.label_noise");
  s.embed_dim = get_size("synth.embed_dim");
  s.semantic_noise = get_double("synth.semantic_noise");
  s.seed = seed();
  return s;
}

losses::LossConfig RunConfig::loss() const {
  losses::LossConfig l;
  l.temperature = get_double("loss.lambda");
  l.alpha = get_double("loss.alpha");
  l.beta = get_double("loss.beta");
  l.margin = get_double("loss.margin");
  return l;
}

losses::AlignmentLoss RunConfig::alignment() const { return losses::parse_alignment_loss(raw("loss.kind")); }

bool RunConfig::enhancement_enabled() const { return get_bool("freq.enabled"); }

freq::EnhancementConfig RunConfig::enhancement_layout(std::size_t length) const {
  const auto mode = freq::parse_enhance_mode(raw("freq.mode"));
  const auto cuts = get_sizes("freq.cuts");
  const std::size_t phi = get_size("freq.low_threshold");
  const double b = get_double("freq.adjust");
  const double w = get_double("freq.initial_weight");
  auto cfg = cuts.empty() ? freq::EnhancementConfig::per_coefficient(length, phi, b, w, mode)
                          : freq::EnhancementConfig::with_cuts(length, cuts, phi, b, w, mode);
  cfg.floor = get_double("freq.floor");
  return cfg;
}

pipeline::PipelineConfig RunConfig::pipeline() const {
  pipeline::PipelineConfig p;
  p.stage2.epochs = get_size("stage2.epochs");
  p.stage2.batch_size = get_size("stage2.batch_size");
  p.stage2.learning_rate = get_double("stage2.learning_rate");
  p.stage2.loss = loss();
  p.stage2.alignment = alignment();
  p.stage2.learn_enhancement = get_bool("freq.learn");
  p.latent_dim = get_size("vae.latent_dim");
  p.hidden_dim = get_size("vae.hidden_dim");
  p.unseen_samples = get_size("stage3.samples");
  p.unseen_classifier = {get_size("stage3.epochs"), get_double("stage3.learning_rate"), get_size("stage3.batch_size")};
  p.seen_classifier = {get_size("seen.epochs"), get_double("seen.learning_rate"), get_size("seen.batch_size")};
  p.gate_regularization = get_double("gate.C");
  p.gate_holdout = get_double("gate.holdout");
  return p;
}

void RunConfig::validate(std::size_t frames) const {
  try {
    synth().validate();
    loss().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  if (enhancement_enabled()) {
    const std::size_t length = frames != 0 ? frames : get_size("synth.frames");
    const double w = get_double("freq.initial_weight");
    require(w > 0.0 && w < 1.0, "freq.initial_weight must lie strictly inside (0, 1)");
    try {
      enhancement_layout(length).validate(length);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("freq: ") + e.what());
    }
  }
  require(get_size("encoder.dim") > 0, "encoder.dim must be positive");
  require(get_size("vae.latent_dim") > 0, "vae.latent_dim must be positive");
  require(get_size("vae.hidden_dim") > 0, "vae.hidden_dim must be positive");
  require(get_size("stage2.batch_size") >= 2, "stage2.batch_size must be at least 2");
  require(get_double("stage2.learning_rate") > 0.0, "stage2.learning_rate must be positive");
  require(get_size("stage3.samples") > 0, "stage3.samples must be positive");
  require(get_double("stage3.learning_rate") > 0.0, "stage3.learning_rate must be positive");
  require(get_size("stage3.batch_size") > 0, "stage3.batch_size must be positive");
  require(get_double("seen.learning_rate") > 0.0, "seen.learning_rate must be positive");
  require(get_size("seen.batch_size") > 0, "seen.batch_size must be positive");
  require(get_double("gate.C") > 0.0, "gate.C must be positive");
  const double h = get_double("gate.holdout");
  require(h > 0.0 && h < 1.0, "gate.holdout must lie strictly inside (0, 1)");
  const double noise = get_double("train.label_noise");
  require(noise >= 0.0 && noise <= 1.0, "train.label_noise must lie in [0, 1]");
  require(get_size("bench.seeds") >= 1, "bench.seeds must be at least 1");
  for (double r : get_doubles("bench.noise_rates")) require(r >= 0.0 && r <= 1.0, "bench.noise_rates must lie in [0, 1]");
  require(!get_doubles("bench.noise_rates").empty(), "bench.noise_rates must not be empty");
  require(!get_strings("bench.losses").empty(), "bench.losses must not be empty");
  for (const auto& l : get_strings("bench.losses")) {
    try {
      losses::parse_alignment_loss(l);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("bench.losses: ") + e.what());
    }
  }
}

}  // namespace fsvae::config
