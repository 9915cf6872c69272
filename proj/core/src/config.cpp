#include "semafo/config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

#include "semafo/checkpoint.hpp"

namespace semafo {

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::Vanilla: return "vanilla";
    case Variant::BetaGamma: return "beta-gamma";
    case Variant::FreePixels: return "free-pixels";
    case Variant::Semafo: return "semafo";
    case Variant::Hvae: return "hvae";
    case Variant::SemafoHvae: return "semafo-hvae";
  }
  throw std::logic_error("variant_name: bad enum");
}

Variant variant_from_name(const std::string& s) {
  if (s == "vanilla") return Variant::Vanilla;
  if (s == "beta-gamma") return Variant::BetaGamma;
  if (s == "free-pixels") return Variant::FreePixels;
  if (s == "semafo") return Variant::Semafo;
  if (s == "hvae") return Variant::Hvae;
  if (s == "semafo-hvae") return Variant::SemafoHvae;
  throw std::invalid_argument("unknown variant '" + s +
                              "' (expected vanilla|beta-gamma|free-pixels|semafo|hvae|semafo-hvae)");
}

bool variant_is_semafo(Variant v) { return v == Variant::Semafo || v == Variant::SemafoHvae; }
bool variant_is_hierarchical(Variant v) { return v == Variant::Hvae || v == Variant::SemafoHvae; }

Dtype ExperimentConfig::dtype() const {
  if (precision == "float32") return Dtype::Float32;
  if (precision == "float64") return Dtype::Float64;
  throw std::invalid_argument("precision must be float32 or float64, got '" + precision + "'");
}

void ExperimentConfig::resolve() {
  if (dataset != "mnist" && dataset != "synthetic-shapes")
    throw std::invalid_argument("dataset must be mnist or synthetic-shapes, got '" + dataset + "'");
  if (lr == 0) lr = dataset == "mnist" ? 1e-3 : 1e-4;
  if (gamma == 0) gamma = is_semafo() ? 10.0 : 1.0;
  (void)dtype();
  if (!(supervision_rate > 0 && supervision_rate <= 1))
    throw std::invalid_argument("supervision_rate must be in (0,1], got " + std::to_string(supervision_rate));
  if (batch_size < 1) throw std::invalid_argument("batch_size must be positive");
  if (beta <= 0 || gamma <= 0) throw std::invalid_argument("beta and gamma must be positive");
  if (free_pixels < 0) throw std::invalid_argument("free_pixels must be non-negative");
  if (d_z < 1 || d_z1 < 1) throw std::invalid_argument("latent dimensions must be positive");
  if (tau <= 0) throw std::invalid_argument("tau must be positive");
  if (mc_samples < 1) throw std::invalid_argument("mc_samples must be >= 1");
  if (!(validation_fraction > 0 && validation_fraction < 1))
    throw std::invalid_argument("validation_fraction must be in (0,1)");
}

namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::map<std::string, std::string> to_map(const ExperimentConfig& c) {
  std::map<std::string, std::string> m;
  m["variant"] = variant_name(c.variant);
  m["dataset"] = c.dataset;
  m["supervision_rate"] = fmt_double(c.supervision_rate);
  m["batch_size"] = std::to_string(c.batch_size);
  m["lr"] = fmt_double(c.lr);
  m["max_iterations"] = std::to_string(c.max_iterations);
  m["pretrain_steps"] = std::to_string(c.pretrain_steps);
  m["alpha"] = fmt_double(c.alpha);
  m["gamma"] = fmt_double(c.gamma);
  m["beta"] = fmt_double(c.beta);
  m["free_pixels"] = fmt_double(c.free_pixels);
  m["d_z"] = std::to_string(c.d_z);
  m["d_z1"] = std::to_string(c.d_z1);
  m["tau"] = fmt_double(c.tau);
  m["seed"] = std::to_string(c.seed);
  m["eval_every"] = std::to_string(c.eval_every);
  m["checkpoint_path"] = c.checkpoint_path;
  m["precision"] = c.precision;
  m["mc_samples"] = std::to_string(c.mc_samples);
  m["binarize"] = c.binarize ? "true" : "false";
  m["train_subset"] = std::to_string(c.train_subset);
  m["validation_fraction"] = fmt_double(c.validation_fraction);
  m["workdir"] = c.workdir;
  return m;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, v] : to_map(ExperimentConfig{})) keys.push_back(k);
  return keys;
}

void apply_override(ExperimentConfig& c, const std::string& key, const std::string& value) {
  auto as_double = [&](const char* k) {
    try {
      size_t pos = 0;
      double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw std::invalid_argument(std::string("config key ") + k + ": '" + value + "' is not a number");
    }
  };
  auto as_i64 = [&](const char* k) {
    try {
      size_t pos = 0;
      long long v = std::stoll(value, &pos);
      if (pos != value.size()) throw std::invalid_argument("");
      return static_cast<int64_t>(v);
    } catch (...) {
      throw std::invalid_argument(std::string("config key ") + k + ": '" + value + "' is not an integer");
    }
  };
  if (key == "variant") c.variant = variant_from_name(value);
  else if (key == "dataset") c.dataset = value;
  else if (key == "supervision_rate") c.supervision_rate = as_double("supervision_rate");
  else if (key == "batch_size") c.batch_size = static_cast<int>(as_i64("batch_size"));
  else if (key == "lr") c.lr = as_double("lr");
  else if (key == "max_iterations") c.max_iterations = as_i64("max_iterations");
  else if (key == "pretrain_steps") c.pretrain_steps = as_i64("pretrain_steps");
  else if (key == "alpha") c.alpha = as_double("alpha");
  else if (key == "gamma") c.gamma = as_double("gamma");
  else if (key == "beta") c.beta = as_double("beta");
  else if (key == "free_pixels") c.free_pixels = as_double("free_pixels");
  else if (key == "d_z") c.d_z = static_cast<int>(as_i64("d_z"));
  else if (key == "d_z1") c.d_z1 = static_cast<int>(as_i64("d_z1"));
  else if (key == "tau") c.tau = as_double("tau");
  else if (key == "seed") c.seed = static_cast<uint64_t>(as_i64("seed"));
  else if (key == "eval_every") c.eval_every = as_i64("eval_every");
  else if (key == "checkpoint_path") c.checkpoint_path = value;
  else if (key == "precision") c.precision = value;
  else if (key == "mc_samples") c.mc_samples = static_cast<int>(as_i64("mc_samples"));
  else if (key == "binarize") c.binarize = (value == "true" || value == "1");
  else if (key == "train_subset") c.train_subset = as_i64("train_subset");
  else if (key == "validation_fraction") c.validation_fraction = as_double("validation_fraction");
  else if (key == "workdir") c.workdir = value;
  else {
    std::string keys;
    for (const std::string& k : config_keys()) keys += (keys.empty() ? "" : ", ") + k;
    throw std::invalid_argument("unknown config key '" + key + "'; valid keys: " + keys);
  }
}

std::string config_to_text(const ExperimentConfig& cfg) {
  std::ostringstream os;
  for (const auto& [k, v] : to_map(cfg)) os << k << " = " << v << "\n";
  return os.str();
}

ExperimentConfig config_from_text(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t h = line.find('#');
    if (h != std::string::npos) line = line.substr(0, h);
    auto trim = [](std::string s) {
      size_t a = s.find_first_not_of(" \t\r");
      size_t b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string t = trim(line);
    if (t.empty()) continue;
    size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected 'key = value', got '" + t +
                                  "'");
    apply_override(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return config_from_text(text);
}

uint64_t config_hash(const ExperimentConfig& cfg) {
  std::string t = config_to_text(cfg);
  return fnv1a64(t.data(), t.size());
}

}  // namespace semafo
