#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semafo/array.hpp"

namespace semafo {

enum class Variant { Vanilla, BetaGamma, FreePixels, Semafo, Hvae, SemafoHvae };

std::string variant_name(Variant v);
Variant variant_from_name(const std::string& s);
bool variant_is_semafo(Variant v);
bool variant_is_hierarchical(Variant v);

// Every hyperparameter of a run. Serializes to a canonical key-value text
// form whose FNV-1a hash identifies the run inside checkpoints.
struct ExperimentConfig {
  Variant variant = Variant::Vanilla;
  std::string dataset = "mnist";  // "mnist" | "synthetic-shapes"
  double supervision_rate = 0.01;
  int batch_size = 64;
  double lr = 0;              // 0 = auto: 1e-3 for mnist, 1e-4 for synthetic-shapes
  int64_t max_iterations = 20000;
  int64_t pretrain_steps = 800;
  double alpha = 10;
  double gamma = 0;           // 0 = auto: 10 for semafo variants (branch weight),
                              // 1 otherwise (reconstruction scale)
  double beta = 1;
  double free_pixels = 0;     // R
  int d_z = 32;
  int d_z1 = 64;
  double tau = 0.5;
  uint64_t seed = 1;
  int64_t eval_every = 500;
  std::string checkpoint_path = "checkpoint.smfo";
  std::string precision = "float32";  // training dtype; metrics always run f64
  int mc_samples = 1;
  bool binarize = false;      // dynamic binarization of pixel data
  int64_t train_subset = 0;   // 0 = full training split
  double validation_fraction = 0.1;
  std::string workdir = ".";

  Dtype dtype() const;
  // Fills the auto fields (lr, gamma) from variant/dataset and validates
  // ranges; throws std::invalid_argument with the offending key.
  void resolve();
  bool is_semafo() const { return variant_is_semafo(variant); }
  bool is_hierarchical() const { return variant_is_hierarchical(variant); }
};

// Canonical text form: sorted "key = value" lines, doubles printed with 17
// significant digits. Hash/equality of two configs is hash/equality of this.
std::string config_to_text(const ExperimentConfig& cfg);
ExperimentConfig config_from_text(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);
uint64_t config_hash(const ExperimentConfig& cfg);

// "key=value" override, same keys as the file format. Unknown key -> error
// listing the valid keys.
void apply_override(ExperimentConfig& cfg, const std::string& key, const std::string& value);
std::vector<std::string> config_keys();

}  // namespace semafo
