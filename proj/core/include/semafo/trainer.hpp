#pragma once

#include <iosfwd>
#include <limits>
#include <optional>
#include <string>

#include "semafo/adam.hpp"
#include "semafo/data.hpp"
#include "semafo/model.hpp"
#include "semafo/objectives.hpp"

namespace semafo {

// Mutable training state. Serializing and reloading it resumes the exact
// trajectory: parameters, Adam moments, rng counters and batch-iterator
// positions are all captured.
struct TrainState {
  VaeModel model;
  AdamState adam;
  int64_t step = 0;           // completed main-loop iterations
  int64_t pretrain_done = 0;  // completed pretraining iterations
  double best_valid_elbo = -std::numeric_limits<double>::infinity();

  uint64_t noise_ctr = 0, gumbel_ctr = 0, ctrl_ctr = 0, binarize_ctr = 0;
  uint64_t sup_iter_ctr = 0, unsup_iter_ctr = 0;
  int64_t labeled_consumed = 0, unlabeled_consumed = 0;

  int divergence_streak = 0;
  double initial_loss = std::numeric_limits<double>::quiet_NaN();

  explicit TrainState(VaeModel m);
};

struct TrainData {
  Dataset labeled;    // S
  Dataset unlabeled;  // U (no label payload)
  Dataset train_all;  // plain-variant stream (labels retained for probes)
  Dataset valid;
  Dataset test;
  FactorSchema schema;
};

// Loads the dataset named by cfg, applies the train_subset cap, carves the
// validation split, then the supervision split.
TrainData prepare_train_data(const ExperimentConfig& cfg);

struct TrainOutcome {
  bool diverged = false;
  std::string message;
  double best_valid_elbo = 0;
  double final_valid_elbo = 0;
  int64_t steps_run = 0;
  std::string checkpoint_path;
};

// Per-example validation ELBO of the variant's own unsupervised bound,
// deterministic given (model, set, seed, step).
double validation_elbo(const VaeModel& model, const ExperimentConfig& cfg, const Dataset& valid, int64_t step);

// Writes cfg.checkpoint_path iff `valid_elbo` strictly improves on
// state.best_valid_elbo. I/O failures warn and training continues.
bool checkpoint_best(TrainState& state, double valid_elbo, const ExperimentConfig& cfg);

// Algorithm phases. `log` (optional) receives one CSV row per optimizer
// step plus one per validation pass.
void run_pretrain(const ExperimentConfig& cfg, const TrainData& data, TrainState& state, std::ostream* log);
TrainOutcome run_semafo_training(const ExperimentConfig& cfg, const TrainData& data, TrainState& state,
                                 std::ostream* log);
TrainOutcome run_plain_training(const ExperimentConfig& cfg, const TrainData& data, TrainState& state,
                                std::ostream* log);

// Orchestrates pretrain + the variant's loop, writing metrics.csv and the
// best checkpoint under cfg.workdir.
TrainOutcome run_training(const ExperimentConfig& cfg);

// Full-state round trip (parameters + moments + counters).
void save_train_state(const std::string& path, const TrainState& state, const ExperimentConfig& cfg);
TrainState load_train_state(const std::string& path, const ExperimentConfig& cfg, const TrainData& data);

}  // namespace semafo
