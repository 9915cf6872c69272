#pragma once

#include <cstdint>
#include <vector>

#include "semafo/array.hpp"

namespace semafo {

enum class NonFinitePolicy { SkipStep, Error };

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  NonFinitePolicy on_non_finite = NonFinitePolicy::SkipStep;
};

// Bias-corrected Adam over a fixed list of parameter slots. Moments are kept
// in f64 regardless of the parameter dtype. A slot whose gradient is absent
// in a step is left untouched (moments included).
class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const std::vector<const Array*>& params);

  // Applies one update to `params[i]` for every i with grads[i] != nullptr.
  // Returns false when a non-finite gradient was found and the step skipped.
  bool step(std::vector<Array*> params, const std::vector<const Array*>& grads, const AdamConfig& cfg);

  int64_t step_count() const { return t_; }
  int64_t skipped_steps() const { return skipped_; }
  size_t num_slots() const { return m_.size(); }

  // checkpoint plumbing
  std::vector<Array>& moments_m() { return m_; }
  std::vector<Array>& moments_v() { return v_; }
  void set_counters(int64_t t, int64_t skipped) {
    t_ = t;
    skipped_ = skipped;
  }

 private:
  std::vector<Array> m_, v_;
  int64_t t_ = 0;
  int64_t skipped_ = 0;
};

}  // namespace semafo
