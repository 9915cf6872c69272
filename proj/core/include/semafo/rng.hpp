#pragma once

#include <cstdint>

namespace semafo {

// Counter-based pseudo-random stream: every output is a pure function of
// (seed, stream, counter), so independent streams drawn from one seed never
// interact and a stream can be checkpointed by saving its counter alone.
class CounterRng {
 public:
  CounterRng(uint64_t seed, uint64_t stream) : seed_(seed), stream_(stream) {}

  uint64_t next_u64();

  // Uniform draw in the open interval (0, 1); never returns 0 or 1, so it is
  // safe under log().
  double uniform();

  // Standard normal via Box-Muller; consumes exactly two counter steps.
  double normal();

  // Gumbel(0,1) draw: -log(-log(U)).
  double gumbel();

  // Unbiased-enough index draw for shuffling (modulo bias is irrelevant at
  // the dataset sizes used here).
  uint64_t below(uint64_t n) { return next_u64() % n; }

  uint64_t counter() const { return counter_; }
  void set_counter(uint64_t c) { counter_ = c; }
  uint64_t seed() const { return seed_; }
  uint64_t stream() const { return stream_; }

 private:
  uint64_t seed_;
  uint64_t stream_;
  uint64_t counter_ = 0;
};

// Stream ids used across the project. Keeping them in one table guarantees
// two subsystems never share a stream by accident.
namespace rng_stream {
constexpr uint64_t kInit = 0;        // parameter initialization
constexpr uint64_t kShuffleS = 1;    // labeled-set batch order
constexpr uint64_t kShuffleU = 2;    // unlabeled-set batch order
constexpr uint64_t kNoise = 3;       // Gaussian reparameterization noise
constexpr uint64_t kGumbel = 4;      // relaxed-categorical noise
constexpr uint64_t kController = 5;  // controller latent noise
constexpr uint64_t kSplit = 6;       // supervision/validation splits
constexpr uint64_t kRender = 7;      // synthetic-shapes sampling
constexpr uint64_t kEval = 8;        // metric evaluation
constexpr uint64_t kProbe = 9;       // probe-classifier training
}  // namespace rng_stream

}  // namespace semafo
