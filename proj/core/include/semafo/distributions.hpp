#pragma once

#include <vector>

#include "semafo/rng.hpp"
#include "semafo/tensor.hpp"

namespace semafo {

// Diagonal Gaussian over a [batch, d] block, parameterized by mean and
// log-stddev tensors of identical shape.
struct DiagGaussian {
  Tensor mean;
  Tensor log_std;
};

// Factory used by model heads: clamps raw log-std into [-7, 7] before it is
// ever exponentiated. Keeps early training away from overflow; the clamp
// bounds are a config knob at the model level.
DiagGaussian clamped_gaussian(Tensor mean, Tensor raw_log_std, double clamp = 7.0);

// Standard normal with the same shape as a reference tensor.
DiagGaussian std_normal_like(Graph& g, const Shape& shape);

// mean + exp(log_std) * eps with eps ~ N(0, I); differentiable in both
// parameters through the additive reparameterization.
Tensor gaussian_rsample(const DiagGaussian& d, CounterRng& rng);

// Closed-form KL(q || p) per batch row, summed over the feature axis.
Tensor gaussian_kl(const DiagGaussian& q, const DiagGaussian& p);

// KL(q || N(0, I)) per batch row.
Tensor gaussian_kl_to_std(const DiagGaussian& q);

// log N(value | mean, diag(sigma^2)) per batch row.
Tensor gaussian_logprob(const DiagGaussian& d, Tensor value);

// Factorized Bernoulli over pixels, logits shaped [batch, pixels].
struct BernoulliImage {
  Tensor logits;
};

// Per-pixel x*l - softplus(l), summed over pixels. Stable for any finite
// logit; requires x in [0, 1].
Tensor bernoulli_logprob(const BernoulliImage& d, Tensor x);
Tensor bernoulli_mean(const BernoulliImage& d);

// Gumbel-Softmax relaxation of a categorical over k classes,
// logits [batch, k].
struct RelaxedCategorical {
  Tensor logits;
  double temperature;
};

// softmax((logits + Gumbel noise) / tau); rows lie on the simplex and the
// sample is differentiable w.r.t. the logits.
Tensor gumbel_softmax_sample(const RelaxedCategorical& d, CounterRng& rng);

// KL(softmax(logits) || uniform) per batch row: sum p*(log p + log k).
Tensor categorical_kl_to_uniform(const RelaxedCategorical& d);

// sum_k value_k * log_softmax(logits)_k per row. Exact categorical log-mass
// for one-hot values; the standard cross-entropy surrogate for relaxed
// simplex values.
Tensor categorical_logprob(const RelaxedCategorical& d, Tensor value);

// Ordered list of relaxed-categorical blocks, one per ground-truth factor.
// Total dimension is the sum of cardinalities; log-probs add across blocks.
struct FactorizedLabel {
  std::vector<RelaxedCategorical> blocks;
  std::vector<int> cardinalities;

  static FactorizedLabel from_logits(Tensor logits, const std::vector<int>& cardinalities, double tau);

  int total_dim() const;
  Tensor sample(CounterRng& rng) const;       // [batch, d_y]
  Tensor log_prob(Tensor value) const;        // [batch]
  Tensor kl_to_uniform() const;               // [batch]
  Tensor probs() const;                       // [batch, d_y] per-block softmax
};

// Throws when any per-block row of `value` is not a normalized simplex point
// (sum 1, entries >= 0, within tolerance).
void validate_factor_rows(const Array& value, const std::vector<int>& cardinalities, double tol = 1e-5);

}  // namespace semafo
