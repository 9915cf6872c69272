#pragma once

#include <string>

#include "semafo/model.hpp"

namespace semafo {

// Per-branch training losses. Every function returns the scalar loss tensor
// to step on plus the value of each term, all mean-over-batch.
//
// Sign bookkeeping, with cls_coeff = -1 for unsupervised semafo branches,
// +alpha for supervised ones and 0 otherwise:
//
//   total == weight * -( gamma_recon * reconstruction
//                        - beta * (kl_z + kl_z0 + kl_z1)
//                        + controller_elbo + cls_coeff * classifier_term )
//
// recompose() evaluates that right-hand side; the two agree to 1e-9 in f64.
struct LossBreakdown {
  Tensor loss;

  double total = 0;
  double weight = 1;        // whole-branch multiplier (gamma on unsupervised branches)
  double gamma_recon = 1;   // reconstruction scale (beta-gamma objective)
  double beta = 1;          // KL scale
  double reconstruction = 0;
  double kl_z = 0, kl_z0 = 0, kl_z1 = 0;
  double controller_elbo = 0;
  double classifier_term = 0;  // mean log q(y|z) along the evaluated chain
  double cls_coeff = 0;
  bool supervised = false;

  double elbo() const { return -total / weight; }
  double recompose() const;
  bool finite() const;
  std::string csv_row(int64_t step, const std::string& split, const std::string& variant,
                      double wall_time_s) const;
  static std::string csv_header();
};

// Independent noise sources for the sampling chain; each caller owns its
// streams so interleaved branches stay reproducible.
struct NoiseStreams {
  CounterRng z;       // Gaussian reparameterization
  CounterRng label;   // Gumbel noise for y samples
  CounterRng ctrl;    // controller latent u
};

struct SemafoOpts {
  double alpha = 10;        // supervised classifier weight
  double weight = 1;        // branch weight (gamma for the unsupervised branch)
  bool use_controller = true;  // false: KL target is the unit Gaussian and the
                               // controller/classifier terms are dropped
  int mc_samples = 1;
};

// -[ E log p(x|z) - KL(q(z|x) || N(0,I)) ], one reparameterized sample.
LossBreakdown elbo_vanilla(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                           int mc_samples = 1);

// -[ gamma * E log p(x|z) - beta * KL ].
LossBreakdown elbo_beta_gamma(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                              double gamma, double beta, int mc_samples = 1);

// Reconstruction computed per pixel with +R added before summation.
LossBreakdown elbo_free_pixels(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                               double R, int mc_samples = 1);

// Chain z ~ q(z|x), y ~ q(y|z), u ~ q(u|y):
// -[ E log p(x|z) - KL(q(z|x)||p(z|u)) + ELBO(y,u) - log q(y|z) ] * weight.
LossBreakdown elbo_semafo_unsupervised(const VaeModel& m, GraphBinding& bind, const Array& x,
                                       NoiseStreams& rng, const SemafoOpts& opts);

// Observed y, u ~ q(u|y):
// -[ E log p(x|z) - KL(q(z|x)||p(z|u)) + ELBO(y,u) ] - alpha * log q(y|z).
LossBreakdown elbo_semafo_supervised(const VaeModel& m, GraphBinding& bind, const Array& x, const Array& y,
                                     NoiseStreams& rng, const SemafoOpts& opts);

// Plain two-layer hierarchy with priors p(z0)=N(0,I), learned p(z1|z0).
LossBreakdown elbo_hvae(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                        int mc_samples = 1);

// Hierarchical semafo objectives: KL(q(z1|x)||p(z1|z0,u)), KL(q(z0|z1,x)||p(z0|u)),
// the controller ELBO, and the classifier entropy/likelihood term.
LossBreakdown elbo_semafo_hvae_unsupervised(const VaeModel& m, GraphBinding& bind, const Array& x,
                                            NoiseStreams& rng, const SemafoOpts& opts);
LossBreakdown elbo_semafo_hvae_supervised(const VaeModel& m, GraphBinding& bind, const Array& x, const Array& y,
                                          NoiseStreams& rng, const SemafoOpts& opts);

// Dispatches on the model variant: the plain (non-semafo) training loss.
LossBreakdown plain_loss(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                         double gamma, double beta, double R, int mc_samples = 1);

// E_{q(u|y)}[log p(y|u)] - KL(q(u|y)||N(0,I)) per batch row, plus the sampled
// u and the controllable prior p(z|u). Shared by both semafo branches.
struct ControllerElbo {
  Tensor per_batch;  // [batch]
  Tensor u;
  DiagGaussian p_z_given_u;
};
ControllerElbo controller_elbo(const VaeModel& m, GraphBinding& bind, Tensor y, CounterRng& ctrl_rng);

}  // namespace semafo
