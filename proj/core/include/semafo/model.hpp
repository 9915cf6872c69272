#pragma once

#include <optional>
#include <string>
#include <vector>

#include "semafo/config.hpp"
#include "semafo/distributions.hpp"
#include "semafo/nets.hpp"

namespace semafo {

struct Checkpoint;
struct LoadedModel;

// One trainable model variant. The reconstruction VAE is an MLP
// encoder/decoder pair (784 -> 512 -> 256 -> heads and its mirror by
// default); Semafo variants add a linear classifier head q(y|z) and the
// controller VAE {q(u|y), p(y|u), p(z|u)} with d_u = d_y; hierarchical
// variants add a second stochastic layer z1 with bidirectional inference.
class VaeModel {
 public:
  struct Spec {
    Variant variant = Variant::Vanilla;
    int pixels = 784;
    int d_z = 32;
    int d_z1 = 64;
    std::vector<int> factor_cards;  // per-factor cardinalities; may be empty for non-semafo
    double tau = 0.5;
    Dtype dtype = Dtype::Float64;
    int enc_h1 = 512, enc_h2 = 256;  // trunk widths, mirrored in the decoder
    int ctrl_h = 512;                // controller hidden width
    double log_std_clamp = 7.0;
  };

  VaeModel(const Spec& spec, uint64_t seed);
  static Spec spec_from_config(const ExperimentConfig& cfg, int pixels, const std::vector<int>& factor_cards);

  const Spec& spec() const { return spec_; }
  Variant variant() const { return spec_.variant; }
  bool is_semafo() const { return variant_is_semafo(spec_.variant); }
  bool is_hierarchical() const { return variant_is_hierarchical(spec_.variant); }
  int d_y() const;
  int d_u() const { return d_y(); }

  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  // q(z|x). Validates pixel count and [0,1] range; pixels are rescaled to
  // [-1,1] before the trunk.
  DiagGaussian encode(GraphBinding& bind, Tensor x) const;

  // p(x|z) pixel logits.
  BernoulliImage decode(GraphBinding& bind, Tensor z) const;

  // q(y|z) through the single linear head. Errors on non-Semafo variants.
  // For hierarchical variants z is the concatenated (z0, z1).
  FactorizedLabel classify(GraphBinding& bind, Tensor z) const;

  // Controller pieces. y rows must be per-block normalized simplex points.
  DiagGaussian controller_posterior_u(GraphBinding& bind, Tensor y) const;  // q(u|y)
  FactorizedLabel controller_label_lik(GraphBinding& bind, Tensor u) const;  // p(y|u)
  DiagGaussian prior_z_given_u(GraphBinding& bind, Tensor u) const;          // p(z|u), affine heads

  struct ControllerForward {
    DiagGaussian q_u;
    Tensor u;  // one reparameterized sample of q(u|y)
    FactorizedLabel p_y_given_u;
    DiagGaussian p_z_given_u;
  };
  ControllerForward controller_forward(GraphBinding& bind, Tensor y, CounterRng& rng) const;

  // --- hierarchical lattice: q(z1|x), q(z0|z1,x); p(z0[|u]), p(z1|z0[,u]),
  // p(x|z0,z1) ---
  struct HierPosterior {
    DiagGaussian q_z1;
    Tensor z1;
    DiagGaussian q_z0;
    Tensor z0;
  };
  HierPosterior hier_encode(GraphBinding& bind, Tensor x, CounterRng& noise) const;
  DiagGaussian hier_prior_z1(GraphBinding& bind, Tensor z0, const std::optional<Tensor>& u) const;
  DiagGaussian prior_z0(GraphBinding& bind, int64_t batch, const std::optional<Tensor>& u) const;
  BernoulliImage hier_decode(GraphBinding& bind, Tensor z0, Tensor z1) const;

  // L2 norm of the decoder's first-layer weights per latent input unit.
  std::vector<double> decoder_unit_weight_norms() const;

  // Checkpoint round-trip. Loading validates the stored config hash.
  void save(const std::string& path, const ExperimentConfig& cfg) const;
  static LoadedModel load(const std::string& path, int pixels, const std::vector<int>& factor_cards);
  void load_params_from(const Checkpoint& ckpt);

 private:
  Tensor normalized_input(GraphBinding& bind, Tensor x) const;
  Tensor trunk_features(GraphBinding& bind, Tensor x) const;

  Spec spec_;
  ParamSet params_;

  Mlp enc_trunk_;
  Linear enc_mu_, enc_logstd_;          // heads for z (z0 in hierarchical models)
  Mlp dec_trunk_;
  Linear dec_logits_;
  Linear cls_;                          // q(y|z), semafo only
  Mlp ctrl_enc_;                        // controller q(u|y) trunk
  Linear ctrl_mu_, ctrl_logstd_;
  Mlp ctrl_dec_;                        // controller p(y|u) trunk
  Linear ctrl_y_logits_;
  Linear prior_mu_, prior_logstd_;      // p(z|u) affine heads (z0 for hierarchical)
  Linear enc1_mu_, enc1_logstd_;        // q(z1|x) heads, hierarchical only
  Linear enc0_merge_;                   // q(z0|z1,x) merge layer
  Mlp prior1_trunk_;                    // p(z1|z0[,u]) trunk
  Linear prior1_mu_, prior1_logstd_;
};

struct LoadedModel {
  VaeModel model;
  ExperimentConfig cfg;
};

}  // namespace semafo
