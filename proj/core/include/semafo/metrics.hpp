#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "semafo/data.hpp"
#include "semafo/model.hpp"

namespace semafo {

// ---- likelihoods ----

// Mean over the set of sum-over-pixels log p(x|z), one posterior sample per
// example, fixed seed. Nats per example.
double test_reconstruction_ll(const VaeModel& model, const Dataset& testset, uint64_t seed);

// Importance-weighted bound log mean_k p(x|z_k)p(z_k)/q(z_k|x).
struct IwaeReport {
  double nats_per_example = 0;
  std::vector<double> batch_means;  // per evaluation chunk, for ordering checks
};
IwaeReport marginal_ll_iwae(const VaeModel& model, const Dataset& testset, int k, uint64_t seed);

// ---- activity census ----

struct ActiveUnitReport {
  std::vector<double> unit_kl;        // mean KL(q(z_j|x) || p(z_j)) per unit, nats
  std::vector<double> weight_norms;   // decoder first-layer L2 norm per latent input
  double threshold = 0.01;
  int active_count = 0;

  std::string csv() const;
};
ActiveUnitReport active_units(const VaeModel& model, const Dataset& testset, double threshold, uint64_t seed);

// ---- Frechet distance ----

using FeatureExtractor = std::function<Array(const Array& images)>;

FeatureExtractor raw_pixel_features();

// ||mu_a - mu_b||^2 + tr(Sa + Sb - 2 sqrt(Sa Sb)); the matrix square root is
// taken through the eigendecomposition of the symmetrized product with
// eigenvalues clamped at zero. Needs >= 2*dim samples per side.
double frechet_from_features(const Array& feats_a, const Array& feats_b);
double frechet_distance(const Array& images_a, const Array& images_b, const FeatureExtractor& extractor);

// ---- DCI ----

struct DciReport {
  double disentanglement = 0;  // D
  double completeness = 0;     // C
  double informativeness = 0;  // I: mean held-out accuracy
  std::vector<double> importance;  // [d_z][n_factors], non-negative
  std::vector<double> per_factor_accuracy;
  double chance_level = 0;  // mean over factors of the majority-class share
  int d_z = 0, n_factors = 0;

  std::string text() const;
};

// codes: [n, d_z]; factors: n * n_factors class indices; cards: per-factor
// cardinalities. Importances come from L1-regularized multinomial logistic
// probes trained on standardized codes (ISTA), accuracy from a held-out 20%.
DciReport dci(const Array& codes, const std::vector<int32_t>& factors, const std::vector<int>& cards,
              uint64_t seed);

// Posterior codes for a dataset: `samples_per_example` stochastic draws from
// q(z|x) (z0 for hierarchical models), with matching factor rows.
struct CodeMatrix {
  Array codes;
  std::vector<int32_t> factors;
};
CodeMatrix posterior_codes(const VaeModel& model, const Dataset& labeled, int samples_per_example, uint64_t seed);

// ---- probe classifier and conditional generation ----

// Small supervised MLP (pixels -> hidden -> classes) trained in-repo; its
// penultimate activations double as the Frechet feature space.
class ProbeClassifier {
 public:
  ProbeClassifier(int pixels, int n_classes, int hidden, uint64_t seed);
  void train(const Dataset& labeled, int iterations, int batch_size, double lr, uint64_t seed);
  double accuracy(const Dataset& labeled_eval) const;
  std::vector<int> predict(const Array& images01) const;
  Array features(const Array& images01) const;
  int n_classes() const { return classes_; }

 private:
  ParamSet ps_;
  Mlp trunk_;
  Linear head_;
  int pixels_, classes_;
};

FeatureExtractor probe_features(const ProbeClassifier& probe);

enum class FactorProtocol { Fixed, Randomized };

struct SampleSpec {
  int n = 64;
  FactorProtocol protocol = FactorProtocol::Randomized;
  // (factor index, value index) pairs held fixed; the rest are sampled
  std::vector<std::pair<int, int>> fixed_factors;
};

struct GeneratedSamples {
  Array images;                      // [n, pixels], decoder means
  std::vector<int32_t> factors;      // n * n_factors requested tuples (semafo only)
};

// Semafo: y per protocol, u ~ q(u|y), z ~ p(z|u), pixels = decoder mean.
// Plain variants: z from the prior chain; `factors` stays empty.
GeneratedSamples generate_samples(const VaeModel& model, const FactorSchema& schema, const SampleSpec& spec,
                                  uint64_t seed);

// Requested-class control accuracy under a fixed probe; refuses (throws) when
// the probe's real-data accuracy is below `min_probe_accuracy`. For plain
// variants the requested classes are random and generation ignores them.
struct ConditionalGenReport {
  double accuracy = 0;
  std::vector<int> confusion;  // [k][k] requested x predicted
  double probe_real_accuracy = 0;
};
ConditionalGenReport conditional_generation_accuracy(const VaeModel& model, const ProbeClassifier& probe,
                                                     double probe_real_accuracy, const FactorSchema& schema,
                                                     int per_class_n, uint64_t seed,
                                                     double min_probe_accuracy = 0.9);

// ---- mutual-information estimate ----

// Decoder-based lower bound E_q[log p(x|z) - log q_data(x)] with the
// empirical marginal (log q_data = -log N).
struct MiBound {
  double nats = 0;
  double stderr_nats = 0;
};
MiBound mi_xz_ba_lower_bound(const VaeModel& model, const Dataset& ds, int samples_per_example, uint64_t seed);

// ---- small shared stats ----

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace semafo
