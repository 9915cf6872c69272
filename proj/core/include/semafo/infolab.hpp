#pragma once

#include <string>
#include <vector>

#include "semafo/data.hpp"
#include "semafo/model.hpp"
#include "semafo/rng.hpp"

namespace semafo {

// Exact joint probability table over three finite alphabets. Everything in
// nats with the 0*log(0) = 0 convention.
struct DiscreteJoint {
  int nx = 0, ny = 0, nz = 0;
  std::vector<double> p;  // [x][y][z] row-major

  double& at(int x, int y, int z) { return p[static_cast<size_t>((x * ny + y) * nz + z)]; }
  double at(int x, int y, int z) const { return p[static_cast<size_t>((x * ny + y) * nz + z)]; }
  void validate(double tol = 1e-12) const;

  std::vector<double> marginal_x() const;
  std::vector<double> marginal_y() const;
  std::vector<double> marginal_z() const;
  std::vector<double> marginal_xy() const;  // [x][y]
  std::vector<double> marginal_xz() const;  // [x][z]
  std::vector<double> marginal_yz() const;  // [y][z]

  static DiscreteJoint random_dirichlet(int nx, int ny, int nz, CounterRng& rng);
  // y == z exactly, over an arbitrary positive p(x,z) (needs ny == nz).
  static DiscreteJoint copy_construction(int nx, int nz, CounterRng& rng);
  // z = (y, w) with w independent of (x, y): y is a function of z.
  static DiscreteJoint subset_construction(int nx, int ny, int nw, CounterRng& rng);
  // y independent of (x, z).
  static DiscreteJoint independent_y_construction(int nx, int ny, int nz, CounterRng& rng);
};

double entropy(const std::vector<double>& dist);

enum class Axis { X, Y, Z };
double mutual_info(const DiscreteJoint& j, Axis a, Axis b);

// Transitive-information check: I(x;z) >= I(x;y) + I(y;z) - H(y).
// The slack equals H(y|x,z) + I(x;z|y); `identity_gap` is the disagreement
// between the two independent computations of that identity.
struct TransitiveReport {
  double lhs = 0, rhs = 0, slack = 0;
  bool holds = false;
  double identity_gap = 0;
};
TransitiveReport verify_transitive_info(const DiscreteJoint& j, double tol = 1e-9);

// Variational (decoder-based) lower bound on I(x;z):
// bound = E_{p(x,z)}[log q(x|z) - log p(x)] <= I(x;z), tight at the true
// conditional. q_x_given_z is [nz][nx], rows normalized.
struct BaReport {
  double bound = 0, exact = 0, gap = 0;
};
BaReport verify_ba_bound(const DiscreteJoint& j, const std::vector<double>& q_x_given_z);

// Fully enumerable toy VAE: explicit conditional tables over finite
// alphabets, the substrate for the exact ELBO decomposition.
struct DiscreteToyVae {
  int nx = 0, nz = 0;
  std::vector<double> q_z_given_x;  // [nx][nz]
  std::vector<double> p_x_given_z;  // [nz][nx]
  std::vector<double> p_z;          // [nz]
  std::vector<double> q_x;          // [nx]

  void validate(double tol = 1e-12) const;
  std::vector<double> joint_q() const;      // q(x,z) = q(x) q(z|x)
  std::vector<double> aggregate_z() const;  // q(z)

  static DiscreteToyVae random(int nx, int nz, CounterRng& rng);
  static DiscreteToyVae collapsed(int nx, int nz, CounterRng& rng);   // q(z|x) = p(z)
  static DiscreteToyVae bayes_decoder(int nx, int nz, CounterRng& rng);  // p(x|z) = q(x|z), p(z) = q(z)
};

// -ELBO == I_q(x;z) - I_hat(x;z) + H(x), by exact enumeration, where
// I_hat = E_q[log p(x,z) / (q(x) q(z))]. Also reports I_hat <= I_q.
struct ElboDecomposition {
  double neg_elbo = 0, i_q = 0, i_hat = 0, h_x = 0;
  double residual = 0;
  bool ihat_le_iq = false;
};
ElboDecomposition brute_force_elbo_decomposition(const DiscreteToyVae& toy);

// Exact MI of the toy's q(x,z) joint; reference for the BA-style bound.
double toy_exact_mi(const DiscreteToyVae& toy);

// Monte-Carlo divergence surrogates for a trained semafo model:
// KL(q(z,y) || p(z,y)) and KL(q(x,z) || p(x,z)), estimated through the
// model's own factorizations (aggregate posterior over a reference batch,
// importance-sampled controller marginals).
struct Lemma2Probe {
  double kl_zy = 0, kl_zy_se = 0;
  double kl_xz = 0, kl_xz_se = 0;
  int samples = 0;
};
Lemma2Probe lemma2_condition_probe(const VaeModel& model, const Dataset& labeled_set, uint64_t seed,
                                   int n_examples = 128, int n_u_samples = 64, int n_reference = 256);

// The verify-theory harness: randomized sweeps plus the equality-case suite.
struct TheoryReport {
  int transitive_instances = 0, transitive_violations = 0;
  double slack_min = 0, slack_mean = 0, slack_max = 0;
  double equality_max_abs_slack = 0;
  int decomposition_instances = 0, decomposition_violations = 0;
  double residual_max = 0;
  bool ihat_le_iq_all = true;
  int ba_instances = 0, ba_violations = 0;
  double ba_gap_min = 0;
  double ba_tight_max_abs_gap = 0;

  bool ok() const;
  std::string text() const;
  std::string csv() const;
};
TheoryReport run_theory_verification(uint64_t seed, int n_transitive = 10000, int n_decomposition = 100,
                                     int n_ba = 1000);

}  // namespace semafo
