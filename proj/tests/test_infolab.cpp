#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semafo/infolab.hpp"
#include "test_util.hpp"

using namespace semafo;
using namespace semafo::testing;

TEST_CASE("entropy and mutual information exact values") {
  SUBCASE("uniform over 10 symbols") {
    std::vector<double> u(10, 0.1);
    CHECK(entropy(u) == doctest::Approx(std::log(10.0)).epsilon(1e-12));
  }
  SUBCASE("independent X and Z have zero MI") {
    CounterRng rng(1, 1);
    DiscreteJoint j = DiscreteJoint::independent_y_construction(3, 4, 3, rng);
    // x and z of that construction are dependent; check y instead
    CHECK(mutual_info(j, Axis::X, Axis::Y) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(mutual_info(j, Axis::Y, Axis::Z) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("perfectly correlated uniform bit carries ln 2") {
    DiscreteJoint j{2, 1, 2, std::vector<double>(4, 0.0)};
    j.at(0, 0, 0) = 0.5;
    j.at(1, 0, 1) = 0.5;
    CHECK(mutual_info(j, Axis::X, Axis::Z) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  }
  SUBCASE("invalid tables rejected") {
    DiscreteJoint j{2, 1, 2, std::vector<double>(4, 0.3)};  // mass 1.2
    CHECK_THROWS_AS(j.validate(), std::invalid_argument);
    CHECK_THROWS_AS(mutual_info(j, Axis::X, Axis::X), std::invalid_argument);
  }
}

TEST_CASE("transitive information inequality on random joints") {
  CounterRng rng(2, 2);
  double min_slack = 1e300;
  for (int i = 0; i < 2000; ++i) {
    int nx = 2 + static_cast<int>(rng.below(3));
    int ny = 2 + static_cast<int>(rng.below(2));
    int nz = 2 + static_cast<int>(rng.below(3));
    DiscreteJoint j = DiscreteJoint::random_dirichlet(nx, ny, nz, rng);
    TransitiveReport r = verify_transitive_info(j);
    CHECK(r.holds);
    CHECK(r.identity_gap < 1e-12);
    min_slack = std::min(min_slack, r.slack);
  }
  CHECK(min_slack >= -1e-9);
}

TEST_CASE("transitive equality and degenerate constructions") {
  CounterRng rng(3, 3);
  SUBCASE("y == z gives zero slack") {
    for (int i = 0; i < 50; ++i) {
      TransitiveReport r = verify_transitive_info(DiscreteJoint::copy_construction(4, 4, rng));
      CHECK(std::abs(r.slack) < 1e-9);
    }
  }
  SUBCASE("y a function of z with independent remainder gives zero slack") {
    for (int i = 0; i < 50; ++i) {
      TransitiveReport r = verify_transitive_info(DiscreteJoint::subset_construction(4, 2, 2, rng));
      CHECK(std::abs(r.slack) < 1e-9);
      // the construction also pins I(x;z) == I(x;y)
      DiscreteJoint j = DiscreteJoint::subset_construction(4, 2, 2, rng);
      CHECK(mutual_info(j, Axis::X, Axis::Z) == doctest::Approx(mutual_info(j, Axis::X, Axis::Y)).epsilon(1e-9));
    }
  }
  SUBCASE("independent y makes the bound vacuous but valid") {
    for (int i = 0; i < 50; ++i) {
      DiscreteJoint j = DiscreteJoint::independent_y_construction(4, 3, 4, rng);
      TransitiveReport r = verify_transitive_info(j);
      CHECK(r.holds);
      CHECK(r.rhs <= 1e-12);  // rhs = -H(y) <= 0
      CHECK(r.rhs == doctest::Approx(-entropy(j.marginal_y())).epsilon(1e-9));
    }
  }
}

TEST_CASE("exact quantities are stable under symbol relabeling") {
  CounterRng rng(4, 4);
  DiscreteJoint j = DiscreteJoint::random_dirichlet(4, 3, 4, rng);
  // permute the x alphabet
  DiscreteJoint p = j;
  int perm[4] = {2, 0, 3, 1};
  for (int x = 0; x < 4; ++x)
    for (int y = 0; y < 3; ++y)
      for (int z = 0; z < 4; ++z) p.at(perm[x], y, z) = j.at(x, y, z);
  CHECK(mutual_info(p, Axis::X, Axis::Z) == doctest::Approx(mutual_info(j, Axis::X, Axis::Z)).epsilon(1e-12));
  CHECK(entropy(p.marginal_x()) == doctest::Approx(entropy(j.marginal_x())).epsilon(1e-12));
  TransitiveReport a = verify_transitive_info(j), b = verify_transitive_info(p);
  CHECK(a.slack == doctest::Approx(b.slack).epsilon(1e-12));
}

TEST_CASE("variational MI bound") {
  CounterRng rng(5, 5);
  SUBCASE("true conditional is tight") {
    for (int i = 0; i < 100; ++i) {
      DiscreteJoint j = DiscreteJoint::random_dirichlet(3, 2, 4, rng);
      std::vector<double> pxz = j.marginal_xz();
      std::vector<double> pz = j.marginal_z();
      std::vector<double> q(static_cast<size_t>(3 * 4));
      for (int z = 0; z < 4; ++z)
        for (int x = 0; x < 3; ++x) q[static_cast<size_t>(z * 3 + x)] = pxz[static_cast<size_t>(x * 4 + z)] / pz[static_cast<size_t>(z)];
      BaReport r = verify_ba_bound(j, q);
      CHECK(std::abs(r.gap) < 1e-12);
    }
  }
  SUBCASE("uniform q with uniform p(x) gives bound zero") {
    // uniform x marginal: p(x,y,z) = (1/nx) * p(y,z)
    CounterRng r2(6, 6);
    int nx = 4, ny = 2, nz = 3;
    DiscreteJoint j{nx, ny, nz, std::vector<double>(static_cast<size_t>(nx * ny * nz), 0.0)};
    std::vector<double> pyz(static_cast<size_t>(ny * nz));
    double s = 0;
    for (double& v : pyz) {
      v = -std::log(r2.uniform());
      s += v;
    }
    for (double& v : pyz) v /= s;
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y)
        for (int z = 0; z < nz; ++z) j.at(x, y, z) = pyz[static_cast<size_t>(y * nz + z)] / nx;
    std::vector<double> q(static_cast<size_t>(nx * nz), 1.0 / nx);
    BaReport r = verify_ba_bound(j, q);
    CHECK(r.bound == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(r.gap >= -1e-12);
  }
  SUBCASE("gap is non-negative on random pairs") {
    for (int i = 0; i < 1000; ++i) {
      DiscreteJoint j = DiscreteJoint::random_dirichlet(3, 2, 3, rng);
      std::vector<double> q;
      for (int z = 0; z < 3; ++z) {
        double srow = 0;
        std::vector<double> row(3);
        for (double& v : row) {
          v = -std::log(rng.uniform());
          srow += v;
        }
        for (double v : row) q.push_back(v / srow);
      }
      BaReport r = verify_ba_bound(j, q);
      CHECK(r.gap >= -1e-9);
    }
  }
  SUBCASE("malformed q rejected") {
    CounterRng r3(7, 7);
    DiscreteJoint j = DiscreteJoint::random_dirichlet(3, 2, 3, r3);
    std::vector<double> q(static_cast<size_t>(3 * 3), 0.5);
    CHECK_THROWS_AS(verify_ba_bound(j, q), std::invalid_argument);
  }
}

TEST_CASE("exact ELBO decomposition by enumeration") {
  CounterRng rng(8, 8);
  SUBCASE("random instances: residual vanishes, decoder term lower-bounds the encoder MI") {
    for (int i = 0; i < 100; ++i) {
      int nx = 2 + static_cast<int>(rng.below(7));
      int nz = 2 + static_cast<int>(rng.below(7));
      ElboDecomposition d = brute_force_elbo_decomposition(DiscreteToyVae::random(nx, nz, rng));
      CHECK(std::abs(d.residual) < 1e-9);
      CHECK(d.ihat_le_iq);
    }
  }
  SUBCASE("collapsed encoder carries zero information") {
    DiscreteToyVae t = DiscreteToyVae::collapsed(5, 3, rng);
    ElboDecomposition d = brute_force_elbo_decomposition(t);
    CHECK(std::abs(d.i_q) < 1e-12);
    CHECK(std::abs(d.residual) < 1e-9);
    // -ELBO = -E log p(x|z) + H(x) - I_hat with I_q = 0
    CHECK(d.neg_elbo == doctest::Approx(-d.i_hat + d.h_x).epsilon(1e-9));
  }
  SUBCASE("Bayes decoder with matched prior closes the gap") {
    for (int i = 0; i < 20; ++i) {
      DiscreteToyVae t = DiscreteToyVae::bayes_decoder(4, 5, rng);
      ElboDecomposition d = brute_force_elbo_decomposition(t);
      CHECK(d.i_hat == doctest::Approx(d.i_q).epsilon(1e-9));
      CHECK(std::abs(d.residual) < 1e-9);
    }
  }
  SUBCASE("enumeration budget enforced") {
    DiscreteToyVae t;
    t.nx = 200;
    t.nz = 200;
    CHECK_THROWS_AS(brute_force_elbo_decomposition(t), std::invalid_argument);
  }
}

TEST_CASE("Monte-Carlo MI estimates converge to the exact values") {
  CounterRng rng(9, 9);
  DiscreteJoint j = DiscreteJoint::random_dirichlet(4, 2, 4, rng);
  double exact = mutual_info(j, Axis::X, Axis::Z);
  std::vector<double> pxz = j.marginal_xz();
  std::vector<double> px = j.marginal_x();
  std::vector<double> pz = j.marginal_z();
  // sample (x,z) from the joint; MC-average log p(x,z)/(p(x)p(z))
  const int n = 100000;
  std::vector<double> draws;
  draws.reserve(n);
  CounterRng srng(10, 10);
  // cumulative distribution over the 16 cells
  std::vector<double> cdf;
  double acc = 0;
  for (double v : pxz) {
    acc += v;
    cdf.push_back(acc);
  }
  for (int s = 0; s < n; ++s) {
    double u = srng.uniform();
    size_t cell = 0;
    while (cell + 1 < cdf.size() && cdf[cell] < u) ++cell;
    int x = static_cast<int>(cell) / 4, z = static_cast<int>(cell) % 4;
    draws.push_back(std::log(pxz[cell]) - std::log(px[static_cast<size_t>(x)]) - std::log(pz[static_cast<size_t>(z)]));
  }
  double mc = mean_of(draws), se = stderr_of(draws);
  CHECK(std::abs(mc - exact) < 3 * se + 1e-9);
}

TEST_CASE("theory verification harness") {
  TheoryReport rep = run_theory_verification(123, 500, 50, 100);
  CHECK(rep.ok());
  CHECK(rep.transitive_violations == 0);
  CHECK(rep.slack_min >= -1e-9);
  CHECK(rep.equality_max_abs_slack < 1e-9);
  CHECK(rep.residual_max < 1e-9);
  CHECK(rep.ba_gap_min >= -1e-9);
  CHECK(rep.ba_tight_max_abs_gap < 1e-12);
  CHECK(rep.text().find("all checks passed") != std::string::npos);
  CHECK(rep.csv().find("transitive,500,0") != std::string::npos);
}

TEST_CASE("lemma-2 divergence probe returns finite estimates with errors") {
  VaeModel::Spec s;
  s.variant = Variant::Semafo;
  s.pixels = 16;
  s.d_z = 3;
  s.factor_cards = {3};
  s.enc_h1 = 8;
  s.enc_h2 = 6;
  s.ctrl_h = 8;
  VaeModel m(s, 21);
  // a small labeled set of blocky images
  Dataset ds;
  ds.width = 4;
  ds.height = 4;
  ds.schema = {{{"c", 3}}};
  ds.has_labels = true;
  CounterRng rng(22, 1);
  for (int i = 0; i < 48; ++i) {
    for (int p = 0; p < 16; ++p) ds.images.push_back(static_cast<uint8_t>(rng.below(256)));
    ds.factor_values.push_back(static_cast<int32_t>(rng.below(3)));
  }
  Lemma2Probe probe = lemma2_condition_probe(m, ds, 7, 32, 16, 48);
  CHECK(probe.samples == 32);
  CHECK(std::isfinite(probe.kl_zy));
  CHECK(std::isfinite(probe.kl_xz));
  CHECK(probe.kl_zy_se > 0);
  CHECK(probe.kl_xz_se > 0);
  // KL estimates stay non-negative within two standard errors
  CHECK(probe.kl_zy > -2 * probe.kl_zy_se);
  CHECK(probe.kl_xz > -2 * probe.kl_xz_se);
}
