#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "semafo/distributions.hpp"
#include "test_util.hpp"

using namespace semafo;
using namespace semafo::testing;

namespace {

DiagGaussian make_gaussian(Graph& g, const std::vector<double>& mu, const std::vector<double>& log_std,
                           bool requires_grad = false) {
  int64_t d = static_cast<int64_t>(mu.size());
  return {g.leaf(Array::from({1, d}, mu), requires_grad), g.leaf(Array::from({1, d}, log_std), requires_grad)};
}

}  // namespace

TEST_CASE("gaussian_kl closed-form examples") {
  Graph g(Dtype::Float64);
  SUBCASE("identical distributions give zero") {
    DiagGaussian q = make_gaussian(g, {0, 0, 0}, {0, 0, 0});
    DiagGaussian p = make_gaussian(g, {0, 0, 0}, {0, 0, 0});
    CHECK(gaussian_kl(q, p).value().at(0) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("unit mean shift costs half a nat") {
    DiagGaussian q = make_gaussian(g, {1}, {0});
    DiagGaussian p = make_gaussian(g, {0}, {0});
    CHECK(gaussian_kl(q, p).value().at(0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(gaussian_kl_to_std(q).value().at(0) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("shape mismatch rejected") {
    DiagGaussian q = make_gaussian(g, {0, 0}, {0, 0});
    DiagGaussian p = make_gaussian(g, {0}, {0});
    CHECK_THROWS_AS(gaussian_kl(q, p), ShapeError);
  }
}

TEST_CASE("gaussian KL matches Monte-Carlo on random parameterizations") {
  CounterRng rng(5, 1);
  CounterRng noise(6, 2);
  const int n_params = 100;
  const int n_samples = 100000;
  for (int t = 0; t < n_params; ++t) {
    double mq = 2 * (rng.uniform() - 0.5), lq = rng.uniform() - 0.5;
    double mp = 2 * (rng.uniform() - 0.5), lp = rng.uniform() - 0.5;
    Graph g(Dtype::Float64);
    DiagGaussian q = make_gaussian(g, {mq}, {lq});
    DiagGaussian p = make_gaussian(g, {mp}, {lp});
    double closed = gaussian_kl(q, p).value().at(0);
    // MC: E_q[log q - log p]
    double sq = std::exp(lq), sp = std::exp(lp);
    std::vector<double> draws;
    draws.reserve(n_samples);
    for (int s = 0; s < n_samples; ++s) {
      double z = mq + sq * noise.normal();
      double lq_z = -0.5 * (z - mq) * (z - mq) / (sq * sq) - lq;
      double lp_z = -0.5 * (z - mp) * (z - mp) / (sp * sp) - lp;
      draws.push_back(lq_z - lp_z);
    }
    double mc = mean_of(draws), se = stderr_of(draws);
    INFO("param set " << t << ": closed " << closed << " mc " << mc << " se " << se);
    CHECK(std::abs(closed - mc) < 3 * se + 1e-9);
  }
}

TEST_CASE("gaussian_rsample") {
  SUBCASE("zero sigma returns the mean exactly") {
    Graph g(Dtype::Float64);
    DiagGaussian d = make_gaussian(g, {1.5, -2.0}, {-1e9, -1e9});
    CounterRng rng(1, 3);
    Tensor s = gaussian_rsample(d, rng);
    CHECK(s.value().at(0) == 1.5);
    CHECK(s.value().at(1) == -2.0);
  }
  SUBCASE("empirical mean within 3 SE") {
    Graph g(Dtype::Float64);
    const int n = 100000;
    DiagGaussian d = {g.constant(Array::full({n, 1}, 0.7)), g.constant(Array::full({n, 1}, 0.3))};
    CounterRng rng(2, 3);
    Tensor s = gaussian_rsample(d, rng);
    std::vector<double> v = s.value().to_f64_vector();
    double se = std::exp(0.3) / std::sqrt(static_cast<double>(n));
    CHECK(std::abs(mean_of(v) - 0.7) < 3 * se);
  }
  SUBCASE("gradient of sample w.r.t. mean is the identity") {
    Graph g(Dtype::Float64);
    DiagGaussian d = make_gaussian(g, {0.4, 0.6}, {0.1, -0.2}, true);
    CounterRng rng(3, 3);
    Tensor s = gaussian_rsample(d, rng);
    g.backward(sum_all(s));
    CHECK(d.mean.grad().at(0) == 1.0);
    CHECK(d.mean.grad().at(1) == 1.0);
  }
}

TEST_CASE("bernoulli_logprob") {
  SUBCASE("zero logits cost ln 2 per pixel regardless of target") {
    Graph g(Dtype::Float64);
    const int pixels = 784;
    BernoulliImage d{g.constant(Array::zeros({1, pixels}))};
    CounterRng rng(4, 4);
    Tensor x = g.constant(random_array({1, pixels}, rng, 0.0, 1.0));
    CHECK(bernoulli_logprob(d, x).value().at(0) ==
          doctest::Approx(-std::log(2.0) * pixels).epsilon(1e-12));
  }
  SUBCASE("extreme logits stay finite and tight") {
    Graph g(Dtype::Float64);
    BernoulliImage d{g.constant(Array::from({1, 2}, {40.0, -40.0}))};
    Tensor x = g.constant(Array::from({1, 2}, {1.0, 1.0}));
    double lp = bernoulli_logprob(d, x).value().at(0);
    // first pixel ~ 0, second ~ -40
    CHECK(lp == doctest::Approx(-40.0).epsilon(1e-9));
    CHECK(std::isfinite(lp));
  }
  SUBCASE("target outside [0,1] rejected") {
    Graph g(Dtype::Float64);
    BernoulliImage d{g.constant(Array::zeros({1, 2}))};
    Tensor x = g.constant(Array::from({1, 2}, {0.5, 1.5}));
    CHECK_THROWS_AS(bernoulli_logprob(d, x), std::invalid_argument);
  }
  SUBCASE("finite for logits across [-80, 80]") {
    Graph g(Dtype::Float64);
    std::vector<double> logits, targets;
    for (int i = 0; i <= 160; ++i) {
      logits.push_back(-80.0 + i);
      targets.push_back((i % 2) ? 1.0 : 0.0);
    }
    BernoulliImage d{g.constant(Array::from({1, 161}, logits))};
    Tensor x = g.constant(Array::from({1, 161}, targets));
    CHECK(std::isfinite(bernoulli_logprob(d, x).value().at(0)));
  }
  SUBCASE("matches Monte-Carlo estimate of the Bernoulli mass") {
    // E over random targets of exp(logprob) telescopes; cheaper: compare the
    // closed form against direct p^x (1-p)^(1-x) on a grid
    Graph g(Dtype::Float64);
    for (double logit : {-3.0, -0.5, 0.0, 1.2, 4.0}) {
      for (double x : {0.0, 0.25, 1.0}) {
        BernoulliImage d{g.constant(Array::from({1, 1}, {logit}))};
        Tensor xt = g.constant(Array::from({1, 1}, {x}));
        double p = 1.0 / (1.0 + std::exp(-logit));
        double direct = x * std::log(p) + (1 - x) * std::log(1 - p);
        CHECK(bernoulli_logprob(d, xt).value().at(0) == doctest::Approx(direct).epsilon(1e-10));
      }
    }
  }
}

TEST_CASE("gumbel_softmax_sample") {
  SUBCASE("temperature must be positive") {
    Graph g(Dtype::Float64);
    RelaxedCategorical d{g.constant(Array::zeros({1, 3})), 0.0};
    CounterRng rng(5, 5);
    CHECK_THROWS_AS(gumbel_softmax_sample(d, rng), std::invalid_argument);
  }
  SUBCASE("samples lie on the simplex") {
    Graph g(Dtype::Float64);
    CounterRng prng(6, 5), rng(7, 5);
    RelaxedCategorical d{g.constant(random_array({64, 5}, prng, -3, 3)), 0.7};
    Tensor s = gumbel_softmax_sample(d, rng);
    const Array& v = s.value();
    for (int64_t r = 0; r < 64; ++r) {
      double sum = 0;
      for (int64_t c = 0; c < 5; ++c) {
        CHECK(v.at(r * 5 + c) >= 0.0);
        sum += v.at(r * 5 + c);
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
  SUBCASE("low temperature with peaked logits is near one-hot") {
    Graph g(Dtype::Float64);
    RelaxedCategorical d{g.constant(Array::from({1, 3}, {10.0, 0.0, 0.0})), 0.01};
    CounterRng rng(8, 5);
    Tensor s = gumbel_softmax_sample(d, rng);
    CHECK(s.value().at(0) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(s.value().at(1) == doctest::Approx(0.0).epsilon(1e-3));
  }
  SUBCASE("uniform logits give uniform argmax frequencies") {
    const int k = 4, n = 100000;
    Graph g(Dtype::Float64);
    RelaxedCategorical d{g.constant(Array::zeros({n, k})), 1.0};
    CounterRng rng(9, 5);
    Tensor s = gumbel_softmax_sample(d, rng);
    const Array& v = s.value();
    std::vector<int> counts(k, 0);
    for (int r = 0; r < n; ++r) {
      int arg = 0;
      for (int c = 1; c < k; ++c)
        if (v.at(static_cast<int64_t>(r) * k + c) > v.at(static_cast<int64_t>(r) * k + arg)) arg = c;
      ++counts[static_cast<size_t>(arg)];
    }
    double expect = static_cast<double>(n) / k;
    double se = std::sqrt(static_cast<double>(n) * (1.0 / k) * (1.0 - 1.0 / k));
    for (int c = 0; c < k; ++c) CHECK(std::abs(counts[static_cast<size_t>(c)] - expect) < 3 * se);
  }
}

TEST_CASE("categorical_kl_to_uniform") {
  Graph g(Dtype::Float64);
  SUBCASE("uniform logits give zero") {
    RelaxedCategorical d{g.constant(Array::full({1, 7}, 1.3)), 0.5};
    CHECK(categorical_kl_to_uniform(d).value().at(0) == doctest::Approx(0.0).epsilon(1e-12));
  }
  SUBCASE("near-one-hot approaches ln k") {
    RelaxedCategorical d{g.constant(Array::from({1, 10}, {60, 0, 0, 0, 0, 0, 0, 0, 0, 0})), 0.5};
    CHECK(categorical_kl_to_uniform(d).value().at(0) == doctest::Approx(std::log(10.0)).epsilon(1e-6));
  }
  SUBCASE("non-negative on random logits") {
    CounterRng rng(10, 6);
    const int n = 10000;
    RelaxedCategorical d{g.constant(random_array({n, 6}, rng, -8, 8)), 0.5};
    const Array& v = categorical_kl_to_uniform(d).value();
    double mn = 1e300;
    for (int64_t i = 0; i < n; ++i) mn = std::min(mn, v.at(i));
    CHECK(mn >= -1e-12);
  }
}

TEST_CASE("factorized label blocks") {
  Graph g(Dtype::Float64);
  CounterRng prng(11, 7);
  std::vector<int> cards = {3, 4, 2};
  Tensor logits = g.constant(random_array({5, 9}, prng, -2, 2));
  FactorizedLabel fl = FactorizedLabel::from_logits(logits, cards, 0.5);
  CHECK(fl.total_dim() == 9);
  SUBCASE("samples are per-block simplex points") {
    CounterRng rng(12, 7);
    Tensor s = fl.sample(rng);
    CHECK(s.shape() == Shape{5, 9});
    const Array& v = s.value();
    for (int64_t r = 0; r < 5; ++r) {
      int off = 0;
      for (int k : cards) {
        double sum = 0;
        for (int c = 0; c < k; ++c) sum += v.at(r * 9 + off + c);
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
        off += k;
      }
    }
  }
  SUBCASE("log_prob adds across blocks") {
    CounterRng rng(13, 7);
    Tensor s = fl.sample(rng);
    double total = fl.log_prob(s).value().at(0);
    double manual = 0;
    int64_t off = 0;
    for (size_t b = 0; b < cards.size(); ++b) {
      Tensor part = slice(s, {0, off}, {5, cards[b]});
      manual += categorical_logprob(fl.blocks[b], part).value().at(0);
      off += cards[b];
    }
    CHECK(total == doctest::Approx(manual).epsilon(1e-12));
  }
  SUBCASE("row validation") {
    Array good = Array::zeros({1, 9});
    good.set(0, 1.0);
    good.set(3, 1.0);
    good.set(7, 1.0);
    CHECK_NOTHROW(validate_factor_rows(good, cards));
    Array bad = good;
    bad.set(3, 0.4);
    CHECK_THROWS_AS(validate_factor_rows(bad, cards), std::invalid_argument);
  }
}

TEST_CASE("reparameterized gradient matches finite difference of the expectation") {
  // d/dmu E[f(z)] for f(z) = z^2 with z ~ N(mu, sigma^2): exact 2*mu.
  // Estimate both sides with a common-random-number MC, loose 5% tolerance.
  const int n = 1000000;
  const double mu = 0.7, log_sigma = -0.4;
  Graph g(Dtype::Float64);
  DiagGaussian d = {g.leaf(Array::full({n, 1}, mu), true), g.leaf(Array::full({n, 1}, log_sigma), true)};
  CounterRng rng(21, 8);
  Tensor z = gaussian_rsample(d, rng);
  Tensor loss = mean_all(square(z));
  g.backward(loss);
  double grad_mu = 0, grad_ls = 0;
  for (int64_t i = 0; i < n; ++i) {
    grad_mu += d.mean.grad().at(i);
    grad_ls += d.log_std.grad().at(i);
  }
  // analytic: dE/dmu = 2 mu; dE/dlog_sigma = 2 sigma^2
  double sigma2 = std::exp(2 * log_sigma);
  CHECK(grad_mu == doctest::Approx(2 * mu).epsilon(0.05));
  CHECK(grad_ls == doctest::Approx(2 * sigma2).epsilon(0.05));
}

TEST_CASE("clamped gaussian head keeps log-std in range") {
  Graph g(Dtype::Float64);
  Tensor raw = g.constant(Array::from({1, 3}, {-30.0, 0.5, 42.0}));
  DiagGaussian d = clamped_gaussian(g.constant(Array::zeros({1, 3})), raw);
  CHECK(d.log_std.value().at(0) == -7.0);
  CHECK(d.log_std.value().at(1) == 0.5);
  CHECK(d.log_std.value().at(2) == 7.0);
}
