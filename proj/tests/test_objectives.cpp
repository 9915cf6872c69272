#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>

#include "semafo/adam.hpp"
#include "semafo/data.hpp"
#include "semafo/objectives.hpp"
#include "test_util.hpp"

using namespace semafo;
using namespace semafo::testing;

namespace {

VaeModel::Spec tiny_spec(Variant v, int pixels = 12, int d_z = 3) {
  VaeModel::Spec s;
  s.variant = v;
  s.pixels = pixels;
  s.d_z = d_z;
  s.d_z1 = 4;
  s.factor_cards = {4};
  s.enc_h1 = 8;
  s.enc_h2 = 6;
  s.ctrl_h = 16;
  return s;
}

void zero_params(VaeModel& m, std::initializer_list<const char*> names) {
  for (const char* n : names) {
    int idx = m.params().index_of(n);
    REQUIRE(idx >= 0);
    m.params().value(idx).fill(0.0);
  }
}

Array pixels01(int n, int p, uint64_t seed) {
  CounterRng rng(seed, 7);
  return random_array({n, p}, rng, 0.0, 1.0);
}

Array onehot_rows(int n, int k, uint64_t seed) {
  CounterRng rng(seed, 8);
  Array y = Array::zeros({n, k});
  for (int i = 0; i < n; ++i) y.set(i * k + static_cast<int64_t>(rng.below(k)), 1.0);
  return y;
}

struct GradDump {
  std::vector<std::string> names;
  std::vector<Array> grads;
};

GradDump grads_of(VaeModel& m, GraphBinding& bind) {
  GradDump d;
  for (size_t i = 0; i < m.params().size(); ++i) {
    const Array* g = bind.grad_of(static_cast<int>(i));
    if (g) {
      d.names.push_back(m.params().name(static_cast<int>(i)));
      d.grads.push_back(*g);
    }
  }
  return d;
}

}  // namespace

TEST_CASE("vanilla: collapsed posterior makes the loss the pure reconstruction term") {
  VaeModel m(tiny_spec(Variant::Vanilla), 3);
  zero_params(m, {"enc.mu.w", "enc.mu.b", "enc.logstd.w", "enc.logstd.b"});  // q == N(0, I)
  Graph g(Dtype::Float64);
  GraphBinding bind(g, m.params());
  CounterRng noise(1, 3);
  LossBreakdown lb = elbo_vanilla(m, bind, pixels01(8, 12, 2), noise);
  CHECK(lb.kl_z == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(lb.total == doctest::Approx(-lb.reconstruction).epsilon(1e-12));
  CHECK(lb.total == doctest::Approx(lb.recompose()).epsilon(1e-9));
}

TEST_CASE("vanilla: loss decreases over 200 overfit steps") {
  Dataset shapes = generate_synthetic_shapes(FactorSchema::synthetic_shapes(), 5, 64);
  VaeModel::Spec s = tiny_spec(Variant::Vanilla, shapes.pixels(), 4);
  s.enc_h1 = 32;
  s.enc_h2 = 16;
  VaeModel m(s, 6);
  std::vector<const Array*> ptrs;
  for (const auto& item : m.params().items()) ptrs.push_back(&item.value);
  AdamState adam(ptrs);
  AdamConfig acfg;
  acfg.lr = 1e-3;
  CounterRng noise(2, 3);
  std::vector<int64_t> all(64);
  std::iota(all.begin(), all.end(), 0);
  Array x = shapes.image_batch(all, Dtype::Float64);
  double first = 0, last = 0;
  for (int step = 0; step < 200; ++step) {
    Graph g(Dtype::Float64);
    GraphBinding bind(g, m.params());
    LossBreakdown lb = elbo_vanilla(m, bind, x, noise);
    if (step == 0) first = lb.total;
    last = lb.total;
    g.backward(lb.loss);
    std::vector<Array*> params;
    std::vector<const Array*> grads;
    for (size_t i = 0; i < m.params().size(); ++i) {
      params.push_back(&m.params().value(static_cast<int>(i)));
      grads.push_back(bind.grad_of(static_cast<int>(i)));
    }
    adam.step(params, grads, acfg);
  }
  CHECK(last < first);
}

TEST_CASE("beta-gamma reductions and scaling") {
  VaeModel m(tiny_spec(Variant::BetaGamma), 7);
  Array x = pixels01(6, 12, 3);
  SUBCASE("gamma=beta=1 equals vanilla bit for bit, gradients included") {
    Graph g1(Dtype::Float64), g2(Dtype::Float64);
    GraphBinding b1(g1, m.params()), b2(g2, m.params());
    CounterRng n1(9, 3), n2(9, 3);
    LossBreakdown v = elbo_vanilla(m, b1, x, n1);
    LossBreakdown bg = elbo_beta_gamma(m, b2, x, n2, 1.0, 1.0);
    CHECK(v.total == bg.total);
    g1.backward(v.loss);
    g2.backward(bg.loss);
    GradDump d1 = grads_of(m, b1), d2 = grads_of(m, b2);
    REQUIRE(d1.names == d2.names);
    for (size_t i = 0; i < d1.grads.size(); ++i) {
      INFO("param " << d1.names[i]);
      CHECK(arrays_equal_bits(d1.grads[i], d2.grads[i]));
    }
  }
  SUBCASE("coefficients scale the documented terms") {
    Graph g1(Dtype::Float64), g2(Dtype::Float64);
    GraphBinding b1(g1, m.params()), b2(g2, m.params());
    CounterRng n1(10, 3), n2(10, 3);
    LossBreakdown v = elbo_vanilla(m, b1, x, n1);
    LossBreakdown bg = elbo_beta_gamma(m, b2, x, n2, 10.0, 1.0);  // GammaVAE configuration
    CHECK(bg.total == doctest::Approx(1.0 * bg.kl_z - 10.0 * bg.reconstruction).epsilon(1e-9));
    CHECK(bg.reconstruction == doctest::Approx(v.reconstruction).epsilon(1e-12));
    LossBreakdown bv = elbo_beta_gamma(m, b2, x, n2, 1.0, 10.0);  // BetaVAE configuration
    CHECK(bv.total == doctest::Approx(10.0 * bv.kl_z - bv.reconstruction).epsilon(1e-9));
  }
  SUBCASE("nonpositive coefficients rejected") {
    Graph g(Dtype::Float64);
    GraphBinding b(g, m.params());
    CounterRng n(1, 1);
    CHECK_THROWS_AS(elbo_beta_gamma(m, b, x, n, 0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS(elbo_beta_gamma(m, b, x, n, 1.0, -2.0), std::invalid_argument);
  }
}

TEST_CASE("free-pixels reductions") {
  VaeModel::Spec s = tiny_spec(Variant::FreePixels, 784, 3);
  VaeModel m(s, 8);
  Array x = pixels01(4, 784, 4);
  SUBCASE("R=0 equals vanilla exactly, gradients bit-identical") {
    Graph g1(Dtype::Float64), g2(Dtype::Float64);
    GraphBinding b1(g1, m.params()), b2(g2, m.params());
    CounterRng n1(11, 3), n2(11, 3);
    LossBreakdown v = elbo_vanilla(m, b1, x, n1);
    LossBreakdown fp = elbo_free_pixels(m, b2, x, n2, 0.0);
    CHECK(v.total == fp.total);
    g1.backward(v.loss);
    g2.backward(fp.loss);
    GradDump d1 = grads_of(m, b1), d2 = grads_of(m, b2);
    REQUIRE(d1.names == d2.names);
    for (size_t i = 0; i < d1.grads.size(); ++i) CHECK(arrays_equal_bits(d1.grads[i], d2.grads[i]));
  }
  SUBCASE("R=0.1 over 784 pixels shifts the reconstruction term by exactly +78.4") {
    Graph g1(Dtype::Float64), g2(Dtype::Float64);
    GraphBinding b1(g1, m.params()), b2(g2, m.params());
    CounterRng n1(12, 3), n2(12, 3);
    LossBreakdown v = elbo_vanilla(m, b1, x, n1);
    LossBreakdown fp = elbo_free_pixels(m, b2, x, n2, 0.1);
    CHECK(fp.reconstruction - v.reconstruction == doctest::Approx(78.4).epsilon(1e-9));
    // gradients unchanged: the shift is constant
    g1.backward(v.loss);
    g2.backward(fp.loss);
    GradDump d1 = grads_of(m, b1), d2 = grads_of(m, b2);
    for (size_t i = 0; i < d1.grads.size(); ++i) CHECK(arrays_equal_bits(d1.grads[i], d2.grads[i]));
  }
  SUBCASE("negative R rejected") {
    Graph g(Dtype::Float64);
    GraphBinding b(g, m.params());
    CounterRng n(1, 1);
    CHECK_THROWS_AS(elbo_free_pixels(m, b, x, n, -0.5), std::invalid_argument);
  }
}

TEST_CASE("semafo unsupervised objective") {
  VaeModel m(tiny_spec(Variant::Semafo), 9);
  Array x = pixels01(16, 12, 5);
  SUBCASE("term structure: total recomposes from the components to 1e-9") {
    Graph g(Dtype::Float64);
    GraphBinding b(g, m.params());
    NoiseStreams ns{CounterRng(1, 3), CounterRng(1, 4), CounterRng(1, 5)};
    SemafoOpts opts;
    LossBreakdown lb = elbo_semafo_unsupervised(m, b, x, ns, opts);
    CHECK(lb.total == doctest::Approx(lb.recompose()).epsilon(1e-9));
    CHECK(lb.cls_coeff == -1.0);
    CHECK(lb.kl_z >= -1e-12);  // controller KL term is a Gaussian KL
  }
  SUBCASE("gamma weights the whole branch") {
    Graph g1(Dtype::Float64), g2(Dtype::Float64);
    GraphBinding b1(g1, m.params()), b2(g2, m.params());
    NoiseStreams n1{CounterRng(2, 3), CounterRng(2, 4), CounterRng(2, 5)};
    NoiseStreams n2{CounterRng(2, 3), CounterRng(2, 4), CounterRng(2, 5)};
    SemafoOpts o1;
    SemafoOpts o10;
    o10.weight = 10.0;
    LossBreakdown a = elbo_semafo_unsupervised(m, b1, x, n1, o1);
    LossBreakdown b_ = elbo_semafo_unsupervised(m, b2, x, n2, o10);
    CHECK(b_.total == doctest::Approx(10.0 * a.total).epsilon(1e-9));
    CHECK(b_.elbo() == doctest::Approx(a.elbo()).epsilon(1e-9));
  }
  SUBCASE("zero-weighted controller reproduces vanilla gradients on shared parameters") {
    VaeModel flat(tiny_spec(Variant::Vanilla), 77);
    // copy the semafo model's shared parameters into the vanilla twin
    for (size_t i = 0; i < flat.params().size(); ++i) {
      int src = m.params().index_of(flat.params().name(static_cast<int>(i)));
      REQUIRE(src >= 0);
      flat.params().value(static_cast<int>(i)) = m.params().value(src);
    }
    Graph g1(Dtype::Float64), g2(Dtype::Float64);
    GraphBinding b1(g1, m.params()), b2(g2, flat.params());
    NoiseStreams n1{CounterRng(3, 3), CounterRng(3, 4), CounterRng(3, 5)};
    CounterRng n2(3, 3);
    SemafoOpts opts;
    opts.use_controller = false;
    LossBreakdown a = elbo_semafo_unsupervised(m, b1, x, n1, opts);
    LossBreakdown v = elbo_vanilla(flat, b2, x, n2);
    CHECK(a.total == v.total);
    g1.backward(a.loss);
    g2.backward(v.loss);
    for (size_t i = 0; i < flat.params().size(); ++i) {
      int src = m.params().index_of(flat.params().name(static_cast<int>(i)));
      const Array* ga = b1.grad_of(src);
      const Array* gv = b2.grad_of(static_cast<int>(i));
      REQUIRE(ga != nullptr);
      REQUIRE(gv != nullptr);
      INFO("param " << flat.params().name(static_cast<int>(i)));
      CHECK(arrays_equal_bits(*ga, *gv));
    }
  }
}

TEST_CASE("semafo supervised objective") {
  VaeModel m(tiny_spec(Variant::Semafo), 10);
  Array x = pixels01(8, 12, 6);
  Array y = onehot_rows(8, 4, 6);
  SUBCASE("u comes from q(u|y) at the observed labels; breakdown recomposes") {
    Graph g(Dtype::Float64);
    GraphBinding b(g, m.params());
    NoiseStreams ns{CounterRng(4, 3), CounterRng(4, 4), CounterRng(4, 5)};
    SemafoOpts opts;
    LossBreakdown lb = elbo_semafo_supervised(m, b, x, y, ns, opts);
    CHECK(lb.supervised);
    CHECK(lb.cls_coeff == 10.0);
    CHECK(lb.total == doctest::Approx(lb.recompose()).epsilon(1e-9));
  }
  SUBCASE("alpha=0 removes the classifier gradient entirely") {
    Graph g(Dtype::Float64);
    GraphBinding b(g, m.params());
    NoiseStreams ns{CounterRng(5, 3), CounterRng(5, 4), CounterRng(5, 5)};
    SemafoOpts opts;
    opts.alpha = 0;
    LossBreakdown lb = elbo_semafo_supervised(m, b, x, y, ns, opts);
    g.backward(lb.loss);
    int cls_w = m.params().index_of("cls.w");
    CHECK(b.grad_of(cls_w) == nullptr);  // head never entered the graph
  }
  SUBCASE("batch mismatch rejected") {
    Graph g(Dtype::Float64);
    GraphBinding b(g, m.params());
    NoiseStreams ns{CounterRng(6, 3), CounterRng(6, 4), CounterRng(6, 5)};
    SemafoOpts opts;
    CHECK_THROWS_AS(elbo_semafo_supervised(m, b, x, onehot_rows(5, 4, 1), ns, opts), ShapeError);
  }
}

TEST_CASE("supervised overfit: classifier reaches accuracy 1.0 on 64 labeled examples") {
  // 64 rendered images labeled by their shape factor; the alpha-weighted
  // log q(y|z) term must drive the linear head to perfect train accuracy.
  Dataset shapes = generate_synthetic_shapes(FactorSchema::synthetic_shapes(), 6, 64);
  Dataset labeled = shapes;
  labeled.schema = {{{"shape", 3}}};
  labeled.factor_values.resize(64);
  for (int i = 0; i < 64; ++i) labeled.factor_values[static_cast<size_t>(i)] = shapes.factor_value(i, 0);

  VaeModel::Spec s = tiny_spec(Variant::Semafo, labeled.pixels(), 8);
  s.factor_cards = {3};
  s.enc_h1 = 48;
  s.enc_h2 = 24;
  s.ctrl_h = 16;
  VaeModel m(s, 11);
  std::vector<const Array*> ptrs;
  for (const auto& item : m.params().items()) ptrs.push_back(&item.value);
  AdamState adam(ptrs);
  AdamConfig acfg;
  acfg.lr = 2e-3;
  NoiseStreams ns{CounterRng(7, 3), CounterRng(7, 4), CounterRng(7, 5)};
  std::vector<int64_t> all(64);
  std::iota(all.begin(), all.end(), 0);
  Array x = labeled.image_batch(all, Dtype::Float64);
  Array y = labeled.onehot_batch(all, Dtype::Float64);
  SemafoOpts opts;
  opts.use_controller = false;  // pretraining-style supervised steps
  for (int step = 0; step < 2000; ++step) {
    Graph g(Dtype::Float64);
    GraphBinding bind(g, m.params());
    LossBreakdown lb = elbo_semafo_supervised(m, bind, x, y, ns, opts);
    g.backward(lb.loss);
    std::vector<Array*> params;
    std::vector<const Array*> grads;
    for (size_t i = 0; i < m.params().size(); ++i) {
      params.push_back(&m.params().value(static_cast<int>(i)));
      grads.push_back(bind.grad_of(static_cast<int>(i)));
    }
    adam.step(params, grads, acfg);
  }
  Graph g(Dtype::Float64);
  GraphBinding bind(g, m.params());
  DiagGaussian q = m.encode(bind, g.constant(x));
  const Array& probs = m.classify(bind, q.mean).probs().value();
  int correct = 0;
  for (int i = 0; i < 64; ++i) {
    int arg = 0;
    for (int c = 1; c < 3; ++c)
      if (probs.at(i * 3 + c) > probs.at(i * 3 + arg)) arg = c;
    if (arg == labeled.factor_value(i, 0)) ++correct;
  }
  CHECK(correct == 64);
}

TEST_CASE("hierarchical objectives") {
  SUBCASE("plain hvae: degenerate z1 reduces to the z0 bound") {
    VaeModel::Spec s = tiny_spec(Variant::Hvae, 12, 3);
    VaeModel m(s, 12);
    zero_params(m, {"enc.z1_mu.w", "enc.z1_mu.b", "enc.z1_logstd.w", "enc.z1_logstd.b", "prior.z1_trunk.0.w",
                    "prior.z1_trunk.0.b", "prior.z1_mu.w", "prior.z1_mu.b", "prior.z1_logstd.w",
                    "prior.z1_logstd.b"});
    Graph g(Dtype::Float64);
    GraphBinding b(g, m.params());
    CounterRng noise(8, 3);
    LossBreakdown lb = elbo_hvae(m, b, pixels01(8, 12, 7), noise);
    CHECK(lb.kl_z1 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lb.total == doctest::Approx(lb.kl_z0 - lb.reconstruction).epsilon(1e-9));
  }
  SUBCASE("semafo-hvae: components non-negative and recompose; degenerate z1 collapses to single-layer form") {
    VaeModel::Spec s = tiny_spec(Variant::SemafoHvae, 12, 3);
    VaeModel m(s, 13);
    Array x = pixels01(8, 12, 8);
    {
      Graph g(Dtype::Float64);
      GraphBinding b(g, m.params());
      NoiseStreams ns{CounterRng(9, 3), CounterRng(9, 4), CounterRng(9, 5)};
      SemafoOpts opts;
      LossBreakdown lb = elbo_semafo_hvae_unsupervised(m, b, x, ns, opts);
      CHECK(lb.kl_z0 >= -1e-12);
      CHECK(lb.kl_z1 >= -1e-12);
      CHECK(lb.total == doctest::Approx(lb.recompose()).epsilon(1e-9));
      Graph g2(Dtype::Float64);
      GraphBinding b2(g2, m.params());
      NoiseStreams ns2{CounterRng(9, 6), CounterRng(9, 7), CounterRng(9, 8)};
      LossBreakdown sup = elbo_semafo_hvae_supervised(m, b2, x, onehot_rows(8, 4, 9), ns2, opts);
      CHECK(sup.total == doctest::Approx(sup.recompose()).epsilon(1e-9));
    }
    // degenerate upper layer: q(z1|x) = p(z1|z0,u) = N(0,I)
    VaeModel md(s, 13);
    zero_params(md, {"enc.z1_mu.w", "enc.z1_mu.b", "enc.z1_logstd.w", "enc.z1_logstd.b", "prior.z1_trunk.0.w",
                     "prior.z1_trunk.0.b", "prior.z1_mu.w", "prior.z1_mu.b", "prior.z1_logstd.w",
                     "prior.z1_logstd.b"});
    Graph g(Dtype::Float64);
    GraphBinding b(g, md.params());
    NoiseStreams ns{CounterRng(10, 3), CounterRng(10, 4), CounterRng(10, 5)};
    SemafoOpts opts;
    LossBreakdown lb = elbo_semafo_hvae_unsupervised(m.variant() == Variant::SemafoHvae ? md : md, b, x, ns, opts);
    CHECK(lb.kl_z1 == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(lb.total ==
          doctest::Approx(-(lb.reconstruction - lb.kl_z0 + lb.controller_elbo - lb.classifier_term)).epsilon(1e-9));
  }
  SUBCASE("finite differences on a 4-pixel toy input through the full semafo-hvae objective") {
    VaeModel::Spec s = tiny_spec(Variant::SemafoHvae, 4, 2);
    s.d_z1 = 2;
    s.ctrl_h = 8;
    VaeModel m(s, 14);
    CounterRng prng(11, 7);
    Array x = random_array({2, 4}, prng, 0.0, 1.0);
    std::vector<Array> leaves;
    for (const auto& item : m.params().items()) leaves.push_back(item.value);
    FdReport rep = check_gradients(leaves, [&m, &x](Graph& g, std::vector<Tensor>& ts) {
      GraphBinding bind(g, m.params(), ts);
      NoiseStreams ns{CounterRng(12, 3), CounterRng(12, 4), CounterRng(12, 5)};
      SemafoOpts opts;
      VaeModel& mm = const_cast<VaeModel&>(m);
      LossBreakdown lb = elbo_semafo_hvae_unsupervised(mm, bind, x, ns, opts);
      return lb.loss;
    });
    CHECK(rep.max_rel_err < 1e-4);
    CHECK(rep.points > 100);
  }
  SUBCASE("variant mismatch rejected") {
    VaeModel flat(tiny_spec(Variant::Vanilla), 1);
    Graph g(Dtype::Float64);
    GraphBinding b(g, flat.params());
    NoiseStreams ns{CounterRng(1, 1), CounterRng(1, 2), CounterRng(1, 3)};
    SemafoOpts opts;
    CHECK_THROWS_AS(elbo_semafo_hvae_unsupervised(flat, b, pixels01(2, 12, 1), ns, opts), GraphError);
  }
}

TEST_CASE("beta monotonicity: KL at convergence is non-increasing in beta") {
  // 64-image overfit set, betas {1, 2}, 3 seeds; one violation allowed.
  Dataset shapes = generate_synthetic_shapes(FactorSchema::synthetic_shapes(), 15, 64);
  std::vector<int64_t> all(64);
  std::iota(all.begin(), all.end(), 0);
  Array x = shapes.image_batch(all, Dtype::Float64);
  auto kl_at_convergence = [&](double beta, uint64_t seed) {
    VaeModel::Spec s = tiny_spec(Variant::BetaGamma, shapes.pixels(), 4);
    s.enc_h1 = 32;
    s.enc_h2 = 16;
    VaeModel m(s, seed);
    std::vector<const Array*> ptrs;
    for (const auto& item : m.params().items()) ptrs.push_back(&item.value);
    AdamState adam(ptrs);
    AdamConfig acfg;
    acfg.lr = 2e-3;
    CounterRng noise(seed, 3);
    double kl_tail = 0;
    const int steps = 400, tail = 50;
    for (int step = 0; step < steps; ++step) {
      Graph g(Dtype::Float64);
      GraphBinding bind(g, m.params());
      LossBreakdown lb = elbo_beta_gamma(m, bind, x, noise, 1.0, beta);
      if (step >= steps - tail) kl_tail += lb.kl_z;
      g.backward(lb.loss);
      std::vector<Array*> params;
      std::vector<const Array*> grads;
      for (size_t i = 0; i < m.params().size(); ++i) {
        params.push_back(&m.params().value(static_cast<int>(i)));
        grads.push_back(bind.grad_of(static_cast<int>(i)));
      }
      adam.step(params, grads, acfg);
    }
    return kl_tail / tail;
  };
  int violations = 0;
  for (uint64_t seed : {21, 22, 23}) {
    double kl1 = kl_at_convergence(1.0, seed);
    double kl2 = kl_at_convergence(2.0, seed);
    INFO("seed " << seed << ": kl(beta=1) " << kl1 << " kl(beta=2) " << kl2);
    if (kl2 > kl1) ++violations;
  }
  CHECK(violations <= 1);
}
