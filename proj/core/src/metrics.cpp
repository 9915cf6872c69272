#include "semafo/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "semafo/adam.hpp"
#include "semafo/objectives.hpp"

namespace semafo {

namespace {

constexpr int64_t kChunk = 256;

std::vector<int64_t> range_idx(int64_t at, int64_t n) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  std::iota(idx.begin(), idx.end(), at);
  return idx;
}

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

Mat to_eigen(const Array& a) {
  Mat m(a.dim(0), a.dim(1));
  for (int64_t i = 0; i < a.dim(0); ++i)
    for (int64_t j = 0; j < a.dim(1); ++j) m(i, j) = a.at(i * a.dim(1) + j);
  return m;
}

// Full unsupervised chain for one batch, variant-dispatched; returns the
// posterior/prior parameter arrays needed by the per-unit census.
struct ChainOut {
  Array q0_mu, q0_ls;        // q(z|x) or q(z0|z1,x)
  Array p0_mu, p0_ls;        // matching prior parameters
  Array q1_mu, q1_ls;        // hierarchical only
  Array p1_mu, p1_ls;
  bool hier = false;
};

ChainOut run_chain(const VaeModel& model, GraphBinding& bind, Tensor x, CounterRng& noise, CounterRng& gumbel,
                   CounterRng& ctrl) {
  ChainOut out;
  Graph& g = bind.graph();
  int64_t batch = x.shape()[0];
  if (!model.is_hierarchical()) {
    DiagGaussian q = model.encode(bind, x);
    Tensor z = gaussian_rsample(q, noise);
    out.q0_mu = q.mean.value();
    out.q0_ls = q.log_std.value();
    if (model.is_semafo()) {
      FactorizedLabel y_post = model.classify(bind, z);
      Tensor y = y_post.sample(gumbel);
      VaeModel::ControllerForward cf = model.controller_forward(bind, y, ctrl);
      out.p0_mu = cf.p_z_given_u.mean.value();
      out.p0_ls = cf.p_z_given_u.log_std.value();
    } else {
      out.p0_mu = Array::zeros({batch, model.spec().d_z}, g.dtype());
      out.p0_ls = Array::zeros({batch, model.spec().d_z}, g.dtype());
    }
    return out;
  }
  out.hier = true;
  VaeModel::HierPosterior hp = model.hier_encode(bind, x, noise);
  out.q0_mu = hp.q_z0.mean.value();
  out.q0_ls = hp.q_z0.log_std.value();
  out.q1_mu = hp.q_z1.mean.value();
  out.q1_ls = hp.q_z1.log_std.value();
  std::optional<Tensor> u;
  if (model.is_semafo()) {
    FactorizedLabel y_post = model.classify(bind, concat({hp.z0, hp.z1}, 1));
    Tensor y = y_post.sample(gumbel);
    VaeModel::ControllerForward cf = model.controller_forward(bind, y, ctrl);
    u = cf.u;
  }
  DiagGaussian p0 = model.prior_z0(bind, batch, u);
  DiagGaussian p1 = model.hier_prior_z1(bind, hp.z0, u);
  out.p0_mu = p0.mean.value();
  out.p0_ls = p0.log_std.value();
  out.p1_mu = p1.mean.value();
  out.p1_ls = p1.log_std.value();
  return out;
}

double unit_kl_elem(double qm, double qls, double pm, double pls) {
  double vq = std::exp(2 * qls), vp = std::exp(2 * pls);
  return pls - qls + (vq + (qm - pm) * (qm - pm)) / (2 * vp) - 0.5;
}

}  // namespace

double test_reconstruction_ll(const VaeModel& model, const Dataset& testset, uint64_t seed) {
  VaeModel m = model;
  CounterRng noise(seed, rng_stream::kEval);
  int64_t n = testset.size();
  double total = 0;
  for (int64_t at = 0; at < n; at += kChunk) {
    int64_t b = std::min(kChunk, n - at);
    Graph g(Dtype::Float64);
    GraphBinding bind(g, m.params());
    Tensor x = g.constant(testset.image_batch(range_idx(at, b), Dtype::Float64));
    Tensor recon;
    if (m.is_hierarchical()) {
      VaeModel::HierPosterior hp = m.hier_encode(bind, x, noise);
      recon = bernoulli_logprob(m.hier_decode(bind, hp.z0, hp.z1), x);
    } else {
      DiagGaussian q = m.encode(bind, x);
      Tensor z = gaussian_rsample(q, noise);
      recon = bernoulli_logprob(m.decode(bind, z), x);
    }
    total += sum_all(recon).item();
  }
  return total / static_cast<double>(n);
}

IwaeReport marginal_ll_iwae(const VaeModel& model, const Dataset& testset, int k, uint64_t seed) {
  if (k < 1) throw std::invalid_argument("marginal_ll_iwae: k must be >= 1");
  VaeModel m = model;
  CounterRng noise(seed, rng_stream::kEval);
  int64_t n = testset.size();
  IwaeReport rep;
  double total = 0;
  const int64_t chunk = 128;
  for (int64_t at = 0; at < n; at += chunk) {
    int64_t b = std::min(chunk, n - at);
    Graph g(Dtype::Float64);
    GraphBinding bind(g, m.params());
    Tensor x = g.constant(testset.image_batch(range_idx(at, b), Dtype::Float64));
    // log-weights [b][k]
    std::vector<std::vector<double>> lw(static_cast<size_t>(b), std::vector<double>(static_cast<size_t>(k)));
    if (m.is_hierarchical()) {
      Tensor f_unused = x;  // posterior networks rerun per sample draw below
      for (int s = 0; s < k; ++s) {
        VaeModel::HierPosterior hp = m.hier_encode(bind, x, noise);
        Tensor recon = bernoulli_logprob(m.hier_decode(bind, hp.z0, hp.z1), x);
        Tensor lp0 = gaussian_logprob(std_normal_like(g, hp.z0.shape()), hp.z0);
        Tensor lp1 = gaussian_logprob(m.hier_prior_z1(bind, hp.z0, std::nullopt), hp.z1);
        Tensor lq0 = gaussian_logprob(hp.q_z0, hp.z0);
        Tensor lq1 = gaussian_logprob(hp.q_z1, hp.z1);
        Tensor w = recon + lp0 + lp1 - lq0 - lq1;
        const Array& wv = w.value();
        for (int64_t i = 0; i < b; ++i) lw[static_cast<size_t>(i)][static_cast<size_t>(s)] = wv.at(i);
      }
    } else {
      DiagGaussian q = m.encode(bind, x);
      DiagGaussian prior = std_normal_like(g, q.mean.shape());
      for (int s = 0; s < k; ++s) {
        Tensor z = gaussian_rsample(q, noise);
        Tensor recon = bernoulli_logprob(m.decode(bind, z), x);
        Tensor w = recon + gaussian_logprob(prior, z) - gaussian_logprob(q, z);
        const Array& wv = w.value();
        for (int64_t i = 0; i < b; ++i) lw[static_cast<size_t>(i)][static_cast<size_t>(s)] = wv.at(i);
      }
    }
    double batch_sum = 0;
    for (int64_t i = 0; i < b; ++i) {
      const auto& row = lw[static_cast<size_t>(i)];
      double mx = *std::max_element(row.begin(), row.end());
      double s = 0;
      for (double v : row) s += std::exp(v - mx);
      batch_sum += mx + std::log(s / static_cast<double>(k));
    }
    rep.batch_means.push_back(batch_sum / static_cast<double>(b));
    total += batch_sum;
  }
  rep.nats_per_example = total / static_cast<double>(n);
  return rep;
}

std::string ActiveUnitReport::csv() const {
  std::ostringstream os;
  os << "unit,mean_kl,weight_norm,active\n";
  for (size_t j = 0; j < unit_kl.size(); ++j)
    os << j << "," << unit_kl[j] << "," << (j < weight_norms.size() ? weight_norms[j] : 0.0) << ","
       << (unit_kl[j] > threshold ? 1 : 0) << "\n";
  return os.str();
}

ActiveUnitReport active_units(const VaeModel& model, const Dataset& testset, double threshold, uint64_t seed) {
  VaeModel m = model;
  CounterRng noise(seed, rng_stream::kEval);
  CounterRng gumbel(seed, rng_stream::kEval + 100);
  CounterRng ctrl(seed, rng_stream::kEval + 200);
  int64_t n = testset.size();
  int d0 = m.spec().d_z;
  int d1 = m.is_hierarchical() ? m.spec().d_z1 : 0;
  std::vector<double> acc(static_cast<size_t>(d0 + d1), 0.0);
  for (int64_t at = 0; at < n; at += kChunk) {
    int64_t b = std::min(kChunk, n - at);
    Graph g(Dtype::Float64);
    GraphBinding bind(g, m.params());
    Tensor x = g.constant(testset.image_batch(range_idx(at, b), Dtype::Float64));
    ChainOut ch = run_chain(m, bind, x, noise, gumbel, ctrl);
    for (int64_t i = 0; i < b; ++i) {
      for (int j = 0; j < d0; ++j)
        acc[static_cast<size_t>(j)] += unit_kl_elem(ch.q0_mu.at(i * d0 + j), ch.q0_ls.at(i * d0 + j),
                                                    ch.p0_mu.at(i * d0 + j), ch.p0_ls.at(i * d0 + j));
      for (int j = 0; j < d1; ++j)
        acc[static_cast<size_t>(d0 + j)] += unit_kl_elem(ch.q1_mu.at(i * d1 + j), ch.q1_ls.at(i * d1 + j),
                                                         ch.p1_mu.at(i * d1 + j), ch.p1_ls.at(i * d1 + j));
    }
  }
  ActiveUnitReport rep;
  rep.threshold = threshold;
  rep.unit_kl.resize(acc.size());
  for (size_t j = 0; j < acc.size(); ++j) rep.unit_kl[j] = acc[j] / static_cast<double>(n);
  rep.weight_norms = m.decoder_unit_weight_norms();
  rep.active_count = 0;
  for (double v : rep.unit_kl)
    if (v > threshold) ++rep.active_count;
  return rep;
}

// ---- Frechet ----

FeatureExtractor raw_pixel_features() {
  return [](const Array& images) { return images; };
}

double frechet_from_features(const Array& fa, const Array& fb) {
  if (fa.rank() != 2 || fb.rank() != 2 || fa.dim(1) != fb.dim(1))
    throw std::invalid_argument("frechet: feature matrices must be [n,d] with matching d");
  int64_t d = fa.dim(1);
  if (fa.dim(0) < 2 * d || fb.dim(0) < 2 * d)
    throw std::invalid_argument("frechet: need at least 2*d=" + std::to_string(2 * d) + " samples per side, got " +
                                std::to_string(fa.dim(0)) + " and " + std::to_string(fb.dim(0)));
  Mat A = to_eigen(fa), B = to_eigen(fb);
  Vec mu_a = A.colwise().mean(), mu_b = B.colwise().mean();
  Mat Ac = A.rowwise() - mu_a.transpose(), Bc = B.rowwise() - mu_b.transpose();
  Mat Sa = (Ac.transpose() * Ac) / static_cast<double>(A.rows() - 1);
  Mat Sb = (Bc.transpose() * Bc) / static_cast<double>(B.rows() - 1);
  Mat P = Sa * Sb;
  Mat S = 0.5 * (P + P.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> eig(S);
  if (eig.info() != Eigen::Success) {
    double cn = S.norm() > 0 ? S.operatorNorm() / std::max(1e-300, S.cwiseAbs().minCoeff()) : 0;
    throw std::runtime_error("frechet: eigendecomposition of the symmetrized product failed (condition ~" +
                             std::to_string(cn) + ")");
  }
  double tr_sqrt = 0;
  for (int i = 0; i < eig.eigenvalues().size(); ++i) tr_sqrt += std::sqrt(std::max(0.0, eig.eigenvalues()[i]));
  double dmu = (mu_a - mu_b).squaredNorm();
  return dmu + Sa.trace() + Sb.trace() - 2.0 * tr_sqrt;
}

double frechet_distance(const Array& images_a, const Array& images_b, const FeatureExtractor& extractor) {
  return frechet_from_features(extractor(images_a), extractor(images_b));
}

// ---- DCI ----

namespace {

// L1-regularized multinomial logistic probe: Adam on NLL + lambda*|W| with a
// final hard threshold. Deterministic full-batch training.
struct ProbeFit {
  Mat W;  // [d+1, k], last row is the bias
  double holdout_accuracy = 0;
};

ProbeFit fit_l1_logistic(const Mat& X, const std::vector<int32_t>& y, int k, const std::vector<int64_t>& train,
                         const std::vector<int64_t>& hold, double lambda, int iterations, double lr) {
  int64_t d = X.cols();
  Mat Xt(static_cast<int64_t>(train.size()), d + 1);
  for (size_t i = 0; i < train.size(); ++i) {
    Xt.row(static_cast<int64_t>(i)).head(d) = X.row(train[i]);
    Xt(static_cast<int64_t>(i), d) = 1.0;
  }
  Mat Y = Mat::Zero(static_cast<int64_t>(train.size()), k);
  for (size_t i = 0; i < train.size(); ++i) Y(static_cast<int64_t>(i), y[static_cast<size_t>(train[i])]) = 1.0;

  Mat W = Mat::Zero(d + 1, k), M = Mat::Zero(d + 1, k), V = Mat::Zero(d + 1, k);
  double n = static_cast<double>(train.size());
  for (int t = 1; t <= iterations; ++t) {
    Mat logits = Xt * W;
    Mat P = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp();
    P.array().colwise() /= P.rowwise().sum().array();
    Mat G = Xt.transpose() * (P - Y) / n;
    // L1 subgradient on everything but the bias row
    for (int64_t r = 0; r < d; ++r)
      for (int c = 0; c < k; ++c) G(r, c) += lambda * (W(r, c) > 0 ? 1.0 : (W(r, c) < 0 ? -1.0 : 0.0));
    M = 0.9 * M + 0.1 * G;
    V = 0.999 * V + 0.001 * G.cwiseProduct(G);
    double bc1 = 1.0 - std::pow(0.9, t), bc2 = 1.0 - std::pow(0.999, t);
    W -= lr * (M / bc1).cwiseQuotient(((V / bc2).cwiseSqrt().array() + 1e-8).matrix());
  }
  double wmax = W.topRows(d).cwiseAbs().maxCoeff();
  for (int64_t r = 0; r < d; ++r)
    for (int c = 0; c < k; ++c)
      if (std::abs(W(r, c)) < 0.01 * wmax) W(r, c) = 0.0;

  int correct = 0;
  for (int64_t hi : hold) {
    Vec xrow(d + 1);
    xrow.head(d) = X.row(hi).transpose();
    xrow(d) = 1.0;
    Vec logits = W.transpose() * xrow;
    int arg = 0;
    logits.maxCoeff(&arg);
    if (arg == y[static_cast<size_t>(hi)]) ++correct;
  }
  ProbeFit out;
  out.W = std::move(W);
  out.holdout_accuracy = hold.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(hold.size());
  return out;
}

double entropy_norm(const std::vector<double>& w, double log_base_n) {
  double s = 0;
  for (double v : w) s += v;
  if (s <= 0 || log_base_n <= 0) return 1.0;  // degenerate row: maximal entropy
  double h = 0;
  for (double v : w)
    if (v > 0) {
      double p = v / s;
      h -= p * std::log(p);
    }
  return h / log_base_n;
}

}  // namespace

std::string DciReport::text() const {
  std::ostringstream os;
  os << "DCI: D=" << disentanglement << " C=" << completeness << " I=" << informativeness
     << " (chance " << chance_level << ")\n";
  os << "per-factor accuracy:";
  for (double a : per_factor_accuracy) os << " " << a;
  os << "\n";
  return os.str();
}

DciReport dci(const Array& codes, const std::vector<int32_t>& factors, const std::vector<int>& cards,
              uint64_t seed) {
  if (codes.rank() != 2) throw std::invalid_argument("dci: codes must be [n, d_z]");
  int64_t n = codes.dim(0), d = codes.dim(1);
  int nf = static_cast<int>(cards.size());
  if (factors.size() != static_cast<size_t>(n) * nf)
    throw std::invalid_argument("dci: factor matrix does not match n x n_factors");
  if (n < 50 * d)
    throw std::invalid_argument("dci: need n >= 50*d_z (" + std::to_string(50 * d) + "), got " + std::to_string(n));

  // standardize codes; constant columns stay zero (their importances vanish)
  Mat X = to_eigen(codes);
  for (int64_t j = 0; j < d; ++j) {
    double mean = X.col(j).mean();
    double var = (X.col(j).array() - mean).square().sum() / static_cast<double>(n - 1);
    double sd = std::sqrt(var);
    if (sd > 1e-12) X.col(j) = (X.col(j).array() - mean) / sd;
    else X.col(j).setZero();
  }

  CounterRng rng(seed, rng_stream::kEval);
  std::vector<int64_t> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int64_t i = n - 1; i > 0; --i)
    std::swap(order[static_cast<size_t>(i)], order[rng.below(static_cast<uint64_t>(i + 1))]);
  int64_t n_hold = std::max<int64_t>(1, n / 5);
  std::vector<int64_t> hold(order.begin(), order.begin() + n_hold);
  std::vector<int64_t> train(order.begin() + n_hold, order.end());

  DciReport rep;
  rep.d_z = static_cast<int>(d);
  rep.n_factors = nf;
  rep.importance.assign(static_cast<size_t>(d) * nf, 0.0);
  double chance = 0;
  for (int f = 0; f < nf; ++f) {
    std::vector<int32_t> yf(static_cast<size_t>(n));
    std::vector<int64_t> counts(static_cast<size_t>(cards[static_cast<size_t>(f)]), 0);
    for (int64_t i = 0; i < n; ++i) {
      yf[static_cast<size_t>(i)] = factors[static_cast<size_t>(i) * nf + f];
      ++counts[static_cast<size_t>(yf[static_cast<size_t>(i)])];
    }
    chance += static_cast<double>(*std::max_element(counts.begin(), counts.end())) / static_cast<double>(n);
    ProbeFit fit = fit_l1_logistic(X, yf, cards[static_cast<size_t>(f)], train, hold, 0.01, 600, 0.05);
    rep.per_factor_accuracy.push_back(fit.holdout_accuracy);
    for (int64_t r = 0; r < d; ++r) {
      double imp = 0;
      for (int c = 0; c < cards[static_cast<size_t>(f)]; ++c) imp += std::abs(fit.W(r, c));
      rep.importance[static_cast<size_t>(r) * nf + f] = imp;
    }
  }
  rep.chance_level = chance / nf;

  double total_mass = 0;
  for (double v : rep.importance) total_mass += v;
  // D: row entropies (base n_factors), weighted by row mass
  double d_sum = 0;
  double log_nf = std::log(static_cast<double>(nf));
  for (int64_t r = 0; r < d; ++r) {
    std::vector<double> row(rep.importance.begin() + r * nf, rep.importance.begin() + (r + 1) * nf);
    double mass = 0;
    for (double v : row) mass += v;
    double di = nf > 1 ? 1.0 - entropy_norm(row, log_nf) : 1.0;
    if (total_mass > 0) d_sum += (mass / total_mass) * di;
  }
  rep.disentanglement = d_sum;
  // C: column entropies (base d_z), weighted by column mass
  double c_sum = 0;
  double log_d = std::log(static_cast<double>(d));
  for (int f = 0; f < nf; ++f) {
    std::vector<double> col(static_cast<size_t>(d));
    double mass = 0;
    for (int64_t r = 0; r < d; ++r) {
      col[static_cast<size_t>(r)] = rep.importance[static_cast<size_t>(r) * nf + f];
      mass += col[static_cast<size_t>(r)];
    }
    double cj = d > 1 ? 1.0 - entropy_norm(col, log_d) : 1.0;
    if (total_mass > 0) c_sum += (mass / total_mass) * cj;
  }
  rep.completeness = c_sum;
  double acc = 0;
  for (double a : rep.per_factor_accuracy) acc += a;
  rep.informativeness = nf > 0 ? acc / nf : 0;
  return rep;
}

CodeMatrix posterior_codes(const VaeModel& model, const Dataset& labeled, int samples_per_example,
                           uint64_t seed) {
  if (!labeled.has_labels) throw std::invalid_argument("posterior_codes: dataset carries no labels");
  VaeModel m = model;
  CounterRng noise(seed, rng_stream::kEval);
  int64_t n = labeled.size();
  int d = m.spec().d_z;
  int nf = labeled.schema.n_factors();
  CodeMatrix out;
  out.codes = Array::zeros({n * samples_per_example, d}, Dtype::Float64);
  out.factors.resize(static_cast<size_t>(n) * samples_per_example * nf);
  int64_t row = 0;
  for (int64_t at = 0; at < n; at += kChunk) {
    int64_t b = std::min(kChunk, n - at);
    Graph g(Dtype::Float64);
    GraphBinding bind(g, m.params());
    Tensor x = g.constant(labeled.image_batch(range_idx(at, b), Dtype::Float64));
    std::vector<Tensor> zs;
    if (m.is_hierarchical()) {
      for (int s = 0; s < samples_per_example; ++s) zs.push_back(m.hier_encode(bind, x, noise).z0);
    } else {
      DiagGaussian q = m.encode(bind, x);
      for (int s = 0; s < samples_per_example; ++s) zs.push_back(gaussian_rsample(q, noise));
    }
    for (int s = 0; s < samples_per_example; ++s) {
      const Array& zv = zs[static_cast<size_t>(s)].value();
      for (int64_t i = 0; i < b; ++i) {
        for (int j = 0; j < d; ++j) out.codes.set((row + i) * d + j, zv.at(i * d + j));
        for (int f = 0; f < nf; ++f)
          out.factors[static_cast<size_t>((row + i)) * nf + f] = labeled.factor_value(at + i, f);
      }
      row += b;
    }
  }
  return out;
}

// ---- probe classifier ----

ProbeClassifier::ProbeClassifier(int pixels, int n_classes, int hidden, uint64_t seed)
    : pixels_(pixels), classes_(n_classes) {
  CounterRng rng(seed, rng_stream::kProbe);
  trunk_ = Mlp::make(ps_, "probe.trunk", {pixels, hidden}, Act::Elu, rng, Dtype::Float64);
  head_ = Linear::make(ps_, "probe.head", hidden, n_classes, rng, Init::Glorot, Dtype::Float64);
}

void ProbeClassifier::train(const Dataset& labeled, int iterations, int batch_size, double lr, uint64_t seed) {
  if (!labeled.has_labels) throw std::invalid_argument("ProbeClassifier::train: dataset carries no labels");
  std::vector<const Array*> ptrs;
  for (const auto& item : ps_.items()) ptrs.push_back(&item.value);
  AdamState adam(ptrs);
  AdamConfig acfg;
  acfg.lr = lr;
  BatchIterator iter(labeled, batch_size, CounterRng(seed, rng_stream::kProbe + 1));
  int nf = labeled.schema.n_factors();
  if (nf != 1) throw std::invalid_argument("ProbeClassifier::train: single-factor schemas only");
  for (int t = 0; t < iterations; ++t) {
    std::vector<int64_t> idx = iter.next_indices();
    Array x = labeled.image_batch(idx, Dtype::Float64);
    Array y = labeled.onehot_batch(idx, Dtype::Float64);
    Graph g(Dtype::Float64);
    GraphBinding bind(g, ps_);
    Tensor xt = g.constant(x);
    Tensor logits = head_(bind, trunk_(bind, xt * 2.0 - 1.0));
    Tensor loss = neg(mean_all(sum(g.constant(y) * log_softmax(logits, 1), 1)));
    g.backward(loss);
    std::vector<Array*> params;
    std::vector<const Array*> grads;
    for (size_t i = 0; i < ps_.size(); ++i) {
      params.push_back(&ps_.value(static_cast<int>(i)));
      grads.push_back(bind.grad_of(static_cast<int>(i)));
    }
    adam.step(params, grads, acfg);
  }
}

std::vector<int> ProbeClassifier::predict(const Array& images01) const {
  ParamSet& ps = const_cast<ParamSet&>(ps_);
  Graph g(Dtype::Float64);
  GraphBinding bind(g, ps);
  Tensor logits = head_(bind, trunk_(bind, g.constant(images01) * 2.0 - 1.0));
  const Array& lv = logits.value();
  std::vector<int> out(static_cast<size_t>(lv.dim(0)));
  for (int64_t i = 0; i < lv.dim(0); ++i) {
    int arg = 0;
    double best = -INFINITY;
    for (int c = 0; c < classes_; ++c)
      if (lv.at(i * classes_ + c) > best) {
        best = lv.at(i * classes_ + c);
        arg = c;
      }
    out[static_cast<size_t>(i)] = arg;
  }
  return out;
}

Array ProbeClassifier::features(const Array& images01) const {
  ParamSet& ps = const_cast<ParamSet&>(ps_);
  Graph g(Dtype::Float64);
  GraphBinding bind(g, ps);
  Tensor f = trunk_(bind, g.constant(images01) * 2.0 - 1.0);
  return f.value();
}

double ProbeClassifier::accuracy(const Dataset& labeled_eval) const {
  int64_t n = labeled_eval.size();
  int64_t correct = 0;
  for (int64_t at = 0; at < n; at += kChunk) {
    int64_t b = std::min(kChunk, n - at);
    std::vector<int> pred = predict(labeled_eval.image_batch(range_idx(at, b), Dtype::Float64));
    for (int64_t i = 0; i < b; ++i)
      if (pred[static_cast<size_t>(i)] == labeled_eval.factor_value(at + i, 0)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

FeatureExtractor probe_features(const ProbeClassifier& probe) {
  return [&probe](const Array& images) { return probe.features(images); };
}

// ---- generation ----

GeneratedSamples generate_samples(const VaeModel& model, const FactorSchema& schema, const SampleSpec& spec,
                                  uint64_t seed) {
  VaeModel m = model;
  CounterRng pick(seed, rng_stream::kEval);
  CounterRng noise(seed, rng_stream::kEval + 100);
  int n = spec.n;
  GeneratedSamples out;
  Graph g(Dtype::Float64);
  GraphBinding bind(g, m.params());
  if (m.is_semafo()) {
    int nf = schema.n_factors();
    std::vector<int> fixed(static_cast<size_t>(nf), -1);
    for (auto [f, v] : spec.fixed_factors) {
      if (f < 0 || f >= nf) throw std::invalid_argument("generate_samples: bad factor index");
      if (v < 0 || v >= schema.factors[static_cast<size_t>(f)].cardinality)
        throw std::invalid_argument("generate_samples: bad value for factor " + schema.factors[static_cast<size_t>(f)].name);
      fixed[static_cast<size_t>(f)] = v;
    }
    std::vector<int32_t> base(static_cast<size_t>(nf));
    for (int f = 0; f < nf; ++f)
      base[static_cast<size_t>(f)] = fixed[static_cast<size_t>(f)] >= 0
                                         ? fixed[static_cast<size_t>(f)]
                                         : static_cast<int32_t>(pick.below(static_cast<uint64_t>(
                                               schema.factors[static_cast<size_t>(f)].cardinality)));
    out.factors.resize(static_cast<size_t>(n) * nf);
    Array y(Shape{n, schema.d_y()}, Dtype::Float64);
    for (int i = 0; i < n; ++i) {
      std::vector<int32_t> tuple = base;
      if (spec.protocol == FactorProtocol::Randomized && i > 0) {
        for (int f = 0; f < nf; ++f)
          if (fixed[static_cast<size_t>(f)] < 0)
            tuple[static_cast<size_t>(f)] = static_cast<int32_t>(
                pick.below(static_cast<uint64_t>(schema.factors[static_cast<size_t>(f)].cardinality)));
      }
      int off = 0;
      for (int f = 0; f < nf; ++f) {
        out.factors[static_cast<size_t>(i) * nf + f] = tuple[static_cast<size_t>(f)];
        y.set(static_cast<int64_t>(i) * schema.d_y() + off + tuple[static_cast<size_t>(f)], 1.0);
        off += schema.factors[static_cast<size_t>(f)].cardinality;
      }
    }
    Tensor y_t = g.constant(y);
    DiagGaussian q_u = m.controller_posterior_u(bind, y_t);
    Tensor u = gaussian_rsample(q_u, noise);
    if (m.is_hierarchical()) {
      Tensor z0 = gaussian_rsample(m.prior_z0(bind, n, u), noise);
      Tensor z1 = gaussian_rsample(m.hier_prior_z1(bind, z0, u), noise);
      out.images = bernoulli_mean(m.hier_decode(bind, z0, z1)).value();
    } else {
      Tensor z = gaussian_rsample(m.prior_z_given_u(bind, u), noise);
      out.images = bernoulli_mean(m.decode(bind, z)).value();
    }
  } else {
    if (m.is_hierarchical()) {
      Tensor z0 = gaussian_rsample(std_normal_like(g, {n, m.spec().d_z}), noise);
      Tensor z1 = gaussian_rsample(m.hier_prior_z1(bind, z0, std::nullopt), noise);
      out.images = bernoulli_mean(m.hier_decode(bind, z0, z1)).value();
    } else {
      Tensor z = gaussian_rsample(std_normal_like(g, {n, m.spec().d_z}), noise);
      out.images = bernoulli_mean(m.decode(bind, z)).value();
    }
  }
  return out;
}

ConditionalGenReport conditional_generation_accuracy(const VaeModel& model, const ProbeClassifier& probe,
                                                     double probe_real_accuracy, const FactorSchema& schema,
                                                     int per_class_n, uint64_t seed, double min_probe_accuracy) {
  if (probe_real_accuracy < min_probe_accuracy)
    throw std::runtime_error("conditional_generation_accuracy: probe accuracy " +
                             std::to_string(probe_real_accuracy) + " below " +
                             std::to_string(min_probe_accuracy) + "; probe too weak to judge generation");
  if (schema.n_factors() != 1)
    throw std::invalid_argument("conditional_generation_accuracy: single-factor schemas only");
  int k = schema.factors[0].cardinality;
  ConditionalGenReport rep;
  rep.probe_real_accuracy = probe_real_accuracy;
  rep.confusion.assign(static_cast<size_t>(k) * k, 0);
  int correct = 0;
  for (int c = 0; c < k; ++c) {
    SampleSpec spec;
    spec.n = per_class_n;
    spec.protocol = FactorProtocol::Fixed;
    spec.fixed_factors = {{0, c}};
    GeneratedSamples gs = generate_samples(model, schema, spec, seed + static_cast<uint64_t>(c) * 1000003);
    std::vector<int> pred = probe.predict(gs.images);
    for (int p : pred) {
      ++rep.confusion[static_cast<size_t>(c) * k + p];
      if (p == c) ++correct;
    }
  }
  rep.accuracy = static_cast<double>(correct) / static_cast<double>(k * per_class_n);
  return rep;
}

MiBound mi_xz_ba_lower_bound(const VaeModel& model, const Dataset& ds, int samples_per_example, uint64_t seed) {
  VaeModel m = model;
  CounterRng noise(seed, rng_stream::kEval);
  int64_t n = ds.size();
  std::vector<double> per_example(static_cast<size_t>(n), 0.0);
  for (int64_t at = 0; at < n; at += kChunk) {
    int64_t b = std::min(kChunk, n - at);
    Graph g(Dtype::Float64);
    GraphBinding bind(g, m.params());
    Tensor x = g.constant(ds.image_batch(range_idx(at, b), Dtype::Float64));
    for (int s = 0; s < samples_per_example; ++s) {
      Tensor recon;
      if (m.is_hierarchical()) {
        VaeModel::HierPosterior hp = m.hier_encode(bind, x, noise);
        recon = bernoulli_logprob(m.hier_decode(bind, hp.z0, hp.z1), x);
      } else {
        DiagGaussian q = m.encode(bind, x);
        recon = bernoulli_logprob(m.decode(bind, gaussian_rsample(q, noise)), x);
      }
      const Array& rv = recon.value();
      for (int64_t i = 0; i < b; ++i)
        per_example[static_cast<size_t>(at + i)] += rv.at(i) / static_cast<double>(samples_per_example);
    }
  }
  double logN = std::log(static_cast<double>(n));
  double mean = 0;
  for (double v : per_example) mean += v;
  mean /= static_cast<double>(n);
  double var = 0;
  for (double v : per_example) var += (v - mean) * (v - mean);
  var /= std::max<double>(1.0, static_cast<double>(n - 1));
  MiBound out;
  out.nats = mean + logN;
  out.stderr_nats = std::sqrt(var / static_cast<double>(n));
  return out;
}

double spearman_rho(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("spearman_rho: need matched vectors");
  auto ranks = [](const std::vector<double>& v) {
    size_t n = v.size();
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](size_t i, size_t j) { return v[i] < v[j]; });
    std::vector<double> r(n);
    size_t i = 0;
    while (i < n) {
      size_t j = i;
      while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
      double avg = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
      for (size_t t = i; t <= j; ++t) r[order[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = 0, mb = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double num = 0, da = 0, db = 0;
  for (size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  if (da <= 0 || db <= 0) return 0;
  return num / std::sqrt(da * db);
}

}  // namespace semafo
