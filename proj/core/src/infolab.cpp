#include "semafo/infolab.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace semafo {

namespace {

inline double xlogx(double x) { return x > 0 ? x * std::log(x) : 0.0; }

std::vector<double> dirichlet_flat(size_t n, CounterRng& rng) {
  std::vector<double> v(n);
  double s = 0;
  for (double& x : v) {
    x = -std::log(rng.uniform());
    s += x;
  }
  for (double& x : v) x /= s;
  return v;
}

double logmeanexp(const std::vector<double>& v) {
  double mx = -INFINITY;
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s / static_cast<double>(v.size()));
}

}  // namespace

void DiscreteJoint::validate(double tol) const {
  if (nx < 1 || ny < 1 || nz < 1 || p.size() != static_cast<size_t>(nx) * ny * nz)
    throw std::invalid_argument("DiscreteJoint: table size does not match alphabet sizes");
  double s = 0;
  for (double v : p) {
    if (v < -tol) throw std::invalid_argument("DiscreteJoint: negative probability " + std::to_string(v));
    s += v;
  }
  if (std::abs(s - 1.0) > tol)
    throw std::invalid_argument("DiscreteJoint: total mass " + std::to_string(s) + " != 1");
}

std::vector<double> DiscreteJoint::marginal_x() const {
  std::vector<double> m(static_cast<size_t>(nx), 0.0);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) m[static_cast<size_t>(x)] += at(x, y, z);
  return m;
}

std::vector<double> DiscreteJoint::marginal_y() const {
  std::vector<double> m(static_cast<size_t>(ny), 0.0);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) m[static_cast<size_t>(y)] += at(x, y, z);
  return m;
}

std::vector<double> DiscreteJoint::marginal_z() const {
  std::vector<double> m(static_cast<size_t>(nz), 0.0);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) m[static_cast<size_t>(z)] += at(x, y, z);
  return m;
}

std::vector<double> DiscreteJoint::marginal_xy() const {
  std::vector<double> m(static_cast<size_t>(nx) * ny, 0.0);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) m[static_cast<size_t>(x * ny + y)] += at(x, y, z);
  return m;
}

std::vector<double> DiscreteJoint::marginal_xz() const {
  std::vector<double> m(static_cast<size_t>(nx) * nz, 0.0);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) m[static_cast<size_t>(x * nz + z)] += at(x, y, z);
  return m;
}

std::vector<double> DiscreteJoint::marginal_yz() const {
  std::vector<double> m(static_cast<size_t>(ny) * nz, 0.0);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z) m[static_cast<size_t>(y * nz + z)] += at(x, y, z);
  return m;
}

DiscreteJoint DiscreteJoint::random_dirichlet(int nx, int ny, int nz, CounterRng& rng) {
  DiscreteJoint j{nx, ny, nz, dirichlet_flat(static_cast<size_t>(nx) * ny * nz, rng)};
  return j;
}

DiscreteJoint DiscreteJoint::copy_construction(int nx, int nz, CounterRng& rng) {
  std::vector<double> pxz = dirichlet_flat(static_cast<size_t>(nx) * nz, rng);
  DiscreteJoint j{nx, nz, nz, std::vector<double>(static_cast<size_t>(nx) * nz * nz, 0.0)};
  for (int x = 0; x < nx; ++x)
    for (int z = 0; z < nz; ++z) j.at(x, z, z) = pxz[static_cast<size_t>(x * nz + z)];
  return j;
}

DiscreteJoint DiscreteJoint::subset_construction(int nx, int ny, int nw, CounterRng& rng) {
  std::vector<double> pxy = dirichlet_flat(static_cast<size_t>(nx) * ny, rng);
  std::vector<double> pw = dirichlet_flat(static_cast<size_t>(nw), rng);
  int nz = ny * nw;
  DiscreteJoint j{nx, ny, nz, std::vector<double>(static_cast<size_t>(nx) * ny * nz, 0.0)};
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int w = 0; w < nw; ++w)
        j.at(x, y, y * nw + w) = pxy[static_cast<size_t>(x * ny + y)] * pw[static_cast<size_t>(w)];
  return j;
}

DiscreteJoint DiscreteJoint::independent_y_construction(int nx, int ny, int nz, CounterRng& rng) {
  std::vector<double> pxz = dirichlet_flat(static_cast<size_t>(nx) * nz, rng);
  std::vector<double> py = dirichlet_flat(static_cast<size_t>(ny), rng);
  DiscreteJoint j{nx, ny, nz, std::vector<double>(static_cast<size_t>(nx) * ny * nz, 0.0)};
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y)
      for (int z = 0; z < nz; ++z)
        j.at(x, y, z) = pxz[static_cast<size_t>(x * nz + z)] * py[static_cast<size_t>(y)];
  return j;
}

double entropy(const std::vector<double>& dist) {
  double h = 0;
  for (double v : dist) {
    if (v < 0) throw std::invalid_argument("entropy: negative probability " + std::to_string(v));
    h -= xlogx(v);
  }
  return h;
}

double mutual_info(const DiscreteJoint& j, Axis a, Axis b) {
  if (a == b) throw std::invalid_argument("mutual_info: axes must differ");
  j.validate(1e-9);
  auto pick = [&](Axis ax) {
    switch (ax) {
      case Axis::X: return j.marginal_x();
      case Axis::Y: return j.marginal_y();
      case Axis::Z: return j.marginal_z();
    }
    throw std::logic_error("mutual_info: bad axis");
  };
  Axis lo = std::min(a, b), hi = std::max(a, b);
  std::vector<double> joint;
  if (lo == Axis::X && hi == Axis::Y) joint = j.marginal_xy();
  else if (lo == Axis::X && hi == Axis::Z) joint = j.marginal_xz();
  else joint = j.marginal_yz();
  return entropy(pick(lo)) + entropy(pick(hi)) - entropy(joint);
}

TransitiveReport verify_transitive_info(const DiscreteJoint& j, double tol) {
  double hx = entropy(j.marginal_x());
  double hy = entropy(j.marginal_y());
  double hz = entropy(j.marginal_z());
  double hxy = entropy(j.marginal_xy());
  double hxz = entropy(j.marginal_xz());
  double hyz = entropy(j.marginal_yz());
  double hxyz = entropy(j.p);

  TransitiveReport r;
  r.lhs = hx + hz - hxz;                       // I(x;z)
  double ixy = hx + hy - hxy;
  double iyz = hy + hz - hyz;
  r.rhs = ixy + iyz - hy;
  r.slack = r.lhs - r.rhs;
  r.holds = r.slack >= -tol;

  // slack == H(y|x,z) + I(x;z|y), computed from an independent grouping
  double h_y_given_xz = hxyz - hxz;
  double i_xz_given_y = hxy + hyz - hy - hxyz;
  r.identity_gap = std::abs(r.slack - (h_y_given_xz + i_xz_given_y));
  return r;
}

BaReport verify_ba_bound(const DiscreteJoint& j, const std::vector<double>& q_x_given_z) {
  if (q_x_given_z.size() != static_cast<size_t>(j.nx) * j.nz)
    throw std::invalid_argument("verify_ba_bound: q(x|z) must be [nz][nx]");
  for (int z = 0; z < j.nz; ++z) {
    double s = 0;
    for (int x = 0; x < j.nx; ++x) s += q_x_given_z[static_cast<size_t>(z * j.nx + x)];
    if (std::abs(s - 1.0) > 1e-9)
      throw std::invalid_argument("verify_ba_bound: q(x|z) row " + std::to_string(z) + " sums to " +
                                  std::to_string(s));
  }
  std::vector<double> pxz = j.marginal_xz();
  std::vector<double> px = j.marginal_x();
  BaReport r;
  r.exact = mutual_info(j, Axis::X, Axis::Z);
  for (int x = 0; x < j.nx; ++x)
    for (int z = 0; z < j.nz; ++z) {
      double pj = pxz[static_cast<size_t>(x * j.nz + z)];
      if (pj <= 0) continue;
      r.bound += pj * (std::log(q_x_given_z[static_cast<size_t>(z * j.nx + x)]) - std::log(px[static_cast<size_t>(x)]));
    }
  r.gap = r.exact - r.bound;
  return r;
}

void DiscreteToyVae::validate(double tol) const {
  auto check_rows = [&](const std::vector<double>& t, int rows, int cols, const char* name) {
    if (t.size() != static_cast<size_t>(rows) * cols)
      throw std::invalid_argument(std::string("DiscreteToyVae: ") + name + " has wrong size");
    for (int r = 0; r < rows; ++r) {
      double s = 0;
      for (int c = 0; c < cols; ++c) {
        double v = t[static_cast<size_t>(r * cols + c)];
        if (v < -tol) throw std::invalid_argument(std::string("DiscreteToyVae: negative entry in ") + name);
        s += v;
      }
      if (std::abs(s - 1.0) > tol)
        throw std::invalid_argument(std::string("DiscreteToyVae: ") + name + " row " + std::to_string(r) +
                                    " sums to " + std::to_string(s));
    }
  };
  check_rows(q_z_given_x, nx, nz, "q(z|x)");
  check_rows(p_x_given_z, nz, nx, "p(x|z)");
  check_rows(p_z, 1, nz, "p(z)");
  check_rows(q_x, 1, nx, "q(x)");
}

std::vector<double> DiscreteToyVae::joint_q() const {
  std::vector<double> q(static_cast<size_t>(nx) * nz, 0.0);
  for (int x = 0; x < nx; ++x)
    for (int z = 0; z < nz; ++z)
      q[static_cast<size_t>(x * nz + z)] = q_x[static_cast<size_t>(x)] * q_z_given_x[static_cast<size_t>(x * nz + z)];
  return q;
}

std::vector<double> DiscreteToyVae::aggregate_z() const {
  std::vector<double> qz(static_cast<size_t>(nz), 0.0);
  std::vector<double> q = joint_q();
  for (int x = 0; x < nx; ++x)
    for (int z = 0; z < nz; ++z) qz[static_cast<size_t>(z)] += q[static_cast<size_t>(x * nz + z)];
  return qz;
}

DiscreteToyVae DiscreteToyVae::random(int nx, int nz, CounterRng& rng) {
  DiscreteToyVae t;
  t.nx = nx;
  t.nz = nz;
  t.q_z_given_x.clear();
  for (int x = 0; x < nx; ++x) {
    auto row = dirichlet_flat(static_cast<size_t>(nz), rng);
    t.q_z_given_x.insert(t.q_z_given_x.end(), row.begin(), row.end());
  }
  for (int z = 0; z < nz; ++z) {
    auto row = dirichlet_flat(static_cast<size_t>(nx), rng);
    t.p_x_given_z.insert(t.p_x_given_z.end(), row.begin(), row.end());
  }
  t.p_z = dirichlet_flat(static_cast<size_t>(nz), rng);
  t.q_x = dirichlet_flat(static_cast<size_t>(nx), rng);
  return t;
}

DiscreteToyVae DiscreteToyVae::collapsed(int nx, int nz, CounterRng& rng) {
  DiscreteToyVae t = random(nx, nz, rng);
  for (int x = 0; x < nx; ++x)
    for (int z = 0; z < nz; ++z) t.q_z_given_x[static_cast<size_t>(x * nz + z)] = t.p_z[static_cast<size_t>(z)];
  return t;
}

DiscreteToyVae DiscreteToyVae::bayes_decoder(int nx, int nz, CounterRng& rng) {
  DiscreteToyVae t = random(nx, nz, rng);
  std::vector<double> q = t.joint_q();
  std::vector<double> qz = t.aggregate_z();
  for (int z = 0; z < nz; ++z)
    for (int x = 0; x < nx; ++x)
      t.p_x_given_z[static_cast<size_t>(z * nx + x)] =
          qz[static_cast<size_t>(z)] > 0 ? q[static_cast<size_t>(x * nz + z)] / qz[static_cast<size_t>(z)]
                                         : 1.0 / static_cast<double>(nx);
  t.p_z = qz;
  return t;
}

ElboDecomposition brute_force_elbo_decomposition(const DiscreteToyVae& toy) {
  toy.validate(1e-9);
  if (static_cast<int64_t>(toy.nx) * toy.nz > 10000)
    throw std::invalid_argument("brute_force_elbo_decomposition: |X|*|Z| exceeds the enumeration budget");
  std::vector<double> q = toy.joint_q();
  std::vector<double> qz = toy.aggregate_z();

  ElboDecomposition d;
  double elbo = 0;
  for (int x = 0; x < toy.nx; ++x) {
    double qx = toy.q_x[static_cast<size_t>(x)];
    d.h_x -= xlogx(qx);
    for (int z = 0; z < toy.nz; ++z) {
      double qzx = toy.q_z_given_x[static_cast<size_t>(x * toy.nz + z)];
      double qj = q[static_cast<size_t>(x * toy.nz + z)];
      if (qj <= 0) continue;
      double pxz = toy.p_x_given_z[static_cast<size_t>(z * toy.nx + x)];
      double pz = toy.p_z[static_cast<size_t>(z)];
      elbo += qj * (std::log(pxz) + std::log(pz) - std::log(qzx));
      d.i_q += qj * (std::log(qj) - std::log(qx) - std::log(qz[static_cast<size_t>(z)]));
      d.i_hat += qj * (std::log(pxz * pz) - std::log(qx) - std::log(qz[static_cast<size_t>(z)]));
    }
  }
  d.neg_elbo = -elbo;
  d.residual = d.neg_elbo - (d.i_q - d.i_hat + d.h_x);
  d.ihat_le_iq = d.i_hat <= d.i_q + 1e-12;
  return d;
}

double toy_exact_mi(const DiscreteToyVae& toy) {
  std::vector<double> q = toy.joint_q();
  std::vector<double> qz = toy.aggregate_z();
  double mi = 0;
  for (int x = 0; x < toy.nx; ++x)
    for (int z = 0; z < toy.nz; ++z) {
      double qj = q[static_cast<size_t>(x * toy.nz + z)];
      if (qj <= 0) continue;
      mi += qj * (std::log(qj) - std::log(toy.q_x[static_cast<size_t>(x)]) - std::log(qz[static_cast<size_t>(z)]));
    }
  return mi;
}

// ---- lemma-2 probe ----

namespace {

// log N(v; mu, sigma) for one coordinate vector
double diag_gauss_logpdf(const std::vector<double>& v, const std::vector<double>& mu,
                         const std::vector<double>& log_std) {
  double lp = 0;
  for (size_t i = 0; i < v.size(); ++i) {
    double s = std::exp(log_std[i]);
    double z = (v[i] - mu[i]) / s;
    lp += -0.5 * z * z - log_std[i] - 0.9189385332046727;  // log sqrt(2 pi)
  }
  return lp;
}

std::vector<double> row_of(const Array& a, int64_t r) {
  int64_t d = a.dim(1);
  std::vector<double> out(static_cast<size_t>(d));
  for (int64_t j = 0; j < d; ++j) out[static_cast<size_t>(j)] = a.at(r * d + j);
  return out;
}

}  // namespace

Lemma2Probe lemma2_condition_probe(const VaeModel& model, const Dataset& labeled_set, uint64_t seed,
                                   int n_examples, int n_u_samples, int n_reference) {
  if (!model.is_semafo()) throw std::invalid_argument("lemma2_condition_probe: model has no controller");
  if (model.is_hierarchical())
    throw std::invalid_argument("lemma2_condition_probe: single-layer semafo models only");
  CounterRng pick(seed, rng_stream::kEval);
  CounterRng noise(seed, rng_stream::kNoise);
  CounterRng gumbel(seed, rng_stream::kGumbel);
  CounterRng ctrl(seed, rng_stream::kController);

  int64_t n = labeled_set.size();
  n_examples = static_cast<int>(std::min<int64_t>(n_examples, n));
  n_reference = static_cast<int>(std::min<int64_t>(n_reference, n));
  std::vector<int64_t> sample_idx, ref_idx;
  for (int i = 0; i < n_examples; ++i) sample_idx.push_back(static_cast<int64_t>(pick.below(static_cast<uint64_t>(n))));
  for (int i = 0; i < n_reference; ++i) ref_idx.push_back(static_cast<int64_t>(pick.below(static_cast<uint64_t>(n))));

  // forward passes in f64, no gradients needed
  VaeModel m64 = model;  // parameters copied; graphs run in f64
  Graph g(Dtype::Float64);
  GraphBinding bind(g, m64.params());
  Tensor x_t = g.constant(labeled_set.image_batch(sample_idx, Dtype::Float64));
  DiagGaussian q = m64.encode(bind, x_t);
  Tensor z_t = gaussian_rsample(q, noise);
  FactorizedLabel y_post = m64.classify(bind, z_t);
  Tensor y_t = y_post.sample(gumbel);
  Tensor logq_y_given_z = y_post.log_prob(y_t);
  Tensor logp_x_given_z = bernoulli_logprob(m64.decode(bind, z_t), x_t);
  // reference batch for the aggregate posterior
  Tensor xr_t = g.constant(labeled_set.image_batch(ref_idx, Dtype::Float64));
  DiagGaussian q_ref = m64.encode(bind, xr_t);
  // controller pieces at the sampled y
  DiagGaussian q_u = m64.controller_posterior_u(bind, y_t);

  const Array& z = z_t.value();
  const Array& y = y_t.value();
  const Array& q_mu = q.mean.value();
  const Array& q_ls = q.log_std.value();
  const Array& ref_mu = q_ref.mean.value();
  const Array& ref_ls = q_ref.log_std.value();
  const Array& logq_y = logq_y_given_z.value();
  const Array& logp_x = logp_x_given_z.value();
  const Array& u_mu = q_u.mean.value();
  const Array& u_ls = q_u.log_std.value();

  int d_u = model.d_u();
  double logN = std::log(static_cast<double>(n));

  std::vector<double> terms_zy, terms_xz;
  for (int i = 0; i < n_examples; ++i) {
    std::vector<double> zi = row_of(z, i);
    std::vector<double> yi = row_of(y, i);

    // aggregate posterior estimate log q(z) = logmeanexp_j log N(z; mu_j, s_j)
    std::vector<double> comps;
    comps.reserve(static_cast<size_t>(n_reference));
    for (int j = 0; j < n_reference; ++j)
      comps.push_back(diag_gauss_logpdf(zi, row_of(ref_mu, j), row_of(ref_ls, j)));
    double log_qz = logmeanexp(comps);

    // importance estimate of log p(z, y) with proposal q(u|y):
    //   log mean_k p(z|u_k) p(y|u_k) p(u_k) / q(u_k|y)
    std::vector<double> mu_i = row_of(u_mu, i);
    std::vector<double> ls_i = row_of(u_ls, i);
    std::vector<double> iw;
    iw.reserve(static_cast<size_t>(n_u_samples));
    std::vector<double> pz_only;
    pz_only.reserve(static_cast<size_t>(n_u_samples));
    for (int k = 0; k < n_u_samples; ++k) {
      std::vector<double> uk(static_cast<size_t>(d_u));
      for (int dd = 0; dd < d_u; ++dd)
        uk[static_cast<size_t>(dd)] = mu_i[static_cast<size_t>(dd)] + std::exp(ls_i[static_cast<size_t>(dd)]) * ctrl.normal();
      // single-row controller decode in its own small graph
      Graph gk(Dtype::Float64);
      GraphBinding bk(gk, m64.params());
      Tensor u_row = gk.constant(Array::from({1, d_u}, uk, Dtype::Float64));
      FactorizedLabel py_u = m64.controller_label_lik(bk, u_row);
      Tensor y_row = gk.constant(Array::from({1, static_cast<int64_t>(yi.size())}, yi, Dtype::Float64));
      double logp_y_u = py_u.log_prob(y_row).value().at(0);
      DiagGaussian pz_u = m64.prior_z_given_u(bk, u_row);
      double logp_z_u = diag_gauss_logpdf(zi, row_of(pz_u.mean.value(), 0), row_of(pz_u.log_std.value(), 0));
      double logp_u = 0;
      for (int dd = 0; dd < d_u; ++dd) {
        double v = uk[static_cast<size_t>(dd)];
        logp_u += -0.5 * v * v - 0.9189385332046727;
      }
      double logq_u_y = diag_gauss_logpdf(uk, mu_i, ls_i);
      iw.push_back(logp_z_u + logp_y_u + logp_u - logq_u_y);
      pz_only.push_back(logp_z_u + logp_u - logq_u_y);
    }
    double log_pzy = logmeanexp(iw);
    double log_pz = logmeanexp(pz_only);

    terms_zy.push_back(log_qz + logq_y.at(i) - log_pzy);

    // KL(q(x,z) || p(x,z)) term: log[qdata(x) q(z|x)] - log[p(x|z) p(z)]
    double log_qzx = diag_gauss_logpdf(zi, row_of(q_mu, i), row_of(q_ls, i));
    terms_xz.push_back((-logN + log_qzx) - (logp_x.at(i) + log_pz));
  }

  auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
    mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double var = 0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= std::max<double>(1.0, static_cast<double>(v.size()) - 1);
    se = std::sqrt(var / static_cast<double>(v.size()));
  };
  Lemma2Probe out;
  out.samples = n_examples;
  mean_se(terms_zy, out.kl_zy, out.kl_zy_se);
  mean_se(terms_xz, out.kl_xz, out.kl_xz_se);
  return out;
}

// ---- harness ----

bool TheoryReport::ok() const {
  return transitive_violations == 0 && decomposition_violations == 0 && ba_violations == 0 && ihat_le_iq_all &&
         equality_max_abs_slack < 1e-9 && ba_tight_max_abs_gap < 1e-12;
}

std::string TheoryReport::text() const {
  std::ostringstream os;
  os << "transitive-information inequality: " << transitive_instances << " instances, " << transitive_violations
     << " violations\n"
     << "  slack min/mean/max: " << slack_min << " / " << slack_mean << " / " << slack_max << "\n"
     << "  equality-case max |slack|: " << equality_max_abs_slack << "\n"
     << "elbo decomposition: " << decomposition_instances << " instances, " << decomposition_violations
     << " violations, max |residual| " << residual_max << ", I_hat<=I_q " << (ihat_le_iq_all ? "all" : "VIOLATED")
     << "\n"
     << "variational MI bound: " << ba_instances << " instances, " << ba_violations << " violations, min gap "
     << ba_gap_min << ", tight-case max |gap| " << ba_tight_max_abs_gap << "\n"
     << (ok() ? "RESULT: all checks passed\n" : "RESULT: VIOLATIONS FOUND\n");
  return os.str();
}

std::string TheoryReport::csv() const {
  std::ostringstream os;
  os << "check,instances,violations,stat1,stat2,stat3\n";
  os << "transitive," << transitive_instances << "," << transitive_violations << "," << slack_min << ","
     << slack_mean << "," << slack_max << "\n";
  os << "transitive_equality,3,0," << equality_max_abs_slack << ",,\n";
  os << "decomposition," << decomposition_instances << "," << decomposition_violations << "," << residual_max
     << "," << (ihat_le_iq_all ? 1 : 0) << ",\n";
  os << "ba_bound," << ba_instances << "," << ba_violations << "," << ba_gap_min << "," << ba_tight_max_abs_gap
     << ",\n";
  return os.str();
}

TheoryReport run_theory_verification(uint64_t seed, int n_transitive, int n_decomposition, int n_ba) {
  CounterRng rng(seed, rng_stream::kEval);
  TheoryReport rep;
  rep.slack_min = INFINITY;
  rep.slack_max = -INFINITY;

  for (int i = 0; i < n_transitive; ++i) {
    int nx = 2 + static_cast<int>(rng.below(3));  // 2..4
    int ny = 2 + static_cast<int>(rng.below(2));  // 2..3
    int nz = 2 + static_cast<int>(rng.below(3));  // 2..4
    DiscreteJoint j = DiscreteJoint::random_dirichlet(nx, ny, nz, rng);
    TransitiveReport t = verify_transitive_info(j);
    if (!t.holds || t.identity_gap > 1e-12) ++rep.transitive_violations;
    rep.slack_min = std::min(rep.slack_min, t.slack);
    rep.slack_max = std::max(rep.slack_max, t.slack);
    rep.slack_mean += t.slack;
  }
  rep.transitive_instances = n_transitive;
  if (n_transitive > 0) rep.slack_mean /= n_transitive;

  // equality constructions: y == z; y subset of z; y independent of (x,z)
  {
    TransitiveReport a = verify_transitive_info(DiscreteJoint::copy_construction(4, 3, rng));
    TransitiveReport b = verify_transitive_info(DiscreteJoint::subset_construction(4, 2, 2, rng));
    rep.equality_max_abs_slack = std::max(std::abs(a.slack), std::abs(b.slack));
    TransitiveReport c = verify_transitive_info(DiscreteJoint::independent_y_construction(4, 3, 4, rng));
    if (!a.holds || !b.holds || !c.holds) ++rep.transitive_violations;
    if (c.rhs > 1e-12) ++rep.transitive_violations;  // rhs = -H(y) <= 0 for independent y
  }

  for (int i = 0; i < n_decomposition; ++i) {
    int nx = 2 + static_cast<int>(rng.below(7));
    int nz = 2 + static_cast<int>(rng.below(7));
    ElboDecomposition d = brute_force_elbo_decomposition(DiscreteToyVae::random(nx, nz, rng));
    rep.residual_max = std::max(rep.residual_max, std::abs(d.residual));
    if (std::abs(d.residual) > 1e-9) ++rep.decomposition_violations;
    if (!d.ihat_le_iq) rep.ihat_le_iq_all = false;
  }
  rep.decomposition_instances = n_decomposition;

  rep.ba_gap_min = INFINITY;
  for (int i = 0; i < n_ba; ++i) {
    int nx = 2 + static_cast<int>(rng.below(3));
    int ny = 2;
    int nz = 2 + static_cast<int>(rng.below(3));
    DiscreteJoint j = DiscreteJoint::random_dirichlet(nx, ny, nz, rng);
    std::vector<double> q;
    for (int z = 0; z < nz; ++z) {
      auto row = dirichlet_flat(static_cast<size_t>(nx), rng);
      q.insert(q.end(), row.begin(), row.end());
    }
    BaReport b = verify_ba_bound(j, q);
    rep.ba_gap_min = std::min(rep.ba_gap_min, b.gap);
    if (b.gap < -1e-9) ++rep.ba_violations;
    // tight case: q(x|z) = true conditional
    std::vector<double> pxz = j.marginal_xz();
    std::vector<double> pz = j.marginal_z();
    std::vector<double> qt(static_cast<size_t>(j.nx) * j.nz);
    for (int z = 0; z < j.nz; ++z)
      for (int x = 0; x < j.nx; ++x)
        qt[static_cast<size_t>(z * j.nx + x)] =
            pz[static_cast<size_t>(z)] > 0 ? pxz[static_cast<size_t>(x * j.nz + z)] / pz[static_cast<size_t>(z)]
                                           : 1.0 / j.nx;
    BaReport tight = verify_ba_bound(j, qt);
    rep.ba_tight_max_abs_gap = std::max(rep.ba_tight_max_abs_gap, std::abs(tight.gap));
  }
  rep.ba_instances = n_ba;
  return rep;
}

}  // namespace semafo
