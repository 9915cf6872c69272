#include "semafo/objectives.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace semafo {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Tensor free_pixel_recon(const BernoulliImage& lik, Tensor x, double R) {
  // per-pixel x*l - softplus(l) + R, summed over pixels
  Tensor elem = x * lik.logits - softplus(lik.logits) + R;
  return sum(elem, 1);
}

}  // namespace

double LossBreakdown::recompose() const {
  return weight * -(gamma_recon * reconstruction - beta * (kl_z + kl_z0 + kl_z1) + controller_elbo +
                    cls_coeff * classifier_term);
}

bool LossBreakdown::finite() const {
  for (double v : {total, reconstruction, kl_z, kl_z0, kl_z1, controller_elbo, classifier_term})
    if (!std::isfinite(v)) return false;
  return true;
}

std::string LossBreakdown::csv_header() {
  return "step,split,variant,total,weight,gamma_recon,beta,reconstruction,kl_z,kl_z0,kl_z1,"
         "controller_elbo,classifier_term,cls_coeff,supervised,wall_time_s";
}

std::string LossBreakdown::csv_row(int64_t step, const std::string& split, const std::string& variant,
                                   double wall_time_s) const {
  std::string r = std::to_string(step) + "," + split + "," + variant;
  for (double v : {total, weight, gamma_recon, beta, reconstruction, kl_z, kl_z0, kl_z1, controller_elbo,
                   classifier_term, cls_coeff})
    r += "," + fmt(v);
  r += supervised ? ",1" : ",0";
  r += "," + fmt(wall_time_s);
  return r;
}

ControllerElbo controller_elbo(const VaeModel& m, GraphBinding& bind, Tensor y, CounterRng& ctrl_rng) {
  VaeModel::ControllerForward cf = m.controller_forward(bind, y, ctrl_rng);
  Tensor logp_y = cf.p_y_given_u.log_prob(y);
  Tensor kl_u = gaussian_kl_to_std(cf.q_u);
  return {logp_y - kl_u, cf.u, cf.p_z_given_u};
}

LossBreakdown elbo_vanilla(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                           int mc_samples) {
  Graph& g = bind.graph();
  Tensor x_t = g.constant(x);
  Tensor loss_acc;
  double recon_acc = 0, kl_acc = 0;
  for (int s = 0; s < mc_samples; ++s) {
    DiagGaussian q = m.encode(bind, x_t);
    Tensor z = gaussian_rsample(q, noise);
    Tensor recon = mean_all(bernoulli_logprob(m.decode(bind, z), x_t));
    Tensor kl = mean_all(gaussian_kl_to_std(q));
    Tensor loss = kl - recon;
    loss_acc = s == 0 ? loss : loss_acc + loss;
    recon_acc += recon.item();
    kl_acc += kl.item();
  }
  if (mc_samples > 1) loss_acc = loss_acc / static_cast<double>(mc_samples);
  LossBreakdown out;
  out.loss = loss_acc;
  out.total = loss_acc.item();
  out.reconstruction = recon_acc / mc_samples;
  out.kl_z = kl_acc / mc_samples;
  if (!out.finite()) throw std::runtime_error("elbo_vanilla: non-finite loss; " + out.csv_row(0, "-", "-", 0));
  return out;
}

LossBreakdown elbo_beta_gamma(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                              double gamma, double beta, int mc_samples) {
  if (!(gamma > 0) || !(beta > 0))
    throw std::invalid_argument("elbo_beta_gamma: coefficients must be positive, got gamma=" +
                                std::to_string(gamma) + " beta=" + std::to_string(beta));
  Graph& g = bind.graph();
  Tensor x_t = g.constant(x);
  Tensor loss_acc;
  double recon_acc = 0, kl_acc = 0;
  for (int s = 0; s < mc_samples; ++s) {
    DiagGaussian q = m.encode(bind, x_t);
    Tensor z = gaussian_rsample(q, noise);
    Tensor recon = mean_all(bernoulli_logprob(m.decode(bind, z), x_t));
    Tensor kl = mean_all(gaussian_kl_to_std(q));
    Tensor loss = kl * beta - recon * gamma;
    loss_acc = s == 0 ? loss : loss_acc + loss;
    recon_acc += recon.item();
    kl_acc += kl.item();
  }
  if (mc_samples > 1) loss_acc = loss_acc / static_cast<double>(mc_samples);
  LossBreakdown out;
  out.loss = loss_acc;
  out.total = loss_acc.item();
  out.gamma_recon = gamma;
  out.beta = beta;
  out.reconstruction = recon_acc / mc_samples;
  out.kl_z = kl_acc / mc_samples;
  if (!out.finite()) throw std::runtime_error("elbo_beta_gamma: non-finite loss; " + out.csv_row(0, "-", "-", 0));
  return out;
}

LossBreakdown elbo_free_pixels(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                               double R, int mc_samples) {
  if (R < 0) throw std::invalid_argument("elbo_free_pixels: R must be non-negative, got " + std::to_string(R));
  Graph& g = bind.graph();
  Tensor x_t = g.constant(x);
  Tensor loss_acc;
  double recon_acc = 0, kl_acc = 0;
  for (int s = 0; s < mc_samples; ++s) {
    DiagGaussian q = m.encode(bind, x_t);
    Tensor z = gaussian_rsample(q, noise);
    Tensor recon = mean_all(free_pixel_recon(m.decode(bind, z), x_t, R));
    Tensor kl = mean_all(gaussian_kl_to_std(q));
    Tensor loss = kl - recon;
    loss_acc = s == 0 ? loss : loss_acc + loss;
    recon_acc += recon.item();
    kl_acc += kl.item();
  }
  if (mc_samples > 1) loss_acc = loss_acc / static_cast<double>(mc_samples);
  LossBreakdown out;
  out.loss = loss_acc;
  out.total = loss_acc.item();
  out.reconstruction = recon_acc / mc_samples;
  out.kl_z = kl_acc / mc_samples;
  if (!out.finite()) throw std::runtime_error("elbo_free_pixels: non-finite loss; " + out.csv_row(0, "-", "-", 0));
  return out;
}

LossBreakdown elbo_hvae(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise,
                        int mc_samples) {
  Graph& g = bind.graph();
  Tensor x_t = g.constant(x);
  int64_t batch = x.dim(0);
  Tensor loss_acc;
  double recon_acc = 0, kl0_acc = 0, kl1_acc = 0;
  for (int s = 0; s < mc_samples; ++s) {
    VaeModel::HierPosterior hp = m.hier_encode(bind, x_t, noise);
    Tensor recon = mean_all(bernoulli_logprob(m.hier_decode(bind, hp.z0, hp.z1), x_t));
    Tensor kl0 = mean_all(gaussian_kl(hp.q_z0, m.prior_z0(bind, batch, std::nullopt)));
    Tensor kl1 = mean_all(gaussian_kl(hp.q_z1, m.hier_prior_z1(bind, hp.z0, std::nullopt)));
    Tensor loss = kl0 + kl1 - recon;
    loss_acc = s == 0 ? loss : loss_acc + loss;
    recon_acc += recon.item();
    kl0_acc += kl0.item();
    kl1_acc += kl1.item();
  }
  if (mc_samples > 1) loss_acc = loss_acc / static_cast<double>(mc_samples);
  LossBreakdown out;
  out.loss = loss_acc;
  out.total = loss_acc.item();
  out.reconstruction = recon_acc / mc_samples;
  out.kl_z0 = kl0_acc / mc_samples;
  out.kl_z1 = kl1_acc / mc_samples;
  if (!out.finite()) throw std::runtime_error("elbo_hvae: non-finite loss; " + out.csv_row(0, "-", "-", 0));
  return out;
}

LossBreakdown elbo_semafo_unsupervised(const VaeModel& m, GraphBinding& bind, const Array& x, NoiseStreams& rng,
                                       const SemafoOpts& opts) {
  if (!m.is_semafo()) throw GraphError("elbo_semafo_unsupervised: model variant has no controller");
  Graph& g = bind.graph();
  Tensor x_t = g.constant(x);
  Tensor loss_acc;
  double recon_acc = 0, kl_acc = 0, ctrl_acc = 0, cls_acc = 0;
  for (int s = 0; s < opts.mc_samples; ++s) {
    DiagGaussian q = m.encode(bind, x_t);
    Tensor z = gaussian_rsample(q, rng.z);
    Tensor recon = mean_all(bernoulli_logprob(m.decode(bind, z), x_t));
    Tensor elbo;
    if (opts.use_controller) {
      FactorizedLabel y_post = m.classify(bind, z);
      Tensor y = y_post.sample(rng.label);
      Tensor cls = mean_all(y_post.log_prob(y));
      ControllerElbo ce = controller_elbo(m, bind, y, rng.ctrl);
      Tensor ctrl = mean_all(ce.per_batch);
      Tensor kl = mean_all(gaussian_kl(q, ce.p_z_given_u));
      elbo = recon - kl + ctrl - cls;
      kl_acc += kl.item();
      ctrl_acc += ctrl.item();
      cls_acc += cls.item();
    } else {
      Tensor kl = mean_all(gaussian_kl_to_std(q));
      elbo = recon - kl;
      kl_acc += kl.item();
    }
    Tensor loss = neg(elbo);
    loss_acc = s == 0 ? loss : loss_acc + loss;
    recon_acc += recon.item();
  }
  if (opts.mc_samples > 1) loss_acc = loss_acc / static_cast<double>(opts.mc_samples);
  if (opts.weight != 1.0) loss_acc = loss_acc * opts.weight;
  LossBreakdown out;
  out.loss = loss_acc;
  out.total = loss_acc.item();
  out.weight = opts.weight;
  out.reconstruction = recon_acc / opts.mc_samples;
  out.kl_z = kl_acc / opts.mc_samples;
  out.controller_elbo = ctrl_acc / opts.mc_samples;
  out.classifier_term = cls_acc / opts.mc_samples;
  out.cls_coeff = opts.use_controller ? -1.0 : 0.0;
  if (!out.finite())
    throw std::runtime_error("elbo_semafo_unsupervised: non-finite loss; " + out.csv_row(0, "-", "-", 0));
  return out;
}

LossBreakdown elbo_semafo_supervised(const VaeModel& m, GraphBinding& bind, const Array& x, const Array& y,
                                     NoiseStreams& rng, const SemafoOpts& opts) {
  if (!m.is_semafo()) throw GraphError("elbo_semafo_supervised: model variant has no controller");
  if (y.dim(0) != x.dim(0))
    throw ShapeError("elbo_semafo_supervised: batch mismatch between x " + shape_str(x.shape()) + " and y " +
                     shape_str(y.shape()));
  Graph& g = bind.graph();
  Tensor x_t = g.constant(x);
  Tensor y_t = g.constant(y);
  Tensor loss_acc;
  double recon_acc = 0, kl_acc = 0, ctrl_acc = 0, cls_acc = 0;
  for (int s = 0; s < opts.mc_samples; ++s) {
    DiagGaussian q = m.encode(bind, x_t);
    Tensor z = gaussian_rsample(q, rng.z);
    Tensor recon = mean_all(bernoulli_logprob(m.decode(bind, z), x_t));
    Tensor elbo;
    if (opts.use_controller) {
      ControllerElbo ce = controller_elbo(m, bind, y_t, rng.ctrl);
      Tensor ctrl = mean_all(ce.per_batch);
      Tensor kl = mean_all(gaussian_kl(q, ce.p_z_given_u));
      elbo = recon - kl + ctrl;
      kl_acc += kl.item();
      ctrl_acc += ctrl.item();
    } else {
      validate_factor_rows(y, m.spec().factor_cards);
      Tensor kl = mean_all(gaussian_kl_to_std(q));
      elbo = recon - kl;
      kl_acc += kl.item();
    }
    Tensor loss = neg(elbo);
    if (opts.alpha != 0.0) {
      Tensor cls = mean_all(m.classify(bind, z).log_prob(y_t));
      loss = loss - cls * opts.alpha;
      cls_acc += cls.item();
    }
    loss_acc = s == 0 ? loss : loss_acc + loss;
    recon_acc += recon.item();
  }
  if (opts.mc_samples > 1) loss_acc = loss_acc / static_cast<double>(opts.mc_samples);
  LossBreakdown out;
  out.loss = loss_acc;
  out.total = loss_acc.item();
  out.supervised = true;
  out.reconstruction = recon_acc / opts.mc_samples;
  out.kl_z = kl_acc / opts.mc_samples;
  out.controller_elbo = ctrl_acc / opts.mc_samples;
  out.classifier_term = cls_acc / opts.mc_samples;
  out.cls_coeff = opts.alpha;
  if (!out.finite())
    throw std::runtime_error("elbo_semafo_supervised: non-finite loss; " + out.csv_row(0, "-", "-", 0));
  return out;
}

LossBreakdown elbo_semafo_hvae_unsupervised(const VaeModel& m, GraphBinding& bind, const Array& x,
                                            NoiseStreams& rng, const SemafoOpts& opts) {
  if (m.variant() != Variant::SemafoHvae)
    throw GraphError("elbo_semafo_hvae_unsupervised: model variant is not semafo-hvae");
  Graph& g = bind.graph();
  Tensor x_t = g.constant(x);
  int64_t batch = x.dim(0);
  Tensor loss_acc;
  double recon_acc = 0, kl0_acc = 0, kl1_acc = 0, ctrl_acc = 0, cls_acc = 0;
  for (int s = 0; s < opts.mc_samples; ++s) {
    VaeModel::HierPosterior hp = m.hier_encode(bind, x_t, rng.z);
    Tensor recon = mean_all(bernoulli_logprob(m.hier_decode(bind, hp.z0, hp.z1), x_t));
    Tensor elbo;
    if (opts.use_controller) {
      FactorizedLabel y_post = m.classify(bind, concat({hp.z0, hp.z1}, 1));
      Tensor y = y_post.sample(rng.label);
      Tensor cls = mean_all(y_post.log_prob(y));
      ControllerElbo ce = controller_elbo(m, bind, y, rng.ctrl);
      Tensor ctrl = mean_all(ce.per_batch);
      Tensor kl0 = mean_all(gaussian_kl(hp.q_z0, m.prior_z0(bind, batch, ce.u)));
      Tensor kl1 = mean_all(gaussian_kl(hp.q_z1, m.hier_prior_z1(bind, hp.z0, ce.u)));
      elbo = recon - kl1 - kl0 + ctrl - cls;
      kl0_acc += kl0.item();
      kl1_acc += kl1.item();
      ctrl_acc += ctrl.item();
      cls_acc += cls.item();
    } else {
      Tensor kl0 = mean_all(gaussian_kl_to_std(hp.q_z0));
      Tensor kl1 = mean_all(gaussian_kl_to_std(hp.q_z1));
      elbo = recon - kl1 - kl0;
      kl0_acc += kl0.item();
      kl1_acc += kl1.item();
    }
    Tensor loss = neg(elbo);
    loss_acc = s == 0 ? loss : loss_acc + loss;
    recon_acc += recon.item();
  }
  if (opts.mc_samples > 1) loss_acc = loss_acc / static_cast<double>(opts.mc_samples);
  if (opts.weight != 1.0) loss_acc = loss_acc * opts.weight;
  LossBreakdown out;
  out.loss = loss_acc;
  out.total = loss_acc.item();
  out.weight = opts.weight;
  out.reconstruction = recon_acc / opts.mc_samples;
  out.kl_z0 = kl0_acc / opts.mc_samples;
  out.kl_z1 = kl1_acc / opts.mc_samples;
  out.controller_elbo = ctrl_acc / opts.mc_samples;
  out.classifier_term = cls_acc / opts.mc_samples;
  out.cls_coeff = opts.use_controller ? -1.0 : 0.0;
  if (!out.finite())
    throw std::runtime_error("elbo_semafo_hvae_unsupervised: non-finite loss; " + out.csv_row(0, "-", "-", 0));
  return out;
}

LossBreakdown elbo_semafo_hvae_supervised(const VaeModel& m, GraphBinding& bind, const Array& x, const Array& y,
                                          NoiseStreams& rng, const SemafoOpts& opts) {
  if (m.variant() != Variant::SemafoHvae)
    throw GraphError("elbo_semafo_hvae_supervised: model variant is not semafo-hvae");
  Graph& g = bind.graph();
  Tensor x_t = g.constant(x);
  Tensor y_t = g.constant(y);
  int64_t batch = x.dim(0);
  Tensor loss_acc;
  double recon_acc = 0, kl0_acc = 0, kl1_acc = 0, ctrl_acc = 0, cls_acc = 0;
  for (int s = 0; s < opts.mc_samples; ++s) {
    VaeModel::HierPosterior hp = m.hier_encode(bind, x_t, rng.z);
    Tensor recon = mean_all(bernoulli_logprob(m.hier_decode(bind, hp.z0, hp.z1), x_t));
    Tensor elbo;
    if (opts.use_controller) {
      ControllerElbo ce = controller_elbo(m, bind, y_t, rng.ctrl);
      Tensor ctrl = mean_all(ce.per_batch);
      Tensor kl0 = mean_all(gaussian_kl(hp.q_z0, m.prior_z0(bind, batch, ce.u)));
      Tensor kl1 = mean_all(gaussian_kl(hp.q_z1, m.hier_prior_z1(bind, hp.z0, ce.u)));
      elbo = recon - kl1 - kl0 + ctrl;
      kl0_acc += kl0.item();
      kl1_acc += kl1.item();
      ctrl_acc += ctrl.item();
    } else {
      validate_factor_rows(y, m.spec().factor_cards);
      Tensor kl0 = mean_all(gaussian_kl_to_std(hp.q_z0));
      Tensor kl1 = mean_all(gaussian_kl_to_std(hp.q_z1));
      elbo = recon - kl1 - kl0;
      kl0_acc += kl0.item();
      kl1_acc += kl1.item();
    }
    Tensor loss = neg(elbo);
    if (opts.alpha != 0.0) {
      Tensor cls = mean_all(m.classify(bind, concat({hp.z0, hp.z1}, 1)).log_prob(y_t));
      loss = loss - cls * opts.alpha;
      cls_acc += cls.item();
    }
    loss_acc = s == 0 ? loss : loss_acc + loss;
    recon_acc += recon.item();
  }
  if (opts.mc_samples > 1) loss_acc = loss_acc / static_cast<double>(opts.mc_samples);
  LossBreakdown out;
  out.loss = loss_acc;
  out.total = loss_acc.item();
  out.supervised = true;
  out.reconstruction = recon_acc / opts.mc_samples;
  out.kl_z0 = kl0_acc / opts.mc_samples;
  out.kl_z1 = kl1_acc / opts.mc_samples;
  out.controller_elbo = ctrl_acc / opts.mc_samples;
  out.classifier_term = cls_acc / opts.mc_samples;
  out.cls_coeff = opts.alpha;
  if (!out.finite())
    throw std::runtime_error("elbo_semafo_hvae_supervised: non-finite loss; " + out.csv_row(0, "-", "-", 0));
  return out;
}

LossBreakdown plain_loss(const VaeModel& m, GraphBinding& bind, const Array& x, CounterRng& noise, double gamma,
                         double beta, double R, int mc_samples) {
  switch (m.variant()) {
    case Variant::Vanilla:
      return elbo_vanilla(m, bind, x, noise, mc_samples);
    case Variant::BetaGamma:
      return elbo_beta_gamma(m, bind, x, noise, gamma, beta, mc_samples);
    case Variant::FreePixels:
      return elbo_free_pixels(m, bind, x, noise, R, mc_samples);
    case Variant::Hvae:
      return elbo_hvae(m, bind, x, noise, mc_samples);
    default:
      throw GraphError("plain_loss: variant '" + variant_name(m.variant()) + "' trains through the semafo path");
  }
}

}  // namespace semafo
