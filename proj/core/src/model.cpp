#include "semafo/model.hpp"

#include <cmath>
#include <stdexcept>

#include "semafo/checkpoint.hpp"

namespace semafo {

namespace {

int total_cards(const std::vector<int>& cards) {
  int t = 0;
  for (int k : cards) t += k;
  return t;
}

}  // namespace

int VaeModel::d_y() const { return total_cards(spec_.factor_cards); }

VaeModel::Spec VaeModel::spec_from_config(const ExperimentConfig& cfg, int pixels,
                                          const std::vector<int>& factor_cards) {
  Spec s;
  s.variant = cfg.variant;
  s.pixels = pixels;
  s.d_z = cfg.d_z;
  s.d_z1 = cfg.d_z1;
  s.factor_cards = factor_cards;
  s.tau = cfg.tau;
  s.dtype = cfg.dtype();
  return s;
}

VaeModel::VaeModel(const Spec& spec, uint64_t seed) : spec_(spec) {
  if (spec_.pixels < 1) throw std::invalid_argument("VaeModel: pixels must be positive");
  if (is_semafo() && spec_.factor_cards.empty())
    throw std::invalid_argument("VaeModel: semafo variants need a factor schema");
  CounterRng rng(seed, rng_stream::kInit);
  Dtype dt = spec_.dtype;

  enc_trunk_ = Mlp::make(params_, "enc.trunk", {spec_.pixels, spec_.enc_h1, spec_.enc_h2}, Act::Elu, rng, dt);
  if (is_hierarchical()) {
    enc1_mu_ = Linear::make(params_, "enc.z1_mu", spec_.enc_h2, spec_.d_z1, rng, Init::Glorot, dt);
    enc1_logstd_ = Linear::make(params_, "enc.z1_logstd", spec_.enc_h2, spec_.d_z1, rng, Init::Glorot, dt);
    enc0_merge_ = Linear::make(params_, "enc.z0_merge", spec_.enc_h2 + spec_.d_z1, spec_.enc_h2, rng,
                               Init::Glorot, dt);
  }
  enc_mu_ = Linear::make(params_, "enc.mu", spec_.enc_h2, spec_.d_z, rng, Init::Glorot, dt);
  enc_logstd_ = Linear::make(params_, "enc.logstd", spec_.enc_h2, spec_.d_z, rng, Init::Glorot, dt);

  int dec_in = is_hierarchical() ? spec_.d_z + spec_.d_z1 : spec_.d_z;
  dec_trunk_ = Mlp::make(params_, "dec.trunk", {dec_in, spec_.enc_h2, spec_.enc_h1}, Act::Elu, rng, dt);
  dec_logits_ = Linear::make(params_, "dec.logits", spec_.enc_h1, spec_.pixels, rng, Init::Zero, dt);

  if (is_hierarchical()) {
    int prior1_in = is_semafo() ? spec_.d_z + d_u() : spec_.d_z;
    prior1_trunk_ = Mlp::make(params_, "prior.z1_trunk", {prior1_in, spec_.enc_h2}, Act::Elu, rng, dt);
    prior1_mu_ = Linear::make(params_, "prior.z1_mu", spec_.enc_h2, spec_.d_z1, rng, Init::Glorot, dt);
    prior1_logstd_ = Linear::make(params_, "prior.z1_logstd", spec_.enc_h2, spec_.d_z1, rng, Init::Glorot, dt);
  }

  if (is_semafo()) {
    int cls_in = is_hierarchical() ? spec_.d_z + spec_.d_z1 : spec_.d_z;
    cls_ = Linear::make(params_, "cls", cls_in, d_y(), rng, Init::Glorot, dt);
    ctrl_enc_ = Mlp::make(params_, "ctrl.enc", {d_y(), spec_.ctrl_h, spec_.ctrl_h}, Act::Relu, rng, dt);
    ctrl_mu_ = Linear::make(params_, "ctrl.mu", spec_.ctrl_h, d_u(), rng, Init::Glorot, dt);
    ctrl_logstd_ = Linear::make(params_, "ctrl.logstd", spec_.ctrl_h, d_u(), rng, Init::Glorot, dt);
    ctrl_dec_ = Mlp::make(params_, "ctrl.dec", {d_u(), spec_.ctrl_h, spec_.ctrl_h}, Act::Relu, rng, dt);
    ctrl_y_logits_ = Linear::make(params_, "ctrl.y_logits", spec_.ctrl_h, d_y(), rng, Init::Glorot, dt);
    prior_mu_ = Linear::make(params_, "prior.z_mu", d_u(), spec_.d_z, rng, Init::Glorot, dt);
    prior_logstd_ = Linear::make(params_, "prior.z_logstd", d_u(), spec_.d_z, rng, Init::Glorot, dt);
  }
}

Tensor VaeModel::normalized_input(GraphBinding& bind, Tensor x) const {
  const Array& xv = x.value();
  if (xv.rank() != 2 || xv.dim(1) != spec_.pixels)
    throw ShapeError("encode: expected [batch," + std::to_string(spec_.pixels) + "] pixel matrix, got " +
                     shape_str(xv.shape()));
  for (int64_t i = 0; i < xv.numel(); ++i) {
    double v = xv.at(i);
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("encode: pixel value " + std::to_string(v) + " outside [0,1]");
  }
  (void)bind;
  return x * 2.0 - 1.0;
}

Tensor VaeModel::trunk_features(GraphBinding& bind, Tensor x) const {
  return enc_trunk_(bind, normalized_input(bind, x));
}

DiagGaussian VaeModel::encode(GraphBinding& bind, Tensor x) const {
  if (is_hierarchical())
    throw GraphError("encode: hierarchical variant, use hier_encode for the (z0, z1) posterior pair");
  Tensor f = trunk_features(bind, x);
  return clamped_gaussian(enc_mu_(bind, f), enc_logstd_(bind, f), spec_.log_std_clamp);
}

BernoulliImage VaeModel::decode(GraphBinding& bind, Tensor z) const {
  int expect = is_hierarchical() ? spec_.d_z + spec_.d_z1 : spec_.d_z;
  if (z.shape().size() != 2 || z.shape()[1] != expect)
    throw ShapeError("decode: expected [batch," + std::to_string(expect) + "] latents, got " +
                     shape_str(z.shape()));
  return {dec_logits_(bind, dec_trunk_(bind, z))};
}

FactorizedLabel VaeModel::classify(GraphBinding& bind, Tensor z) const {
  if (!is_semafo())
    throw GraphError("classify: variant '" + variant_name(spec_.variant) + "' has no q(y|z) head");
  return FactorizedLabel::from_logits(cls_(bind, z), spec_.factor_cards, spec_.tau);
}

DiagGaussian VaeModel::controller_posterior_u(GraphBinding& bind, Tensor y) const {
  if (!is_semafo())
    throw GraphError("controller: variant '" + variant_name(spec_.variant) + "' has no controller");
  validate_factor_rows(y.value(), spec_.factor_cards);
  Tensor h = ctrl_enc_(bind, y);
  return clamped_gaussian(ctrl_mu_(bind, h), ctrl_logstd_(bind, h), spec_.log_std_clamp);
}

FactorizedLabel VaeModel::controller_label_lik(GraphBinding& bind, Tensor u) const {
  Tensor h = ctrl_dec_(bind, u);
  return FactorizedLabel::from_logits(ctrl_y_logits_(bind, h), spec_.factor_cards, spec_.tau);
}

DiagGaussian VaeModel::prior_z_given_u(GraphBinding& bind, Tensor u) const {
  return clamped_gaussian(prior_mu_(bind, u), prior_logstd_(bind, u), spec_.log_std_clamp);
}

VaeModel::ControllerForward VaeModel::controller_forward(GraphBinding& bind, Tensor y, CounterRng& rng) const {
  ControllerForward out{controller_posterior_u(bind, y), {}, {}, {}};
  out.u = gaussian_rsample(out.q_u, rng);
  out.p_y_given_u = controller_label_lik(bind, out.u);
  out.p_z_given_u = prior_z_given_u(bind, out.u);
  return out;
}

VaeModel::HierPosterior VaeModel::hier_encode(GraphBinding& bind, Tensor x, CounterRng& noise) const {
  if (!is_hierarchical())
    throw GraphError("hier_encode: variant '" + variant_name(spec_.variant) + "' is not hierarchical");
  Tensor f = trunk_features(bind, x);
  HierPosterior hp;
  hp.q_z1 = clamped_gaussian(enc1_mu_(bind, f), enc1_logstd_(bind, f), spec_.log_std_clamp);
  hp.z1 = gaussian_rsample(hp.q_z1, noise);
  Tensor merged = elu(enc0_merge_(bind, concat({f, hp.z1}, 1)));
  hp.q_z0 = clamped_gaussian(enc_mu_(bind, merged), enc_logstd_(bind, merged), spec_.log_std_clamp);
  hp.z0 = gaussian_rsample(hp.q_z0, noise);
  return hp;
}

DiagGaussian VaeModel::hier_prior_z1(GraphBinding& bind, Tensor z0, const std::optional<Tensor>& u) const {
  if (!is_hierarchical()) throw GraphError("hier_prior_z1: variant is not hierarchical");
  Tensor in = z0;
  if (is_semafo()) {
    if (!u) throw GraphError("hier_prior_z1: semafo-hvae prior needs a controller latent u");
    in = concat({z0, *u}, 1);
  }
  Tensor h = prior1_trunk_(bind, in);
  return clamped_gaussian(prior1_mu_(bind, h), prior1_logstd_(bind, h), spec_.log_std_clamp);
}

DiagGaussian VaeModel::prior_z0(GraphBinding& bind, int64_t batch, const std::optional<Tensor>& u) const {
  if (is_semafo()) {
    if (!u) throw GraphError("prior_z0: semafo variant prior needs a controller latent u");
    return prior_z_given_u(bind, *u);
  }
  return std_normal_like(bind.graph(), {batch, spec_.d_z});
}

BernoulliImage VaeModel::hier_decode(GraphBinding& bind, Tensor z0, Tensor z1) const {
  if (!is_hierarchical()) throw GraphError("hier_decode: variant is not hierarchical");
  return decode(bind, concat({z0, z1}, 1));
}

std::vector<double> VaeModel::decoder_unit_weight_norms() const {
  const Array& w = params_.value(dec_trunk_.layers[0].w);
  int64_t rows = w.dim(0), cols = w.dim(1);
  std::vector<double> norms(static_cast<size_t>(rows), 0.0);
  for (int64_t i = 0; i < rows; ++i) {
    double s = 0;
    for (int64_t j = 0; j < cols; ++j) {
      double v = w.at(i * cols + j);
      s += v * v;
    }
    norms[static_cast<size_t>(i)] = std::sqrt(s);
  }
  return norms;
}

void VaeModel::save(const std::string& path, const ExperimentConfig& cfg) const {
  Checkpoint ckpt;
  ckpt.config_text = config_to_text(cfg);
  ckpt.config_hash = config_hash(cfg);
  for (const auto& item : params_.items()) ckpt.tensors.emplace_back(item.name, item.value.cast(Dtype::Float64));
  save_checkpoint(path, ckpt);
}

void VaeModel::load_params_from(const Checkpoint& ckpt) {
  for (auto& item : params_.items()) {
    const Array* stored = ckpt.find(item.name);
    if (!stored) throw std::runtime_error("checkpoint: missing parameter '" + item.name + "'");
    if (stored->shape() != item.value.shape())
      throw std::runtime_error("checkpoint: parameter '" + item.name + "' has shape " +
                               shape_str(stored->shape()) + ", model expects " + shape_str(item.value.shape()));
    item.value = stored->cast(item.value.dtype());
  }
}

LoadedModel VaeModel::load(const std::string& path, int pixels, const std::vector<int>& factor_cards) {
  Checkpoint ckpt = load_checkpoint(path);
  ExperimentConfig cfg = config_from_text(ckpt.config_text);
  cfg.resolve();
  if (config_hash(cfg) != ckpt.config_hash)
    throw std::runtime_error("checkpoint: config hash mismatch in " + path);
  VaeModel model(spec_from_config(cfg, pixels, factor_cards), cfg.seed);
  model.load_params_from(ckpt);
  return {std::move(model), std::move(cfg)};
}

}  // namespace semafo
