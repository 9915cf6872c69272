#include "semafo/distributions.hpp"

#include <cmath>
#include <stdexcept>

namespace semafo {

namespace {

Array noise_like(const Shape& shape, Dtype dt, CounterRng& rng, bool gumbel_noise) {
  Array a(shape, dt);
  for (int64_t i = 0; i < a.numel(); ++i) a.set(i, gumbel_noise ? rng.gumbel() : rng.normal());
  return a;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

constexpr double kLog2Pi = 1.8378770664093454836;

}  // namespace

DiagGaussian clamped_gaussian(Tensor mean, Tensor raw_log_std, double clamp) {
  return {mean, clip(raw_log_std, -clamp, clamp)};
}

DiagGaussian std_normal_like(Graph& g, const Shape& shape) {
  Tensor zero = g.constant(Array::zeros(shape, g.dtype()));
  return {zero, zero};
}

Tensor gaussian_rsample(const DiagGaussian& d, CounterRng& rng) {
  check_same_shape(d.mean, d.log_std, "gaussian_rsample");
  Graph& g = *d.mean.g;
  Tensor eps = g.constant(noise_like(d.mean.shape(), g.dtype(), rng, false));
  return d.mean + exp(d.log_std) * eps;
}

Tensor gaussian_kl(const DiagGaussian& q, const DiagGaussian& p) {
  check_same_shape(q.mean, q.log_std, "gaussian_kl");
  check_same_shape(q.mean, p.mean, "gaussian_kl");
  check_same_shape(p.mean, p.log_std, "gaussian_kl");
  // log sp - log sq + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2, summed over features
  Tensor var_q = exp(q.log_std * 2.0);
  Tensor var_p = exp(p.log_std * 2.0);
  Tensor elem = p.log_std - q.log_std + (var_q + square(q.mean - p.mean)) / (var_p * 2.0) - 0.5;
  return sum(elem, elem.shape().size() > 1 ? 1 : 0);
}

Tensor gaussian_kl_to_std(const DiagGaussian& q) {
  check_same_shape(q.mean, q.log_std, "gaussian_kl_to_std");
  Tensor elem = (square(q.mean) + exp(q.log_std * 2.0) - 1.0) * 0.5 - q.log_std;
  return sum(elem, elem.shape().size() > 1 ? 1 : 0);
}

Tensor gaussian_logprob(const DiagGaussian& d, Tensor value) {
  check_same_shape(d.mean, value, "gaussian_logprob");
  Tensor z = (value - d.mean) / exp(d.log_std);
  Tensor elem = (square(z) + kLog2Pi) * -0.5 - d.log_std;
  return sum(elem, elem.shape().size() > 1 ? 1 : 0);
}

Tensor bernoulli_logprob(const BernoulliImage& d, Tensor x) {
  check_same_shape(d.logits, x, "bernoulli_logprob");
  const Array& xv = x.value();
  for (int64_t i = 0; i < xv.numel(); ++i) {
    double v = xv.at(i);
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument("bernoulli_logprob: target value " + std::to_string(v) + " outside [0,1]");
  }
  Tensor elem = x * d.logits - softplus(d.logits);
  return sum(elem, elem.shape().size() > 1 ? 1 : 0);
}

Tensor bernoulli_mean(const BernoulliImage& d) { return sigmoid(d.logits); }

Tensor gumbel_softmax_sample(const RelaxedCategorical& d, CounterRng& rng) {
  if (!(d.temperature > 0))
    throw std::invalid_argument("gumbel_softmax_sample: temperature must be positive, got " +
                                std::to_string(d.temperature));
  Graph& g = *d.logits.g;
  Tensor noise = g.constant(noise_like(d.logits.shape(), g.dtype(), rng, true));
  return softmax((d.logits + noise) / d.temperature, static_cast<int>(d.logits.shape().size()) - 1);
}

Tensor categorical_kl_to_uniform(const RelaxedCategorical& d) {
  int axis = static_cast<int>(d.logits.shape().size()) - 1;
  int64_t k = d.logits.shape().back();
  Tensor lp = log_softmax(d.logits, axis);
  Tensor p = exp(lp);
  return sum(p * lp, axis) + std::log(static_cast<double>(k));
}

Tensor categorical_logprob(const RelaxedCategorical& d, Tensor value) {
  check_same_shape(d.logits, value, "categorical_logprob");
  int axis = static_cast<int>(d.logits.shape().size()) - 1;
  return sum(value * log_softmax(d.logits, axis), axis);
}

FactorizedLabel FactorizedLabel::from_logits(Tensor logits, const std::vector<int>& cardinalities, double tau) {
  if (logits.shape().size() != 2)
    throw ShapeError("FactorizedLabel: logits must be [batch, d_y], got " + shape_str(logits.shape()));
  int total = 0;
  for (int k : cardinalities) total += k;
  if (logits.shape()[1] != total)
    throw ShapeError("FactorizedLabel: logits dim " + std::to_string(logits.shape()[1]) +
                     " != sum of cardinalities " + std::to_string(total));
  FactorizedLabel out;
  out.cardinalities = cardinalities;
  int64_t batch = logits.shape()[0];
  int64_t off = 0;
  for (int k : cardinalities) {
    out.blocks.push_back({slice(logits, {0, off}, {batch, k}), tau});
    off += k;
  }
  return out;
}

int FactorizedLabel::total_dim() const {
  int t = 0;
  for (int k : cardinalities) t += k;
  return t;
}

Tensor FactorizedLabel::sample(CounterRng& rng) const {
  std::vector<Tensor> parts;
  parts.reserve(blocks.size());
  for (const RelaxedCategorical& b : blocks) parts.push_back(gumbel_softmax_sample(b, rng));
  return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

Tensor FactorizedLabel::log_prob(Tensor value) const {
  if (value.shape().size() != 2 || value.shape()[1] != total_dim())
    throw ShapeError("FactorizedLabel::log_prob: value shape " + shape_str(value.shape()) + " != [batch," +
                     std::to_string(total_dim()) + "]");
  int64_t batch = value.shape()[0];
  Tensor acc;
  int64_t off = 0;
  for (size_t i = 0; i < blocks.size(); ++i) {
    int64_t k = cardinalities[i];
    Tensor v = slice(value, {0, off}, {batch, k});
    Tensor lp = categorical_logprob(blocks[i], v);
    acc = (i == 0) ? lp : acc + lp;
    off += k;
  }
  return acc;
}

Tensor FactorizedLabel::kl_to_uniform() const {
  Tensor acc;
  for (size_t i = 0; i < blocks.size(); ++i) {
    Tensor kl = categorical_kl_to_uniform(blocks[i]);
    acc = (i == 0) ? kl : acc + kl;
  }
  return acc;
}

Tensor FactorizedLabel::probs() const {
  std::vector<Tensor> parts;
  parts.reserve(blocks.size());
  for (const RelaxedCategorical& b : blocks)
    parts.push_back(softmax(b.logits, static_cast<int>(b.logits.shape().size()) - 1));
  return parts.size() == 1 ? parts[0] : concat(parts, 1);
}

void validate_factor_rows(const Array& value, const std::vector<int>& cardinalities, double tol) {
  if (value.rank() != 2) throw std::invalid_argument("validate_factor_rows: expected [batch, d_y] matrix");
  int total = 0;
  for (int k : cardinalities) total += k;
  if (value.dim(1) != total)
    throw std::invalid_argument("validate_factor_rows: row dim " + std::to_string(value.dim(1)) +
                                " != sum of cardinalities " + std::to_string(total));
  int64_t batch = value.dim(0);
  for (int64_t r = 0; r < batch; ++r) {
    int64_t off = 0;
    for (int k : cardinalities) {
      double s = 0;
      for (int j = 0; j < k; ++j) {
        double v = value.at(r * total + off + j);
        if (v < -tol)
          throw std::invalid_argument("validate_factor_rows: negative entry " + std::to_string(v) + " in row " +
                                      std::to_string(r));
        s += v;
      }
      if (std::abs(s - 1.0) > tol)
        throw std::invalid_argument("validate_factor_rows: block of row " + std::to_string(r) + " sums to " +
                                    std::to_string(s) + ", expected 1");
      off += k;
    }
  }
}

}  // namespace semafo
