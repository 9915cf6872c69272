#include "semafo/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace semafo {

AdamState::AdamState(const std::vector<const Array*>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Array* p : params) {
    m_.push_back(Array::zeros(p->shape(), Dtype::Float64));
    v_.push_back(Array::zeros(p->shape(), Dtype::Float64));
  }
}

bool AdamState::step(std::vector<Array*> params, const std::vector<const Array*>& grads, const AdamConfig& cfg) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw std::invalid_argument("AdamState::step: slot count mismatch");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i] == nullptr) continue;
    if (grads[i]->numel() != m_[i].numel())
      throw std::invalid_argument("AdamState::step: gradient shape mismatch at slot " + std::to_string(i));
    if (!grads[i]->all_finite()) {
      if (cfg.on_non_finite == NonFinitePolicy::Error)
        throw std::runtime_error("AdamState::step: non-finite gradient at slot " + std::to_string(i));
      ++skipped_;
      return false;
    }
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < grads.size(); ++i) {
    if (grads[i] == nullptr) continue;
    const Array& g = *grads[i];
    Array& p = *params[i];
    double* mp = m_[i].data_f64();
    double* vp = v_[i].data_f64();
    for (int64_t j = 0; j < g.numel(); ++j) {
      double gj = g.at(j);
      mp[j] = cfg.beta1 * mp[j] + (1.0 - cfg.beta1) * gj;
      vp[j] = cfg.beta2 * vp[j] + (1.0 - cfg.beta2) * gj * gj;
      double mhat = mp[j] / bc1;
      double vhat = vp[j] / bc2;
      p.set(j, p.at(j) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
    }
  }
  return true;
}

}  // namespace semafo
