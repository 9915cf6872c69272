#include "semafo/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace semafo {

int ParamSet::add(const std::string& name, Array value) {
  if (index_of(name) >= 0) throw std::invalid_argument("ParamSet::add: duplicate parameter name " + name);
  items_.push_back({name, std::move(value)});
  return static_cast<int>(items_.size()) - 1;
}

int ParamSet::index_of(const std::string& name) const {
  for (size_t i = 0; i < items_.size(); ++i)
    if (items_[i].name == name) return static_cast<int>(i);
  return -1;
}

GraphBinding::GraphBinding(Graph& g, ParamSet& ps, const std::vector<Tensor>& preset)
    : g_(&g), ps_(&ps), leaf_ids_(ps.size(), -1) {
  if (preset.size() != ps.size())
    throw std::invalid_argument("GraphBinding: preset leaf count " + std::to_string(preset.size()) +
                                " != parameter count " + std::to_string(ps.size()));
  for (size_t i = 0; i < preset.size(); ++i) {
    if (preset[i].g != &g) throw std::invalid_argument("GraphBinding: preset leaf from a different graph");
    if (preset[i].value().shape() != ps.value(static_cast<int>(i)).shape())
      throw std::invalid_argument("GraphBinding: preset leaf shape mismatch at " + ps.name(static_cast<int>(i)));
    leaf_ids_[i] = preset[i].id;
  }
}

Tensor GraphBinding::param(int idx) {
  if (idx < 0 || static_cast<size_t>(idx) >= leaf_ids_.size())
    throw std::invalid_argument("GraphBinding::param: bad index " + std::to_string(idx));
  int& id = leaf_ids_[static_cast<size_t>(idx)];
  if (id < 0) {
    Tensor t = g_->leaf(ps_->value(idx), /*requires_grad=*/true);
    id = t.id;
  }
  return {g_, id};
}

const Array* GraphBinding::grad_of(int idx) const {
  int id = leaf_ids_[static_cast<size_t>(idx)];
  if (id < 0) return nullptr;
  Tensor t{g_, id};
  if (!t.has_grad()) return nullptr;
  return &t.grad();
}

Tensor activate(Act a, Tensor x) {
  switch (a) {
    case Act::Elu:
      return elu(x);
    case Act::Relu:
      return relu(x);
    case Act::Tanh:
      return tanh(x);
    case Act::None:
      return x;
  }
  throw std::logic_error("activate: bad enum");
}

Array glorot_uniform(Shape shape, CounterRng& rng, Dtype dtype) {
  int64_t fan_in = shape.size() >= 1 ? shape[0] : 1;
  int64_t fan_out = shape.size() >= 2 ? shape[1] : 1;
  double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Array a(shape, dtype);
  for (int64_t i = 0; i < a.numel(); ++i) a.set(i, (rng.uniform() * 2.0 - 1.0) * limit);
  return a;
}

Linear Linear::make(ParamSet& ps, const std::string& prefix, int in, int out, CounterRng& rng, Init init,
                    Dtype dtype) {
  Linear l;
  l.in = in;
  l.out = out;
  Array w = init == Init::Glorot ? glorot_uniform({in, out}, rng, dtype) : Array::zeros({in, out}, dtype);
  l.w = ps.add(prefix + ".w", std::move(w));
  l.b = ps.add(prefix + ".b", Array::zeros({out}, dtype));
  return l;
}

Tensor Linear::operator()(GraphBinding& bind, Tensor x) const {
  if (x.shape().size() != 2 || x.shape()[1] != in)
    throw ShapeError("Linear: input shape " + shape_str(x.shape()) + " incompatible with [*," +
                     std::to_string(in) + "]");
  return matmul(x, bind.param(w)) + bind.param(b);
}

Mlp Mlp::make(ParamSet& ps, const std::string& prefix, const std::vector<int>& widths, Act act, CounterRng& rng,
              Dtype dtype) {
  if (widths.size() < 2) throw std::invalid_argument("Mlp::make: need at least input and output widths");
  Mlp m;
  m.act = act;
  for (size_t i = 0; i + 1 < widths.size(); ++i)
    m.layers.push_back(Linear::make(ps, prefix + "." + std::to_string(i), widths[i], widths[i + 1], rng,
                                    Init::Glorot, dtype));
  return m;
}

Tensor Mlp::operator()(GraphBinding& bind, Tensor x) const {
  for (const Linear& l : layers) x = activate(act, l(bind, x));
  return x;
}

}  // namespace semafo
