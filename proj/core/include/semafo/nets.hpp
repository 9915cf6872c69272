#pragma once

#include <string>
#include <vector>

#include "semafo/rng.hpp"
#include "semafo/tensor.hpp"

namespace semafo {

// Ordered, named parameter storage. Order is the identity used by the Adam
// slots and the checkpoint container, so creation order must be
// deterministic.
class ParamSet {
 public:
  struct Item {
    std::string name;
    Array value;
  };

  int add(const std::string& name, Array value);
  int index_of(const std::string& name) const;  // -1 when absent
  size_t size() const { return items_.size(); }
  Array& value(int idx) { return items_[static_cast<size_t>(idx)].value; }
  const Array& value(int idx) const { return items_[static_cast<size_t>(idx)].value; }
  const std::string& name(int idx) const { return items_[static_cast<size_t>(idx)].name; }
  std::vector<Item>& items() { return items_; }
  const std::vector<Item>& items() const { return items_; }

 private:
  std::vector<Item> items_;
};

// Lazily binds ParamSet entries as leaves of one Graph, each at most once, so
// gradient accumulation per parameter is correct no matter how many times a
// layer is invoked in the step.
class GraphBinding {
 public:
  GraphBinding(Graph& g, ParamSet& ps) : g_(&g), ps_(&ps), leaf_ids_(ps.size(), -1) {}

  // Adopts existing graph leaves (one per parameter, in ParamSet order)
  // instead of creating fresh ones; gradient checks drive parameters through
  // the leaves they created themselves.
  GraphBinding(Graph& g, ParamSet& ps, const std::vector<Tensor>& preset);

  Graph& graph() { return *g_; }
  ParamSet& params() { return *ps_; }
  Tensor param(int idx);
  bool bound(int idx) const { return leaf_ids_[static_cast<size_t>(idx)] >= 0; }

  // After backward: gradient of a bound parameter, nullptr when the
  // parameter never entered this graph.
  const Array* grad_of(int idx) const;

 private:
  Graph* g_;
  ParamSet* ps_;
  std::vector<int> leaf_ids_;
};

enum class Act { Elu, Relu, Tanh, None };
Tensor activate(Act a, Tensor x);

enum class Init { Glorot, Zero };

struct Linear {
  int w = -1, b = -1;
  int in = 0, out = 0;

  static Linear make(ParamSet& ps, const std::string& prefix, int in, int out, CounterRng& rng,
                     Init init = Init::Glorot, Dtype dtype = Dtype::Float64);
  Tensor operator()(GraphBinding& bind, Tensor x) const;
};

// Fully connected trunk: activation after every layer.
struct Mlp {
  std::vector<Linear> layers;
  Act act = Act::Elu;

  static Mlp make(ParamSet& ps, const std::string& prefix, const std::vector<int>& widths, Act act,
                  CounterRng& rng, Dtype dtype = Dtype::Float64);
  Tensor operator()(GraphBinding& bind, Tensor x) const;
};

Array glorot_uniform(Shape shape, CounterRng& rng, Dtype dtype);

}  // namespace semafo
