#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "semafo/rng.hpp"
#include "semafo/tensor.hpp"

namespace semafo::testing {

// Builds a scalar loss from leaf tensors created over `leaves`.
using LossBuilder = std::function<Tensor(Graph&, std::vector<Tensor>&)>;

struct FdReport {
  double max_rel_err = 0;
  double max_abs_err = 0;
  int points = 0;
};

inline double eval_loss(const std::vector<Array>& leaves, const LossBuilder& build) {
  Graph g(Dtype::Float64);
  std::vector<Tensor> ts;
  ts.reserve(leaves.size());
  for (const Array& a : leaves) ts.push_back(g.leaf(a, true));
  return build(g, ts).item();
}

// Central finite differences against the tape gradients, h = 1e-5 in f64.
inline FdReport check_gradients(std::vector<Array> leaves, const LossBuilder& build, double h = 1e-5) {
  Graph g(Dtype::Float64);
  std::vector<Tensor> ts;
  for (const Array& a : leaves) ts.push_back(g.leaf(a, true));
  Tensor loss = build(g, ts);
  g.backward(loss);
  std::vector<Array> grads;
  for (Tensor& t : ts) grads.push_back(t.grad());

  FdReport rep;
  for (size_t li = 0; li < leaves.size(); ++li) {
    for (int64_t i = 0; i < leaves[li].numel(); ++i) {
      double orig = leaves[li].at(i);
      leaves[li].set(i, orig + h);
      double fp = eval_loss(leaves, build);
      leaves[li].set(i, orig - h);
      double fm = eval_loss(leaves, build);
      leaves[li].set(i, orig);
      double numeric = (fp - fm) / (2 * h);
      double analytic = grads[li].at(i);
      double abs_err = std::abs(numeric - analytic);
      double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-3});
      rep.max_rel_err = std::max(rep.max_rel_err, abs_err / denom);
      rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
      ++rep.points;
    }
  }
  return rep;
}

// Uniform values in [lo, hi], kept at least `kink_margin` away from `kink`.
inline Array random_array(Shape shape, CounterRng& rng, double lo = -2.0, double hi = 2.0, double kink = 0.0,
                          double kink_margin = 0.0) {
  Array a(std::move(shape), Dtype::Float64);
  for (int64_t i = 0; i < a.numel(); ++i) {
    double v;
    do {
      v = lo + (hi - lo) * rng.uniform();
    } while (kink_margin > 0 && std::abs(v - kink) < kink_margin);
    a.set(i, v);
  }
  return a;
}

inline bool arrays_equal_bits(const Array& a, const Array& b) {
  if (a.shape() != b.shape() || a.dtype() != b.dtype()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a.at(i) != b.at(i)) return false;
  return true;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

inline double stderr_of(const std::vector<double>& v) {
  double m = mean_of(v);
  double var = 0;
  for (double x : v) var += (x - m) * (x - m);
  var /= std::max<double>(1.0, static_cast<double>(v.size() - 1));
  return std::sqrt(var / static_cast<double>(v.size()));
}

}  // namespace semafo::testing
