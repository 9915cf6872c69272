#include "semafo/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace semafo {

namespace {

template <class T>
T* ptr(Array& a);
template <>
float* ptr<float>(Array& a) {
  return a.data_f32();
}
template <>
double* ptr<double>(Array& a) {
  return a.data_f64();
}

template <class T>
const T* cptr(const Array& a);
template <>
const float* cptr<float>(const Array& a) {
  return a.data_f32();
}
template <>
const double* cptr<double>(const Array& a) {
  return a.data_f64();
}

#define SEMAFO_DISPATCH(dt, ...)      \
  do {                                \
    if ((dt) == Dtype::Float32) {     \
      using scalar_t = float;         \
      __VA_ARGS__;                    \
    } else {                          \
      using scalar_t = double;        \
      __VA_ARGS__;                    \
    }                                 \
  } while (0)

inline double stable_softplus(double x) {
  return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double stable_sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Strides of `shape` right-aligned into a frame of rank `out_rank`;
// broadcast dimensions get stride 0.
std::vector<int64_t> aligned_strides(const Shape& shape, const Shape& out, const char* op) {
  size_t r = shape.size(), ro = out.size();
  std::vector<int64_t> st(ro, 0);
  int64_t acc = 1;
  for (size_t i = 0; i < r; ++i) {
    size_t di = r - 1 - i;       // dim index in shape
    size_t doi = ro - 1 - i;     // dim index in out
    int64_t d = shape[di];
    if (d == out[doi]) {
      st[doi] = acc;
    } else if (d == 1) {
      st[doi] = 0;
    } else {
      throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(shape) + " to " + shape_str(out));
    }
    acc *= d;
  }
  return st;
}

// Odometer over an output shape driving up to two operand offsets.
template <class F>
void for_each_bcast(const Shape& out, const std::vector<int64_t>& sa, const std::vector<int64_t>& sb, F f) {
  int64_t n = shape_numel(out);
  int rank = static_cast<int>(out.size());
  std::vector<int64_t> c(static_cast<size_t>(rank), 0);
  int64_t ia = 0, ib = 0;
  for (int64_t io = 0; io < n; ++io) {
    f(io, ia, ib);
    for (int d = rank - 1; d >= 0; --d) {
      ++c[static_cast<size_t>(d)];
      ia += sa[static_cast<size_t>(d)];
      ib += sb[static_cast<size_t>(d)];
      if (c[static_cast<size_t>(d)] < out[static_cast<size_t>(d)]) break;
      c[static_cast<size_t>(d)] = 0;
      ia -= sa[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
      ib -= sb[static_cast<size_t>(d)] * out[static_cast<size_t>(d)];
    }
  }
}

Graph* same_graph(Tensor a, Tensor b, const char* op) {
  if (!a.valid() || !b.valid()) throw GraphError(std::string(op) + ": invalid tensor handle");
  if (a.g != b.g) throw GraphError(std::string(op) + ": operands belong to different graphs");
  return a.g;
}

// Decompose `shape` around `axis` into (outer, n, inner).
void axis_split(const Shape& shape, int axis, const char* op, int64_t& outer, int64_t& n, int64_t& inner) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  outer = 1;
  inner = 1;
  for (int i = 0; i < axis; ++i) outer *= shape[static_cast<size_t>(i)];
  n = shape[static_cast<size_t>(axis)];
  for (size_t i = static_cast<size_t>(axis) + 1; i < shape.size(); ++i) inner *= shape[i];
}

using UnaryFwd = double (*)(double);
using UnaryBwd = double (*)(double x, double y);  // local gradient from input and output

Tensor unary_op(Tensor x, const char* /*name*/, UnaryFwd fwd, UnaryBwd bwd) {
  Graph& g = *x.g;
  g.check_open("unary op");
  const Array& xv = x.value();
  Array out(xv.shape(), g.dtype());
  SEMAFO_DISPATCH(g.dtype(), {
    const scalar_t* xp = cptr<scalar_t>(xv);
    scalar_t* op_ = ptr<scalar_t>(out);
    int64_t n = xv.numel();
    for (int64_t i = 0; i < n; ++i) op_[i] = static_cast<scalar_t>(fwd(static_cast<double>(xp[i])));
  });
  bool req = g.wants_grad(x.id);
  int xid = x.id;
  int out_id = g.add_node(xv.shape(), std::move(out), req, nullptr);
  g.node(out_id).backward_fn = [xid, out_id, bwd](Graph& gg) {
    if (!gg.wants_grad(xid)) return;
    const Array& go = gg.node(out_id).grad;
    const Array& xv2 = gg.node(xid).value;
    const Array& yv = gg.node(out_id).value;
    Array& gx = gg.grad_buf(xid);
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      const scalar_t* xp = cptr<scalar_t>(xv2);
      const scalar_t* yp = cptr<scalar_t>(yv);
      scalar_t* gxp = ptr<scalar_t>(gx);
      int64_t n = go.numel();
      for (int64_t i = 0; i < n; ++i)
        gxp[i] += static_cast<scalar_t>(bwd(static_cast<double>(xp[i]), static_cast<double>(yp[i])) *
                                        static_cast<double>(gp[i]));
    });
  };
  return {&g, out_id};
}

enum class BinKind { Add, Sub, Mul, Div };

Tensor binary_op(Tensor a, Tensor b, BinKind kind, const char* name) {
  Graph& g = *same_graph(a, b, name);
  g.check_open(name);
  const Array& av = a.value();
  const Array& bv = b.value();
  Shape os = broadcast_shapes(av.shape(), bv.shape(), name);
  std::vector<int64_t> sa = aligned_strides(av.shape(), os, name);
  std::vector<int64_t> sb = aligned_strides(bv.shape(), os, name);
  Array out(os, g.dtype());
  SEMAFO_DISPATCH(g.dtype(), {
    const scalar_t* ap = cptr<scalar_t>(av);
    const scalar_t* bp = cptr<scalar_t>(bv);
    scalar_t* op_ = ptr<scalar_t>(out);
    switch (kind) {
      case BinKind::Add:
        for_each_bcast(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) { op_[io] = ap[ia] + bp[ib]; });
        break;
      case BinKind::Sub:
        for_each_bcast(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) { op_[io] = ap[ia] - bp[ib]; });
        break;
      case BinKind::Mul:
        for_each_bcast(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) { op_[io] = ap[ia] * bp[ib]; });
        break;
      case BinKind::Div:
        for_each_bcast(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) { op_[io] = ap[ia] / bp[ib]; });
        break;
    }
  });
  bool req = g.wants_grad(a.id) || g.wants_grad(b.id);
  int aid = a.id, bid = b.id;
  int out_id = g.add_node(os, std::move(out), req, nullptr);
  g.node(out_id).backward_fn = [aid, bid, out_id, kind, os, sa, sb](Graph& gg) {
    const Array& go = gg.node(out_id).grad;
    const Array& av2 = gg.node(aid).value;
    const Array& bv2 = gg.node(bid).value;
    bool wa = gg.wants_grad(aid), wb = gg.wants_grad(bid);
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      const scalar_t* ap = cptr<scalar_t>(av2);
      const scalar_t* bp = cptr<scalar_t>(bv2);
      scalar_t* gap = wa ? ptr<scalar_t>(gg.grad_buf(aid)) : nullptr;
      scalar_t* gbp = wb ? ptr<scalar_t>(gg.grad_buf(bid)) : nullptr;
      switch (kind) {
        case BinKind::Add:
          for_each_bcast(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
            if (gap) gap[ia] += gp[io];
            if (gbp) gbp[ib] += gp[io];
          });
          break;
        case BinKind::Sub:
          for_each_bcast(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
            if (gap) gap[ia] += gp[io];
            if (gbp) gbp[ib] -= gp[io];
          });
          break;
        case BinKind::Mul:
          for_each_bcast(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
            if (gap) gap[ia] += gp[io] * bp[ib];
            if (gbp) gbp[ib] += gp[io] * ap[ia];
          });
          break;
        case BinKind::Div:
          for_each_bcast(os, sa, sb, [&](int64_t io, int64_t ia, int64_t ib) {
            if (gap) gap[ia] += gp[io] / bp[ib];
            if (gbp) gbp[ib] -= gp[io] * ap[ia] / (bp[ib] * bp[ib]);
          });
          break;
      }
    });
  };
  return {&g, out_id};
}

}  // namespace

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
  size_t ra = a.size(), rb = b.size(), ro = std::max(ra, rb);
  Shape out(ro, 1);
  for (size_t i = 0; i < ro; ++i) {
    int64_t da = i < ra ? a[ra - 1 - i] : 1;
    int64_t db = i < rb ? b[rb - 1 - i] : 1;
    if (da == db || da == 1 || db == 1) {
      out[ro - 1 - i] = std::max(da, db);
    } else {
      throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
    }
  }
  return out;
}

const Shape& Tensor::shape() const { return g->node(id).shape; }
int64_t Tensor::numel() const { return g->node(id).value.numel(); }
const Array& Tensor::value() const { return g->node(id).value; }

const Array& Tensor::grad() const {
  const Graph::Node& n = g->node(id);
  if (!n.requires_grad || n.grad.numel() != n.value.numel())
    throw GraphError("Tensor::grad: no gradient present (run backward on a graph that uses this node)");
  return n.grad;
}

bool Tensor::has_grad() const {
  const Graph::Node& n = g->node(id);
  return n.requires_grad && n.grad.numel() == n.value.numel();
}

double Tensor::item() const {
  if (numel() != 1) throw GraphError("Tensor::item: node is not scalar, shape " + shape_str(shape()));
  return value().at(0);
}

void Graph::check_open(const char* op) const {
  if (consumed_) throw GraphError(std::string(op) + ": graph already consumed by backward()");
}

int Graph::add_node(Shape shape, Array value, bool requires_grad, std::function<void(Graph&)> bwd) {
  check_open("add_node");
  Node n;
  n.shape = std::move(shape);
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.backward_fn = std::move(bwd);
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

Tensor Graph::leaf(const Array& value, bool requires_grad) {
  Array v = value.dtype() == dtype_ ? value : value.cast(dtype_);
  Shape s = v.shape();  // taken before the move; argument evaluation order is unspecified
  int id = add_node(std::move(s), std::move(v), requires_grad, nullptr);
  return {this, id};
}

Tensor Graph::constant(const Array& value) { return leaf(value, false); }

Tensor Graph::constant_scalar(double v) { return constant(Array::scalar(v, dtype_)); }

void Graph::backward(Tensor loss) {
  check_open("backward");
  if (loss.g != this) throw GraphError("backward: loss belongs to a different graph");
  if (loss.numel() != 1) throw GraphError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  for (Node& n : nodes_) {
    if (n.requires_grad) n.grad = Array::zeros(n.value.shape(), dtype_);
  }
  if (nodes_[static_cast<size_t>(loss.id)].requires_grad) {
    nodes_[static_cast<size_t>(loss.id)].grad.fill(1.0);
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (n.requires_grad && n.backward_fn) n.backward_fn(*this);
    }
  }
  consumed_ = true;
}

// ---- arithmetic ----

Tensor add(Tensor a, Tensor b) { return binary_op(a, b, BinKind::Add, "add"); }
Tensor sub(Tensor a, Tensor b) { return binary_op(a, b, BinKind::Sub, "sub"); }
Tensor mul(Tensor a, Tensor b) { return binary_op(a, b, BinKind::Mul, "mul"); }
Tensor div(Tensor a, Tensor b) { return binary_op(a, b, BinKind::Div, "div"); }

Tensor add(Tensor a, double b) { return add(a, a.g->constant_scalar(b)); }
Tensor sub(Tensor a, double b) { return sub(a, a.g->constant_scalar(b)); }
Tensor sub(double a, Tensor b) { return sub(b.g->constant_scalar(a), b); }
Tensor mul(Tensor a, double b) { return mul(a, a.g->constant_scalar(b)); }
Tensor div(Tensor a, double b) { return div(a, a.g->constant_scalar(b)); }
Tensor div(double a, Tensor b) { return div(b.g->constant_scalar(a), b); }
Tensor neg(Tensor x) { return sub(0.0, x); }

Tensor matmul(Tensor a, Tensor b) {
  Graph& g = *same_graph(a, b, "matmul");
  g.check_open("matmul");
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: shape mismatch " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
  int64_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Array out({m, n}, g.dtype());
  SEMAFO_DISPATCH(g.dtype(), {
    using Mat = Eigen::Matrix<scalar_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    Eigen::Map<const Mat> A(cptr<scalar_t>(av), m, k), B(cptr<scalar_t>(bv), k, n);
    Eigen::Map<Mat> C(ptr<scalar_t>(out), m, n);
    C.noalias() = A * B;
  });
  bool req = g.wants_grad(a.id) || g.wants_grad(b.id);
  int aid = a.id, bid = b.id;
  int out_id = g.add_node({m, n}, std::move(out), req, nullptr);
  g.node(out_id).backward_fn = [aid, bid, out_id, m, k, n](Graph& gg) {
    const Array& go = gg.node(out_id).grad;
    const Array& av2 = gg.node(aid).value;
    const Array& bv2 = gg.node(bid).value;
    SEMAFO_DISPATCH(gg.dtype(), {
      using Mat = Eigen::Matrix<scalar_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
      Eigen::Map<const Mat> G(cptr<scalar_t>(go), m, n), A(cptr<scalar_t>(av2), m, k), B(cptr<scalar_t>(bv2), k, n);
      if (gg.wants_grad(aid)) {
        Eigen::Map<Mat> GA(ptr<scalar_t>(gg.grad_buf(aid)), m, k);
        GA.noalias() += G * B.transpose();
      }
      if (gg.wants_grad(bid)) {
        Eigen::Map<Mat> GB(ptr<scalar_t>(gg.grad_buf(bid)), k, n);
        GB.noalias() += A.transpose() * G;
      }
    });
  };
  return {&g, out_id};
}

// ---- pointwise nonlinearities ----

Tensor exp(Tensor x) {
  return unary_op(x, "exp", [](double v) { return std::exp(v); },
                  [](double, double y) { return y; });
}

Tensor log(Tensor x) {
  return unary_op(x, "log", [](double v) { return std::log(v); },
                  [](double v, double) { return 1.0 / v; });
}

Tensor tanh(Tensor x) {
  return unary_op(x, "tanh", [](double v) { return std::tanh(v); },
                  [](double, double y) { return 1.0 - y * y; });
}

Tensor elu(Tensor x) {
  return unary_op(x, "elu", [](double v) { return v > 0 ? v : std::expm1(v); },
                  [](double, double y) { return y > 0 ? 1.0 : y + 1.0; });
}

Tensor relu(Tensor x) {
  return unary_op(x, "relu", [](double v) { return v > 0 ? v : 0.0; },
                  [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor softplus(Tensor x) {
  return unary_op(x, "softplus", &stable_softplus,
                  [](double v, double) { return stable_sigmoid(v); });
}

Tensor sigmoid(Tensor x) {
  return unary_op(x, "sigmoid", &stable_sigmoid,
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor square(Tensor x) {
  return unary_op(x, "square", [](double v) { return v * v; },
                  [](double v, double) { return 2.0 * v; });
}

Tensor sqrt(Tensor x) {
  return unary_op(x, "sqrt", [](double v) { return std::sqrt(v); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor clip(Tensor x, double lo, double hi) {
  Graph& g = *x.g;
  g.check_open("clip");
  if (!(lo <= hi)) throw std::invalid_argument("clip: lo > hi");
  const Array& xv = x.value();
  Array out(xv.shape(), g.dtype());
  SEMAFO_DISPATCH(g.dtype(), {
    const scalar_t* xp = cptr<scalar_t>(xv);
    scalar_t* op_ = ptr<scalar_t>(out);
    for (int64_t i = 0; i < xv.numel(); ++i)
      op_[i] = static_cast<scalar_t>(std::min(hi, std::max(lo, static_cast<double>(xp[i]))));
  });
  int xid = x.id;
  int out_id = g.add_node(xv.shape(), std::move(out), g.wants_grad(x.id), nullptr);
  g.node(out_id).backward_fn = [xid, out_id, lo, hi](Graph& gg) {
    if (!gg.wants_grad(xid)) return;
    const Array& go = gg.node(out_id).grad;
    const Array& xv2 = gg.node(xid).value;
    Array& gx = gg.grad_buf(xid);
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      const scalar_t* xp = cptr<scalar_t>(xv2);
      scalar_t* gxp = ptr<scalar_t>(gx);
      for (int64_t i = 0; i < go.numel(); ++i) {
        double v = static_cast<double>(xp[i]);
        if (v >= lo && v <= hi) gxp[i] += gp[i];
      }
    });
  };
  return {&g, out_id};
}

// ---- softmax family ----

namespace {

Tensor softmax_impl(Tensor x, int axis, bool log_form) {
  Graph& g = *x.g;
  g.check_open(log_form ? "log_softmax" : "softmax");
  const Array& xv = x.value();
  int64_t outer, n, inner;
  axis_split(xv.shape(), axis, log_form ? "log_softmax" : "softmax", outer, n, inner);
  Array out(xv.shape(), g.dtype());
  SEMAFO_DISPATCH(g.dtype(), {
    const scalar_t* xp = cptr<scalar_t>(xv);
    scalar_t* op_ = ptr<scalar_t>(out);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        int64_t base = o * n * inner + i;
        double mx = -INFINITY;
        for (int64_t j = 0; j < n; ++j) mx = std::max(mx, static_cast<double>(xp[base + j * inner]));
        double denom = 0;
        for (int64_t j = 0; j < n; ++j) denom += std::exp(static_cast<double>(xp[base + j * inner]) - mx);
        if (log_form) {
          double lse = mx + std::log(denom);
          for (int64_t j = 0; j < n; ++j)
            op_[base + j * inner] = static_cast<scalar_t>(static_cast<double>(xp[base + j * inner]) - lse);
        } else {
          for (int64_t j = 0; j < n; ++j)
            op_[base + j * inner] =
                static_cast<scalar_t>(std::exp(static_cast<double>(xp[base + j * inner]) - mx) / denom);
        }
      }
  });
  int xid = x.id;
  int out_id = g.add_node(xv.shape(), std::move(out), g.wants_grad(x.id), nullptr);
  g.node(out_id).backward_fn = [xid, out_id, outer, n, inner, log_form](Graph& gg) {
    if (!gg.wants_grad(xid)) return;
    const Array& go = gg.node(out_id).grad;
    const Array& yv = gg.node(out_id).value;
    Array& gx = gg.grad_buf(xid);
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      const scalar_t* yp = cptr<scalar_t>(yv);
      scalar_t* gxp = ptr<scalar_t>(gx);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          int64_t base = o * n * inner + i;
          double dot = 0;
          for (int64_t j = 0; j < n; ++j) dot += static_cast<double>(gp[base + j * inner]);
          if (log_form) {
            // dx_j = g_j - softmax_j * sum(g)
            for (int64_t j = 0; j < n; ++j) {
              double sj = std::exp(static_cast<double>(yp[base + j * inner]));
              gxp[base + j * inner] += static_cast<scalar_t>(static_cast<double>(gp[base + j * inner]) - sj * dot);
            }
          } else {
            // dx_j = y_j * (g_j - sum_i g_i y_i)
            double dot_y = 0;
            for (int64_t j = 0; j < n; ++j)
              dot_y += static_cast<double>(gp[base + j * inner]) * static_cast<double>(yp[base + j * inner]);
            for (int64_t j = 0; j < n; ++j) {
              double yj = static_cast<double>(yp[base + j * inner]);
              gxp[base + j * inner] +=
                  static_cast<scalar_t>(yj * (static_cast<double>(gp[base + j * inner]) - dot_y));
            }
          }
        }
    });
  };
  return {&g, out_id};
}

}  // namespace

Tensor softmax(Tensor x, int axis) { return softmax_impl(x, axis, false); }
Tensor log_softmax(Tensor x, int axis) { return softmax_impl(x, axis, true); }

// ---- reductions ----

namespace {

Tensor reduce_axis(Tensor x, int axis, bool mean_form, const char* name) {
  Graph& g = *x.g;
  g.check_open(name);
  const Array& xv = x.value();
  int64_t outer, n, inner;
  axis_split(xv.shape(), axis, name, outer, n, inner);
  Shape os;
  for (int i = 0; i < xv.rank(); ++i)
    if (i != axis) os.push_back(xv.dim(i));
  Array out(os, g.dtype());
  double scale = mean_form ? 1.0 / static_cast<double>(n) : 1.0;
  SEMAFO_DISPATCH(g.dtype(), {
    const scalar_t* xp = cptr<scalar_t>(xv);
    scalar_t* op_ = ptr<scalar_t>(out);
    for (int64_t o = 0; o < outer; ++o)
      for (int64_t i = 0; i < inner; ++i) {
        double acc = 0;
        int64_t base = o * n * inner + i;
        for (int64_t j = 0; j < n; ++j) acc += static_cast<double>(xp[base + j * inner]);
        op_[o * inner + i] = static_cast<scalar_t>(acc * scale);
      }
  });
  int xid = x.id;
  int out_id = g.add_node(os, std::move(out), g.wants_grad(x.id), nullptr);
  g.node(out_id).backward_fn = [xid, out_id, outer, n, inner, scale](Graph& gg) {
    if (!gg.wants_grad(xid)) return;
    const Array& go = gg.node(out_id).grad;
    Array& gx = gg.grad_buf(xid);
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      scalar_t* gxp = ptr<scalar_t>(gx);
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t i = 0; i < inner; ++i) {
          double gv = static_cast<double>(gp[o * inner + i]) * scale;
          int64_t base = o * n * inner + i;
          for (int64_t j = 0; j < n; ++j) gxp[base + j * inner] += static_cast<scalar_t>(gv);
        }
    });
  };
  return {&g, out_id};
}

Tensor reduce_all(Tensor x, bool mean_form, const char* name) {
  Graph& g = *x.g;
  g.check_open(name);
  const Array& xv = x.value();
  double scale = mean_form ? 1.0 / static_cast<double>(std::max<int64_t>(1, xv.numel())) : 1.0;
  double acc = 0;
  SEMAFO_DISPATCH(g.dtype(), {
    const scalar_t* xp = cptr<scalar_t>(xv);
    for (int64_t i = 0; i < xv.numel(); ++i) acc += static_cast<double>(xp[i]);
  });
  Array out = Array::scalar(acc * scale, g.dtype());
  int xid = x.id;
  int out_id = g.add_node({}, std::move(out), g.wants_grad(x.id), nullptr);
  g.node(out_id).backward_fn = [xid, out_id, scale](Graph& gg) {
    if (!gg.wants_grad(xid)) return;
    double gv = gg.node(out_id).grad.at(0) * scale;
    Array& gx = gg.grad_buf(xid);
    SEMAFO_DISPATCH(gg.dtype(), {
      scalar_t* gxp = ptr<scalar_t>(gx);
      for (int64_t i = 0; i < gx.numel(); ++i) gxp[i] += static_cast<scalar_t>(gv);
    });
  };
  return {&g, out_id};
}

}  // namespace

Tensor sum(Tensor x, int axis) { return reduce_axis(x, axis, false, "sum"); }
Tensor mean(Tensor x, int axis) { return reduce_axis(x, axis, true, "mean"); }
Tensor sum_all(Tensor x) { return reduce_all(x, false, "sum_all"); }
Tensor mean_all(Tensor x) { return reduce_all(x, true, "mean_all"); }

// ---- shape ops ----

Tensor broadcast_to(Tensor x, Shape target) {
  Graph& g = *x.g;
  g.check_open("broadcast_to");
  const Array& xv = x.value();
  std::vector<int64_t> sx = aligned_strides(xv.shape(), target, "broadcast_to");
  std::vector<int64_t> zero(target.size(), 0);
  Array out(target, g.dtype());
  SEMAFO_DISPATCH(g.dtype(), {
    const scalar_t* xp = cptr<scalar_t>(xv);
    scalar_t* op_ = ptr<scalar_t>(out);
    for_each_bcast(target, sx, zero, [&](int64_t io, int64_t ix, int64_t) { op_[io] = xp[ix]; });
  });
  int xid = x.id;
  int out_id = g.add_node(target, std::move(out), g.wants_grad(x.id), nullptr);
  g.node(out_id).backward_fn = [xid, out_id, target, sx, zero](Graph& gg) {
    if (!gg.wants_grad(xid)) return;
    const Array& go = gg.node(out_id).grad;
    Array& gx = gg.grad_buf(xid);
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      scalar_t* gxp = ptr<scalar_t>(gx);
      for_each_bcast(target, sx, zero, [&](int64_t io, int64_t ix, int64_t) { gxp[ix] += gp[io]; });
    });
  };
  return {&g, out_id};
}

Tensor reshape(Tensor x, Shape new_shape) {
  Graph& g = *x.g;
  g.check_open("reshape");
  const Array& xv = x.value();
  if (shape_numel(new_shape) != xv.numel())
    throw ShapeError("reshape: cannot view " + shape_str(xv.shape()) + " as " + shape_str(new_shape));
  Array out = xv.reshaped(new_shape);
  int xid = x.id;
  int out_id = g.add_node(new_shape, std::move(out), g.wants_grad(x.id), nullptr);
  g.node(out_id).backward_fn = [xid, out_id](Graph& gg) {
    if (!gg.wants_grad(xid)) return;
    const Array& go = gg.node(out_id).grad;
    Array& gx = gg.grad_buf(xid);
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      scalar_t* gxp = ptr<scalar_t>(gx);
      for (int64_t i = 0; i < go.numel(); ++i) gxp[i] += gp[i];
    });
  };
  return {&g, out_id};
}

Tensor concat(const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no operands");
  Graph& g = *parts[0].g;
  g.check_open("concat");
  const Shape& s0 = parts[0].shape();
  int rank = static_cast<int>(s0.size());
  if (axis < 0 || axis >= rank) throw ShapeError("concat: axis out of range for " + shape_str(s0));
  Shape os = s0;
  os[static_cast<size_t>(axis)] = 0;
  for (const Tensor& p : parts) {
    same_graph(parts[0], p, "concat");
    const Shape& s = p.shape();
    if (static_cast<int>(s.size()) != rank)
      throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    for (int d = 0; d < rank; ++d)
      if (d != axis && s[static_cast<size_t>(d)] != s0[static_cast<size_t>(d)])
        throw ShapeError("concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    os[static_cast<size_t>(axis)] += s[static_cast<size_t>(axis)];
  }
  int64_t outer, ntot, inner;
  axis_split(os, axis, "concat", outer, ntot, inner);
  Array out(os, g.dtype());
  bool req = false;
  std::vector<int> ids;
  std::vector<int64_t> widths;
  for (const Tensor& p : parts) {
    req = req || g.wants_grad(p.id);
    ids.push_back(p.id);
    widths.push_back(p.shape()[static_cast<size_t>(axis)]);
  }
  SEMAFO_DISPATCH(g.dtype(), {
    scalar_t* op_ = ptr<scalar_t>(out);
    int64_t off = 0;
    for (size_t pi = 0; pi < ids.size(); ++pi) {
      const scalar_t* xp = cptr<scalar_t>(g.node(ids[pi]).value);
      int64_t w = widths[pi];
      for (int64_t o = 0; o < outer; ++o)
        for (int64_t j = 0; j < w; ++j)
          for (int64_t i = 0; i < inner; ++i)
            op_[(o * ntot + off + j) * inner + i] = xp[(o * w + j) * inner + i];
      off += w;
    }
  });
  int out_id = g.add_node(os, std::move(out), req, nullptr);
  g.node(out_id).backward_fn = [ids, widths, out_id, outer, ntot, inner](Graph& gg) {
    const Array& go = gg.node(out_id).grad;
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      int64_t off = 0;
      for (size_t pi = 0; pi < ids.size(); ++pi) {
        int64_t w = widths[pi];
        if (gg.wants_grad(ids[pi])) {
          scalar_t* gxp = ptr<scalar_t>(gg.grad_buf(ids[pi]));
          for (int64_t o = 0; o < outer; ++o)
            for (int64_t j = 0; j < w; ++j)
              for (int64_t i = 0; i < inner; ++i)
                gxp[(o * w + j) * inner + i] += gp[(o * ntot + off + j) * inner + i];
        }
        off += w;
      }
    });
  };
  return {&g, out_id};
}

Tensor slice(Tensor x, const std::vector<int64_t>& starts, const std::vector<int64_t>& sizes) {
  Graph& g = *x.g;
  g.check_open("slice");
  const Array& xv = x.value();
  int rank = xv.rank();
  if (static_cast<int>(starts.size()) != rank || static_cast<int>(sizes.size()) != rank)
    throw ShapeError("slice: starts/sizes rank mismatch for " + shape_str(xv.shape()));
  Shape os(sizes.begin(), sizes.end());
  for (int d = 0; d < rank; ++d) {
    if (starts[static_cast<size_t>(d)] < 0 || sizes[static_cast<size_t>(d)] < 0 ||
        starts[static_cast<size_t>(d)] + sizes[static_cast<size_t>(d)] > xv.dim(d))
      throw ShapeError("slice: window out of range for " + shape_str(xv.shape()));
  }
  // source strides
  std::vector<int64_t> xstr(static_cast<size_t>(rank), 1);
  for (int d = rank - 2; d >= 0; --d)
    xstr[static_cast<size_t>(d)] = xstr[static_cast<size_t>(d) + 1] * xv.dim(d + 1);
  int64_t base = 0;
  for (int d = 0; d < rank; ++d) base += starts[static_cast<size_t>(d)] * xstr[static_cast<size_t>(d)];
  std::vector<int64_t> zero(static_cast<size_t>(rank), 0);
  Array out(os, g.dtype());
  SEMAFO_DISPATCH(g.dtype(), {
    const scalar_t* xp = cptr<scalar_t>(xv);
    scalar_t* op_ = ptr<scalar_t>(out);
    for_each_bcast(os, xstr, zero, [&](int64_t io, int64_t ix, int64_t) { op_[io] = xp[base + ix]; });
  });
  int xid = x.id;
  int out_id = g.add_node(os, std::move(out), g.wants_grad(x.id), nullptr);
  g.node(out_id).backward_fn = [xid, out_id, os, xstr, zero, base](Graph& gg) {
    if (!gg.wants_grad(xid)) return;
    const Array& go = gg.node(out_id).grad;
    Array& gx = gg.grad_buf(xid);
    SEMAFO_DISPATCH(gg.dtype(), {
      const scalar_t* gp = cptr<scalar_t>(go);
      scalar_t* gxp = ptr<scalar_t>(gx);
      for_each_bcast(os, xstr, zero, [&](int64_t io, int64_t ix, int64_t) { gxp[base + ix] += gp[io]; });
    });
  };
  return {&g, out_id};
}

}  // namespace semafo
