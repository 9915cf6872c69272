#pragma once

#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "semafo/array.hpp"

namespace semafo {

class Graph;

// Raised by every operation whose operand shapes don't line up; the message
// names the op and both shapes.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

class GraphError : public std::runtime_error {
 public:
  explicit GraphError(const std::string& msg) : std::runtime_error(msg) {}
};

// Handle to a node inside one Graph. Cheap to copy; the data lives in the
// graph's tape.
struct Tensor {
  Graph* g = nullptr;
  int id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Shape& shape() const;
  int64_t numel() const;
  const Array& value() const;
  const Array& grad() const;
  bool has_grad() const;
  double item() const;  // value of a scalar node
};

// Reverse-mode tape. Operations execute eagerly and append one node each, so
// insertion order is a topological order; backward() walks it once in
// reverse. A graph is spent after backward() and refuses further use.
class Graph {
 public:
  explicit Graph(Dtype dtype = Dtype::Float64) : dtype_(dtype) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Dtype dtype() const { return dtype_; }
  size_t num_nodes() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  Tensor leaf(const Array& value, bool requires_grad = true);
  Tensor constant(const Array& value);
  Tensor constant_scalar(double v);

  // Populates grad buffers of every node that requires grad with
  // d(loss)/d(node). loss must be a scalar node of this graph.
  void backward(Tensor loss);

  // --- tape internals, used by the op implementations ---
  struct Node {
    Shape shape;
    Array value;
    Array grad;  // allocated by backward()
    bool requires_grad = false;
    std::function<void(Graph&)> backward_fn;  // null for leaves/constants
  };

  int add_node(Shape shape, Array value, bool requires_grad, std::function<void(Graph&)> bwd);
  Node& node(int id) { return nodes_[static_cast<size_t>(id)]; }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  Array& grad_buf(int id) { return nodes_[static_cast<size_t>(id)].grad; }
  bool wants_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  void check_open(const char* op) const;

 private:
  Dtype dtype_;
  bool consumed_ = false;
  std::vector<Node> nodes_;
};

// ---- required op set ----
Tensor add(Tensor a, Tensor b);
Tensor sub(Tensor a, Tensor b);
Tensor mul(Tensor a, Tensor b);
Tensor div(Tensor a, Tensor b);
Tensor matmul(Tensor a, Tensor b);
Tensor exp(Tensor x);
Tensor log(Tensor x);
Tensor tanh(Tensor x);
Tensor elu(Tensor x);
Tensor relu(Tensor x);
Tensor softplus(Tensor x);
Tensor sigmoid(Tensor x);
Tensor softmax(Tensor x, int axis);
Tensor log_softmax(Tensor x, int axis);
Tensor sum(Tensor x, int axis);
Tensor mean(Tensor x, int axis);
Tensor sum_all(Tensor x);
Tensor mean_all(Tensor x);
Tensor broadcast_to(Tensor x, Shape target);
Tensor reshape(Tensor x, Shape new_shape);
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(Tensor x, const std::vector<int64_t>& starts, const std::vector<int64_t>& sizes);
Tensor square(Tensor x);
Tensor sqrt(Tensor x);
Tensor clip(Tensor x, double lo, double hi);
Tensor neg(Tensor x);

// scalar conveniences
Tensor add(Tensor a, double b);
Tensor sub(Tensor a, double b);
Tensor sub(double a, Tensor b);
Tensor mul(Tensor a, double b);
Tensor div(Tensor a, double b);
Tensor div(double a, Tensor b);

inline Tensor operator+(Tensor a, Tensor b) { return add(a, b); }
inline Tensor operator-(Tensor a, Tensor b) { return sub(a, b); }
inline Tensor operator*(Tensor a, Tensor b) { return mul(a, b); }
inline Tensor operator/(Tensor a, Tensor b) { return div(a, b); }
inline Tensor operator+(Tensor a, double b) { return add(a, b); }
inline Tensor operator-(Tensor a, double b) { return sub(a, b); }
inline Tensor operator*(Tensor a, double b) { return mul(a, b); }
inline Tensor operator/(Tensor a, double b) { return div(a, b); }
inline Tensor operator+(double a, Tensor b) { return add(b, a); }
inline Tensor operator-(double a, Tensor b) { return sub(a, b); }
inline Tensor operator*(double a, Tensor b) { return mul(b, a); }
inline Tensor operator/(double a, Tensor b) { return div(a, b); }
inline Tensor operator-(Tensor x) { return neg(x); }

// Right-aligned broadcast of two shapes; throws ShapeError naming `op` when
// the shapes are incompatible.
Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op);

}  // namespace semafo
