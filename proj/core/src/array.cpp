#include "semafo/array.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace semafo {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

Array::Array(Shape shape, Dtype dtype) : shape_(std::move(shape)), dtype_(dtype) {
  numel_ = shape_numel(shape_);
  if (numel_ < 0) throw std::invalid_argument("Array: negative dimension in shape " + shape_str(shape_));
  if (dtype_ == Dtype::Float32) f32_.assign(static_cast<size_t>(numel_), 0.0f);
  else f64_.assign(static_cast<size_t>(numel_), 0.0);
}

Array Array::zeros(Shape shape, Dtype dtype) { return Array(std::move(shape), dtype); }

Array Array::full(Shape shape, double value, Dtype dtype) {
  Array a(std::move(shape), dtype);
  a.fill(value);
  return a;
}

Array Array::from(Shape shape, const std::vector<double>& values, Dtype dtype) {
  Array a(std::move(shape), dtype);
  if (static_cast<int64_t>(values.size()) != a.numel())
    throw std::invalid_argument("Array::from: " + std::to_string(values.size()) + " values for shape " +
                                shape_str(a.shape()));
  for (int64_t i = 0; i < a.numel(); ++i) a.set(i, values[static_cast<size_t>(i)]);
  return a;
}

Array Array::scalar(double value, Dtype dtype) { return full({}, value, dtype); }

std::vector<double> Array::to_f64_vector() const {
  std::vector<double> out(static_cast<size_t>(numel_));
  for (int64_t i = 0; i < numel_; ++i) out[static_cast<size_t>(i)] = at(i);
  return out;
}

Array Array::cast(Dtype target) const {
  if (target == dtype_) return *this;
  Array out(shape_, target);
  for (int64_t i = 0; i < numel_; ++i) out.set(i, at(i));
  return out;
}

Array Array::reshaped(Shape new_shape) const {
  if (shape_numel(new_shape) != numel_)
    throw std::invalid_argument("Array::reshaped: cannot view " + shape_str(shape_) + " as " +
                                shape_str(new_shape));
  Array out = *this;
  out.shape_ = std::move(new_shape);
  return out;
}

void Array::fill(double v) {
  if (dtype_ == Dtype::Float32) f32_.assign(f32_.size(), static_cast<float>(v));
  else f64_.assign(f64_.size(), v);
}

bool Array::all_finite() const {
  for (int64_t i = 0; i < numel_; ++i)
    if (!std::isfinite(at(i))) return false;
  return true;
}

}  // namespace semafo
