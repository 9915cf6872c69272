#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace semafo {

enum class Dtype { Float32, Float64 };

inline const char* dtype_name(Dtype d) { return d == Dtype::Float32 ? "float32" : "float64"; }

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Dense n-dimensional value buffer. Plain value semantics: copying an Array
// copies the data. The autodiff graph stores node values as Arrays as well.
class Array {
 public:
  Array() = default;
  Array(Shape shape, Dtype dtype);

  static Array zeros(Shape shape, Dtype dtype = Dtype::Float64);
  static Array full(Shape shape, double value, Dtype dtype = Dtype::Float64);
  static Array from(Shape shape, const std::vector<double>& values, Dtype dtype = Dtype::Float64);
  static Array scalar(double value, Dtype dtype = Dtype::Float64);

  const Shape& shape() const { return shape_; }
  Dtype dtype() const { return dtype_; }
  int64_t numel() const { return numel_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t dim(int i) const { return shape_[static_cast<size_t>(i)]; }

  double at(int64_t i) const { return dtype_ == Dtype::Float32 ? static_cast<double>(f32_[i]) : f64_[i]; }
  void set(int64_t i, double v) {
    if (dtype_ == Dtype::Float32) f32_[i] = static_cast<float>(v);
    else f64_[i] = v;
  }

  float* data_f32() { return f32_.data(); }
  const float* data_f32() const { return f32_.data(); }
  double* data_f64() { return f64_.data(); }
  const double* data_f64() const { return f64_.data(); }

  std::vector<double> to_f64_vector() const;
  Array cast(Dtype target) const;
  Array reshaped(Shape new_shape) const;

  void fill(double v);
  bool all_finite() const;

 private:
  Shape shape_;
  Dtype dtype_ = Dtype::Float64;
  int64_t numel_ = 0;
  std::vector<float> f32_;
  std::vector<double> f64_;
};

}  // namespace semafo
