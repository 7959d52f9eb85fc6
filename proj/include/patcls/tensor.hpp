#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "patcls/errors.hpp"

namespace patcls {

using Shape = std::vector<size_t>;

inline std::string shape_str(const Shape& s) {
  std::string out = "(";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + ")";
}

/// Dense row-major tensor of 64-bit floats. Value semantics; once handed to
/// the tape a tensor is never mutated.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)),
        data_(std::accumulate(shape_.begin(), shape_.end(), size_t{1}, std::multiplies<>()), fill) {}

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel_of(shape_))
      throw ShapeMismatch("tensor data length " + std::to_string(data_.size()) +
                          " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t dim(size_t i) const { return shape_.at(i); }
  size_t numel() const { return data_.size(); }
  bool defined() const { return !shape_.empty() || !data_.empty(); }

  size_t rows() const { return rank() == 2 ? shape_[0] : (rank() == 1 ? 1 : throw_rank2()); }
  size_t cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : throw_rank2()); }

  double& at(size_t i) { return data_[i]; }
  double at(size_t i) const { return data_[i]; }
  double& operator()(size_t r, size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(size_t r, size_t c) const { return data_[r * shape_[1] + c]; }
  double& operator()(size_t k, size_t r, size_t c) { return data_[(k * shape_[1] + r) * shape_[2] + c]; }
  double operator()(size_t k, size_t r, size_t c) const { return data_[(k * shape_[1] + r) * shape_[2] + c]; }

  double item() const {
    if (numel() != 1) throw ShapeMismatch("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  double checksum() const {
    double s = 0.0;
    for (size_t i = 0; i < data_.size(); ++i) s += data_[i] * static_cast<double>(i % 97 + 1);
    return s;
  }

  static size_t numel_of(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
  }

 private:
  [[noreturn]] static size_t throw_rank2() { throw ShapeMismatch("expected rank <= 2 tensor"); }

  Shape shape_;
  std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw ShapeMismatch(std::string(op) + ": shapes " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
}

}  // namespace patcls
