#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace tcgl {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of real scalars. Rank 0 is a scalar, rank 1 a
/// vector, rank 2 a matrix; nothing in this project needs more.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : data_(1, T(0)) {}

  explicit Tensor(Shape shape, bool requires_grad = false)
      : shape_(std::move(shape)), requires_grad_(requires_grad) {
    check_dims();
    data_.assign(element_count(shape_), T(0));
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : shape_(std::move(shape)), data_(std::move(data)), requires_grad_(requires_grad) {
    check_dims();
    if (element_count(shape_) != data_.size()) {
      throw std::invalid_argument("tensor: shape " + to_string(shape_) + " holds " +
                                  std::to_string(element_count(shape_)) + " elements, got " +
                                  std::to_string(data_.size()));
    }
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor(Shape{}, {v}, requires_grad); }

  static Tensor vector(std::vector<T> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return Tensor(Shape{n}, std::move(v), requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> v, bool requires_grad = false) {
    return Tensor(Shape{rows, cols}, std::move(v), requires_grad);
  }

  static Tensor identity(std::size_t n) {
    Tensor t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  static Tensor filled(Shape shape, T v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return rank() == 2 ? shape_[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : shape_.back(); }

  std::span<const T> data() const { return data_; }
  std::span<T> data() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  T item() const {
    if (data_.size() != 1) throw std::invalid_argument("tensor: item() on shape " + to_string(shape_));
    return data_[0];
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_dims() const {
    for (std::size_t d : shape_) {
      if (d == 0) throw std::invalid_argument("tensor: zero dimension in shape " + to_string(shape_));
    }
    if (shape_.size() > 2) throw std::invalid_argument("tensor: rank > 2 unsupported " + to_string(shape_));
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
};

}  // namespace tcgl
