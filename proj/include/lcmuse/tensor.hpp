#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "lcmuse/errors.hpp"

namespace lcmuse {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array. Complex images use a leading axis of size 2 (real, imag).
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)), data_(std::move(values)) {
    validate_shape();
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor: " + std::to_string(data_.size()) + " values do not fill shape " +
                       shape_string(shape_));
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  template <class... Idx>
  T& operator()(Idx... idx) {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }
  template <class... Idx>
  const T& operator()(Idx... idx) const {
    return data_[offset({static_cast<std::size_t>(idx)...})];
  }

  /// Value of a single-element tensor.
  T item() const {
    if (data_.size() != 1) throw ShapeError("item: tensor of shape " + shape_string(shape_) + " is not a scalar");
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("reshape: " + shape_string(shape_) + " -> " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  Tensor& operator+=(const Tensor& o);
  Tensor& operator-=(const Tensor& o);
  Tensor& operator*=(T s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  bool operator==(const Tensor& o) const = default;

 private:
  void validate_shape() const {
    if (shape_.empty()) throw ShapeError("tensor: rank must be at least 1");
    for (std::size_t i = 0; i < shape_.size(); ++i) {
      if (shape_[i] == 0) throw ShapeError("tensor: axis " + std::to_string(i) + " has size 0");
    }
  }

  std::size_t offset(std::initializer_list<std::size_t> idx) const {
    if (idx.size() != shape_.size()) {
      throw ShapeError("tensor: " + std::to_string(idx.size()) + " indices for rank " + std::to_string(shape_.size()));
    }
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : idx) {
      off = off * shape_[axis] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Throws a ShapeError naming the first axis where the shapes differ.
inline void check_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": rank mismatch " + shape_string(a) + " vs " + shape_string(b));
  }
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] != b[i]) {
      throw ShapeError(std::string(op) + ": axis " + std::to_string(i) + " mismatch (" + std::to_string(a[i]) +
                       " vs " + std::to_string(b[i]) + ")");
    }
  }
}

template <class T>
Tensor<T>& Tensor<T>::operator+=(const Tensor& o) {
  check_same_shape(shape_, o.shape_, "add");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
  return *this;
}

template <class T>
Tensor<T>& Tensor<T>::operator-=(const Tensor& o) {
  check_same_shape(shape_, o.shape_, "sub");
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
  return *this;
}

template <class T>
Tensor<T> operator+(Tensor<T> a, const Tensor<T>& b) {
  a += b;
  return a;
}

template <class T>
Tensor<T> operator-(Tensor<T> a, const Tensor<T>& b) {
  a -= b;
  return a;
}

template <class T>
Tensor<T> operator*(Tensor<T> a, T s) {
  a *= s;
  return a;
}

template <class T>
Tensor<T> operator*(T s, Tensor<T> a) {
  a *= s;
  return a;
}

template <class T>
Tensor<T> operator-(Tensor<T> a) {
  for (auto& v : a.values()) v = -v;
  return a;
}

template <class T>
Tensor<T> zeros_like(const Tensor<T>& a) {
  return Tensor<T>(a.shape());
}

template <class T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a.shape(), b.shape(), "hadamard");
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
  return out;
}

/// y += alpha * x
template <class T>
void axpy(T alpha, const Tensor<T>& x, Tensor<T>& y) {
  check_same_shape(x.shape(), y.shape(), "axpy");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

/// Real Euclidean inner product. On the 2-channel encoding this equals Re(a^H b).
template <class T>
T dot(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a.shape(), b.shape(), "dot");
  // Accumulate in long double for float and double alike; dot products feed
  // tolerance checks down to 1e-12.
  long double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
  return static_cast<T>(acc);
}

template <class T>
T dot_re(const Tensor<T>& a, const Tensor<T>& b) {
  return dot(a, b);
}

template <class T>
T squared_norm(const Tensor<T>& a) {
  return dot(a, a);
}

template <class T>
T norm(const Tensor<T>& a) {
  return std::sqrt(squared_norm(a));
}

template <class T>
T sum(const Tensor<T>& a) {
  long double acc = 0;
  for (auto v : a.values()) acc += v;
  return static_cast<T>(acc);
}

template <class T>
T max_abs(const Tensor<T>& a) {
  T m = 0;
  for (auto v : a.values()) m = std::max(m, std::abs(v));
  return m;
}

template <class T>
Tensor<T> relu(Tensor<T> x) {
  for (auto& v : x.values()) v = v > T(0) ? v : T(0);
  return x;
}

/// log(1 + e^x), evaluated without overflow.
template <class T>
Tensor<T> softplus(Tensor<T> x) {
  for (auto& v : x.values()) v = v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
  return x;
}

template <class T>
Tensor<T> sigmoid(Tensor<T> x) {
  for (auto& v : x.values()) {
    const T e = std::exp(-std::abs(v));
    v = v >= T(0) ? T(1) / (T(1) + e) : e / (T(1) + e);
  }
  return x;
}

template <class T>
bool all_finite(const Tensor<T>& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](T v) { return std::isfinite(v); });
}

}  // namespace lcmuse
