#pragma once

#include <algorithm>
#include <cstddef>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "cellseg/error.hpp"

namespace cellseg {

// (batch, channels, height, width).
struct Shape {
  std::size_t n = 0, c = 0, h = 0, w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  friend constexpr bool operator==(const Shape&, const Shape&) = default;
  std::string str() const;
};

std::ostream& operator<<(std::ostream& os, const Shape& s);

// Dense row-major rank-4 array. Value type; copies are deep.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.size()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_.str());
    }
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) { return data_[index(n, c, h, w)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  // Pointer to the (n, c) plane.
  T* plane(std::size_t n, std::size_t c) { return data_.data() + (n * shape_.c + c) * shape_.plane(); }
  const T* plane(std::size_t n, std::size_t c) const {
    return data_.data() + (n * shape_.c + c) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return out;
  }

  // Slice of batch items [begin, begin + count).
  Tensor batch_slice(std::size_t begin, std::size_t count) const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<T> data_;
};

template <class T>
Tensor<T> Tensor<T>::batch_slice(std::size_t begin, std::size_t count) const {
  if (begin + count > shape_.n) throw ShapeError("batch slice out of range");
  const std::size_t item = shape_.c * shape_.plane();
  Shape s{count, shape_.c, shape_.h, shape_.w};
  std::vector<T> d(data_.begin() + static_cast<std::ptrdiff_t>(begin * item),
                   data_.begin() + static_cast<std::ptrdiff_t>((begin + count) * item));
  return Tensor(s, std::move(d));
}

// Concatenate along the batch axis; all parts must share (c, h, w).
template <class T>
Tensor<T> stack_batch(std::span<const Tensor<T>> parts) {
  if (parts.empty()) return {};
  Shape s = parts.front().shape();
  s.n = 0;
  std::vector<T> d;
  for (const auto& p : parts) {
    const auto& ps = p.shape();
    if (ps.c != s.c || ps.h != s.h || ps.w != s.w) {
      throw ShapeError("stack_batch: mismatched item shape " + ps.str() + " vs " + s.str());
    }
    s.n += ps.n;
    d.insert(d.end(), p.vec().begin(), p.vec().end());
  }
  return Tensor<T>(s, std::move(d));
}

using Tensor4 = Tensor<float>;

}  // namespace cellseg
