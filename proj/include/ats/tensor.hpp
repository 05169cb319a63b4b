#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "ats/errors.hpp"

namespace ats {

// Dense row-major tensor of rank 1 or 2. Rank-1 tensors behave as a single
// row wherever a row interpretation is needed.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<size_t> shape) : shape_(std::move(shape)) {
    data_.assign(count(shape_), T(0));
  }

  Tensor(std::vector<size_t> shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != count(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_str());
    }
  }

  static Tensor zeros(std::vector<size_t> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<size_t> shape, T value) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = value;
    return t;
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  static Tensor row_matrix(size_t rows, size_t cols, std::vector<T> data) {
    return Tensor({rows, cols}, std::move(data));
  }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t numel() const { return data_.size(); }

  // Row/column view: rank-1 tensors are a single row.
  size_t rows() const { return rank() <= 1 ? 1 : shape_[0]; }
  size_t cols() const {
    if (rank() == 0) return 0;
    return rank() == 1 ? shape_[0] : shape_[1];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  T& at(size_t r, size_t c) { return data_[r * cols() + c]; }
  const T& at(size_t r, size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (const T& x : data_) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  void fill(T value) {
    for (auto& x : data_) x = value;
  }

  std::string shape_str() const {
    std::ostringstream os;
    os << "{";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) os << ",";
      os << shape_[i];
    }
    os << "}";
    return os.str();
  }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

 private:
  static size_t count(const std::vector<size_t>& shape) {
    size_t n = 1;
    for (size_t d : shape) n *= d;
    return shape.empty() ? 0 : n;
  }

  std::vector<size_t> shape_;
  std::vector<T> data_;
};

}  // namespace ats
