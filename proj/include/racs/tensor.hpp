#pragma once
// Dense N-dimensional row-major tensor. The single value type used for
// signals, measurements, activations and gradients. Instantiated with
// float for training/inference and double for gradient verification.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "racs/errors.hpp"

namespace racs {

inline std::size_t shape_numel(const std::vector<int>& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw DimensionError("tensor dimensions must be positive");
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_numel(shape) != data.size())
      throw DimensionError("tensor data length does not match shape " + shape_str(shape));
  }

  static Tensor zeros(std::vector<int> s) {
    std::size_t n = shape_numel(s);
    return Tensor(std::move(s), std::vector<T>(n, T(0)));
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int ndim() const { return static_cast<int>(shape.size()); }

  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  // Multi-index accessors; convenience for tests and small code paths.
  T& at(int i, int j) {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
  }
  const T& at(int i, int j) const {
    return data[static_cast<std::size_t>(i) * shape[1] + j];
  }
  T& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  T& at(int i, int j, int k, int l) {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const T& at(int i, int j, int k, int l) const {
    return data[((static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  // Number of elements per item when the leading dimension is a batch.
  std::size_t item_numel() const {
    return shape.empty() ? 0 : numel() / static_cast<std::size_t>(shape[0]);
  }
};

template <class T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

template <class T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape != b.shape) return false;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    if (!(a.data[i] == b.data[i]) || std::signbit(a.data[i]) != std::signbit(b.data[i]))
      return false;
  return true;
}

}  // namespace racs
