#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stfmm/common.hpp"

namespace stfmm {

// Dense row-major n-d array (last index fastest). Single precision for
// training; the double instantiation backs the extended-precision gradient
// verification mode.
template <class S>
struct TensorT {
  std::vector<int> shape;
  std::vector<S> data;

  TensorT() = default;

  explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
    data.assign(numel_of(shape), S(0));
  }

  TensorT(std::vector<int> s, std::vector<S> d)
      : shape(std::move(s)), data(std::move(d)) {
    require(numel_of(shape) == data.size(),
            "tensor: shape/value size mismatch");
  }

  static std::size_t numel_of(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int e : s) {
      require(e > 0, "tensor: non-positive extent " + std::to_string(e));
      n *= static_cast<std::size_t>(e);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }

  S* ptr() { return data.data(); }
  const S* ptr() const { return data.data(); }

  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }

  // rank-3 (c,h,w) accessors; the dominant layout in this project.
  S& at(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  const S& at(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }

  void fill(S v) { data.assign(data.size(), v); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (S v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

  static TensorT zeros_like(const TensorT& t) { return TensorT(t.shape); }
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;

template <class To, class From>
TensorT<To> cast_tensor(const TensorT<From>& t) {
  TensorT<To> out(t.shape);
  for (std::size_t i = 0; i < t.numel(); ++i)
    out.data[i] = static_cast<To>(t.data[i]);
  return out;
}

// Trainable array with its gradient accumulator. grad always mirrors the
// value's shape and starts at zero.
template <class S>
struct GradPairT {
  TensorT<S> value;
  TensorT<S> grad;

  GradPairT() = default;
  explicit GradPairT(TensorT<S> v)
      : value(std::move(v)), grad(TensorT<S>::zeros_like(value)) {}

  void zero_grad() { grad.fill(S(0)); }
};

using GradPair = GradPairT<float>;

}  // namespace stfmm
