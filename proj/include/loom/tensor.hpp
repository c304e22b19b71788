// Copyright (c) 2026 The loom authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "loom/common.hpp"

namespace loom {

using Shape = std::vector<int64_t>;

inline int64_t numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Dense 64-bit float tensor, flat row-major storage. No views or strides;
// shapes are fixed at construction and every dimension is positive.
struct Tensor {
  Shape shape;
  std::vector<double> values;

  Tensor() = default;

  Tensor(Shape s, std::vector<double> v) : shape(std::move(s)), values(std::move(v)) {
    validate();
  }

  static Tensor zeros(Shape s) {
    Tensor t;
    t.shape = std::move(s);
    t.check_dims();
    t.values.assign(static_cast<size_t>(numel(t.shape)), 0.0);
    return t;
  }

  static Tensor full(Shape s, double fill) {
    Tensor t = zeros(std::move(s));
    std::fill(t.values.begin(), t.values.end(), fill);
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor row(std::initializer_list<double> v) {
    return Tensor({static_cast<int64_t>(v.size())}, std::vector<double>(v));
  }

  int64_t size() const { return static_cast<int64_t>(values.size()); }
  int64_t rank() const { return static_cast<int64_t>(shape.size()); }

  // 2-D accessors; rank-1 tensors are treated as a single row.
  int64_t rows() const { return rank() == 1 ? 1 : shape[0]; }
  int64_t cols() const { return rank() == 1 ? shape[0] : shape[rank() - 1]; }

  double& at(int64_t i) { return values[static_cast<size_t>(i)]; }
  double at(int64_t i) const { return values[static_cast<size_t>(i)]; }
  double& at(int64_t r, int64_t c) { return values[static_cast<size_t>(r * cols() + c)]; }
  double at(int64_t r, int64_t c) const { return values[static_cast<size_t>(r * cols() + c)]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (double v : values)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void check_dims() const {
    for (int64_t d : shape)
      if (d <= 0) throw ShapeError("non-positive dimension in " + shape_str(shape));
  }

  void validate() const {
    check_dims();
    if (numel(shape) != size())
      throw ShapeError("shape " + shape_str(shape) + " does not match " +
                       std::to_string(size()) + " values");
  }
};

}  // namespace loom
