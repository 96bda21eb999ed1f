// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "iag/util.hpp"

namespace iag {

// Dense row-major 2-D tensor. Scalars are 1x1, vectors 1xN.
struct Tensor {
  int rows = 0;
  int cols = 0;
  std::vector<real_t> data;

  Tensor() = default;
  Tensor(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), 0) {}

  static Tensor zeros(int r, int c) { return Tensor(r, c); }
  static Tensor full(int r, int c, real_t v) {
    Tensor t(r, c);
    for (auto& x : t.data) x = v;
    return t;
  }
  static Tensor scalar(real_t v) { return full(1, 1, v); }
  static Tensor row(const std::vector<real_t>& v) {
    Tensor t(1, static_cast<int>(v.size()));
    t.data = v;
    return t;
  }

  size_t numel() const { return data.size(); }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }

  real_t& at(int r, int c) { return data[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)]; }
  real_t at(int r, int c) const { return data[static_cast<size_t>(r) * static_cast<size_t>(cols) + static_cast<size_t>(c)]; }

  void fill(real_t v) {
    for (auto& x : data) x = v;
  }

  bool all_finite() const {
    for (real_t x : data) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  std::string shape_str() const {
    return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
  }
};

}  // namespace iag
