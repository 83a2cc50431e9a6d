#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "gdpnet/common.hpp"

namespace gdpnet {

// Dense row-major 2-D array. Rows are time steps or batch samples,
// columns are channels or features.
template <typename T>
struct Tensor2 {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<T> data;

  Tensor2() = default;
  Tensor2(size_t r, size_t c) : rows(r), cols(c), data(r * c, T(0)) {}
  Tensor2(size_t r, size_t c, std::vector<T> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols)
      throw_shape("Tensor2: data length " + std::to_string(data.size()) +
                  " != rows*cols " + std::to_string(rows * cols));
  }

  T& operator()(size_t r, size_t c) { return data[r * cols + c]; }
  const T& operator()(size_t r, size_t c) const { return data[r * cols + c]; }

  T* row(size_t r) { return data.data() + r * cols; }
  const T* row(size_t r) const { return data.data() + r * cols; }

  size_t size() const { return data.size(); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data)
      if (!is_finite(v)) return false;
    return true;
  }
};

// Learnable tensor: value plus gradient of identical shape. The shape
// list is kept explicit so conv weights can be {3, Cin, Cout} while FC
// weights are {Cin, Cout}.
template <typename T>
struct ParamTensor {
  std::string name;
  std::vector<size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;

  ParamTensor() = default;
  ParamTensor(std::string n, std::vector<size_t> sh)
      : name(std::move(n)), shape(std::move(sh)) {
    size_t total = 1;
    for (size_t d : shape) total *= d;
    value.assign(total, T(0));
    grad.assign(total, T(0));
  }

  size_t size() const { return value.size(); }
  size_t dim(size_t i) const { return shape.at(i); }

  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }

  bool grads_finite() const {
    for (T g : grad)
      if (!is_finite(g)) return false;
    return true;
  }
};

}  // namespace gdpnet
