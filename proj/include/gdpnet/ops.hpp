#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "gdpnet/tensor.hpp"

namespace gdpnet {

// Layer primitives with explicit forward and backward passes. The model
// graph is fixed, so every adjoint is written out by hand; backward
// functions accumulate into ParamTensor::grad and return the input
// gradient.

inline size_t ceil_div(size_t a, size_t b) { return (a + b - 1) / b; }

// -------- temporal convolution, 3-tap, zero "same" padding --------
//
// y[t,o] = b[o] + sum_{k in {-1,0,1}} sum_c x[stride*t + k, c] * w[k+1,c,o]
// Output length is ceil(L/stride); taps outside [0, L) read zero.

template <typename T>
Tensor2<T> conv1d_forward(const Tensor2<T>& x, const ParamTensor<T>& w,
                          const ParamTensor<T>& b, size_t stride = 2) {
  if (w.shape.size() != 3 || w.dim(0) != 3)
    throw_shape("conv1d_forward: weight " + w.name + " must be {3,Cin,Cout}");
  const size_t cin = w.dim(1), cout = w.dim(2);
  if (x.cols != cin)
    throw_shape("conv1d_forward: x cols " + std::to_string(x.cols) +
                " != weight Cin " + std::to_string(cin) + " (" + w.name + ")");
  if (b.size() != cout)
    throw_shape("conv1d_forward: bias " + b.name + " size " +
                std::to_string(b.size()) + " != Cout " + std::to_string(cout));
  if (x.rows < 1) throw_shape("conv1d_forward: input length must be >= 1");
  if (stride < 1) throw_shape("conv1d_forward: stride must be >= 1");

  const size_t lo = ceil_div(x.rows, stride);
  Tensor2<T> y(lo, cout);
  for (size_t t = 0; t < lo; ++t) {
    T* yr = y.row(t);
    for (size_t o = 0; o < cout; ++o) yr[o] = b.value[o];
    for (int k = -1; k <= 1; ++k) {
      const long long src = (long long)(stride * t) + k;
      if (src < 0 || src >= (long long)x.rows) continue;
      const T* xr = x.row((size_t)src);
      const T* wk = w.value.data() + size_t(k + 1) * cin * cout;
      for (size_t c = 0; c < cin; ++c) {
        const T xv = xr[c];
        if (xv == T(0)) continue;
        const T* wc = wk + c * cout;
        for (size_t o = 0; o < cout; ++o) yr[o] += xv * wc[o];
      }
    }
  }
  return y;
}

template <typename T>
Tensor2<T> conv1d_backward(const Tensor2<T>& grad_y, const Tensor2<T>& x,
                           ParamTensor<T>& w, ParamTensor<T>& b,
                           size_t stride = 2) {
  const size_t cin = w.dim(1), cout = w.dim(2);
  const size_t lo = ceil_div(x.rows, stride);
  if (grad_y.rows != lo || grad_y.cols != cout)
    throw_shape("conv1d_backward: grad_y shape " + std::to_string(grad_y.rows) +
                "x" + std::to_string(grad_y.cols) + " inconsistent with forward");
  if (x.cols != cin)
    throw_shape("conv1d_backward: x cols != weight Cin (" + w.name + ")");

  Tensor2<T> grad_x(x.rows, x.cols);
  for (size_t t = 0; t < lo; ++t) {
    const T* gy = grad_y.row(t);
    for (size_t o = 0; o < cout; ++o) b.grad[o] += gy[o];
    for (int k = -1; k <= 1; ++k) {
      const long long src = (long long)(stride * t) + k;
      if (src < 0 || src >= (long long)x.rows) continue;
      const T* xr = x.row((size_t)src);
      T* gx = grad_x.row((size_t)src);
      const size_t koff = size_t(k + 1) * cin * cout;
      for (size_t c = 0; c < cin; ++c) {
        const T* wc = w.value.data() + koff + c * cout;
        T* gwc = w.grad.data() + koff + c * cout;
        const T xv = xr[c];
        T acc = T(0);
        for (size_t o = 0; o < cout; ++o) {
          acc += wc[o] * gy[o];
          gwc[o] += xv * gy[o];
        }
        gx[c] += acc;
      }
    }
  }
  return grad_x;
}

// -------- fully connected --------
//
// y = x W + b with x [R x Cin], W [Cin x Cout]. R is usually 1 (a single
// flattened feature vector) but batched rows work the same way.

template <typename T>
Tensor2<T> fc_forward(const Tensor2<T>& x, const ParamTensor<T>& w,
                      const ParamTensor<T>& b) {
  if (w.shape.size() != 2)
    throw_shape("fc_forward: weight " + w.name + " must be {Cin,Cout}");
  const size_t cin = w.dim(0), cout = w.dim(1);
  if (x.cols != cin)
    throw_shape("fc_forward: x cols " + std::to_string(x.cols) +
                " != weight Cin " + std::to_string(cin) + " (" + w.name + ")");
  if (b.size() != cout)
    throw_shape("fc_forward: bias size != Cout (" + b.name + ")");

  Tensor2<T> y(x.rows, cout);
  for (size_t r = 0; r < x.rows; ++r) {
    const T* xr = x.row(r);
    T* yr = y.row(r);
    for (size_t o = 0; o < cout; ++o) yr[o] = b.value[o];
    for (size_t c = 0; c < cin; ++c) {
      const T xv = xr[c];
      if (xv == T(0)) continue;
      const T* wc = w.value.data() + c * cout;
      for (size_t o = 0; o < cout; ++o) yr[o] += xv * wc[o];
    }
  }
  return y;
}

template <typename T>
Tensor2<T> fc_backward(const Tensor2<T>& grad_y, const Tensor2<T>& x,
                       ParamTensor<T>& w, ParamTensor<T>& b) {
  const size_t cin = w.dim(0), cout = w.dim(1);
  if (grad_y.rows != x.rows || grad_y.cols != cout)
    throw_shape("fc_backward: grad_y shape inconsistent with forward (" +
                w.name + ")");
  Tensor2<T> grad_x(x.rows, x.cols);
  for (size_t r = 0; r < x.rows; ++r) {
    const T* gy = grad_y.row(r);
    const T* xr = x.row(r);
    T* gx = grad_x.row(r);
    for (size_t o = 0; o < cout; ++o) b.grad[o] += gy[o];
    for (size_t c = 0; c < cin; ++c) {
      const T* wc = w.value.data() + c * cout;
      T* gwc = w.grad.data() + c * cout;
      const T xv = xr[c];
      T acc = T(0);
      for (size_t o = 0; o < cout; ++o) {
        acc += wc[o] * gy[o];
        gwc[o] += xv * gy[o];
      }
      gx[c] = acc;
    }
  }
  return grad_x;
}

// -------- elementwise activations --------

enum class Act { relu, sigmoid, tanh, linear };

inline const char* act_name(Act a) {
  switch (a) {
    case Act::relu: return "relu";
    case Act::sigmoid: return "sigmoid";
    case Act::tanh: return "tanh";
    case Act::linear: return "linear";
  }
  return "?";
}

template <typename T>
Tensor2<T> activation(const Tensor2<T>& x, Act kind) {
  Tensor2<T> y(x.rows, x.cols);
  for (size_t i = 0; i < x.size(); ++i) {
    const T v = x.data[i];
    switch (kind) {
      case Act::relu: y.data[i] = v > T(0) ? v : T(0); break;
      case Act::sigmoid: y.data[i] = T(1) / (T(1) + std::exp(-v)); break;
      case Act::tanh: y.data[i] = std::tanh(v); break;
      case Act::linear: y.data[i] = v; break;
    }
  }
  return y;
}

// pre is the activation input, post its output; sigmoid and tanh reuse
// post for the derivative.
template <typename T>
Tensor2<T> activation_backward(const Tensor2<T>& grad_y, const Tensor2<T>& pre,
                               const Tensor2<T>& post, Act kind) {
  if (grad_y.rows != pre.rows || grad_y.cols != pre.cols)
    throw_shape("activation_backward: grad shape mismatch");
  Tensor2<T> gx(pre.rows, pre.cols);
  for (size_t i = 0; i < pre.size(); ++i) {
    T d;
    switch (kind) {
      case Act::relu: d = pre.data[i] > T(0) ? T(1) : T(0); break;
      case Act::sigmoid: d = post.data[i] * (T(1) - post.data[i]); break;
      case Act::tanh: d = T(1) - post.data[i] * post.data[i]; break;
      default: d = T(1); break;
    }
    gx.data[i] = grad_y.data[i] * d;
  }
  return gx;
}

// -------- temporal average pooling --------
//
// Non-overlapping window mean along time. A trailing partial window is
// averaged over its actual size, not zero-padded.

template <typename T>
Tensor2<T> pool_time_avg(const Tensor2<T>& x, size_t factor) {
  if (factor == 0) throw_shape("pool_time_avg: factor must be >= 1");
  const size_t lo = ceil_div(x.rows, factor);
  Tensor2<T> y(lo, x.cols);
  for (size_t t = 0; t < lo; ++t) {
    const size_t begin = t * factor;
    const size_t end = std::min(begin + factor, x.rows);
    T* yr = y.row(t);
    for (size_t s = begin; s < end; ++s) {
      const T* xr = x.row(s);
      for (size_t c = 0; c < x.cols; ++c) yr[c] += xr[c];
    }
    const T inv = T(1) / T(end - begin);
    for (size_t c = 0; c < x.cols; ++c) yr[c] *= inv;
  }
  return y;
}

template <typename T>
Tensor2<T> pool_time_avg_backward(const Tensor2<T>& grad_y, size_t in_rows,
                                  size_t factor) {
  if (factor == 0) throw_shape("pool_time_avg_backward: factor must be >= 1");
  if (grad_y.rows != ceil_div(in_rows, factor))
    throw_shape("pool_time_avg_backward: grad_y rows inconsistent");
  Tensor2<T> gx(in_rows, grad_y.cols);
  for (size_t t = 0; t < grad_y.rows; ++t) {
    const size_t begin = t * factor;
    const size_t end = std::min(begin + factor, in_rows);
    const T inv = T(1) / T(end - begin);
    const T* gy = grad_y.row(t);
    for (size_t s = begin; s < end; ++s) {
      T* gr = gx.row(s);
      for (size_t c = 0; c < grad_y.cols; ++c) gr[c] = gy[c] * inv;
    }
  }
  return gx;
}

// -------- channel-pair max pooling --------
//
// y[t,j] = max(x[t,2j], x[t,2j+1]); an odd trailing channel is dropped.
// Ties route the gradient to the even channel.

template <typename T>
Tensor2<T> pool_channels_max(const Tensor2<T>& x) {
  if (x.cols < 2) throw_shape("pool_channels_max: needs C >= 2, got C = " +
                              std::to_string(x.cols));
  const size_t co = x.cols / 2;
  Tensor2<T> y(x.rows, co);
  for (size_t t = 0; t < x.rows; ++t) {
    const T* xr = x.row(t);
    T* yr = y.row(t);
    for (size_t j = 0; j < co; ++j)
      yr[j] = xr[2 * j + 1] > xr[2 * j] ? xr[2 * j + 1] : xr[2 * j];
  }
  return y;
}

template <typename T>
Tensor2<T> pool_channels_max_backward(const Tensor2<T>& grad_y,
                                      const Tensor2<T>& x) {
  const size_t co = x.cols / 2;
  if (grad_y.rows != x.rows || grad_y.cols != co)
    throw_shape("pool_channels_max_backward: grad_y shape inconsistent");
  Tensor2<T> gx(x.rows, x.cols);
  for (size_t t = 0; t < x.rows; ++t) {
    const T* xr = x.row(t);
    const T* gy = grad_y.row(t);
    T* gr = gx.row(t);
    for (size_t j = 0; j < co; ++j) {
      const size_t win = xr[2 * j + 1] > xr[2 * j] ? 2 * j + 1 : 2 * j;
      gr[win] += gy[j];
    }
  }
  return gx;
}

// -------- channel concatenation --------

template <typename T>
Tensor2<T> concat_channels(const std::vector<const Tensor2<T>*>& parts) {
  if (parts.empty()) throw_shape("concat_channels: no parts");
  const size_t rows = parts[0]->rows;
  size_t cols = 0;
  for (const auto* p : parts) {
    if (p->rows != rows)
      throw_shape("concat_channels: row mismatch " + std::to_string(p->rows) +
                  " vs " + std::to_string(rows));
    cols += p->cols;
  }
  Tensor2<T> y(rows, cols);
  for (size_t r = 0; r < rows; ++r) {
    T* yr = y.row(r);
    size_t off = 0;
    for (const auto* p : parts) {
      const T* pr = p->row(r);
      std::copy(pr, pr + p->cols, yr + off);
      off += p->cols;
    }
  }
  return y;
}

// Extract the channel slice [begin, begin+width) of grad for one concat
// part.
template <typename T>
Tensor2<T> slice_channels(const Tensor2<T>& x, size_t begin, size_t width) {
  if (begin + width > x.cols) throw_shape("slice_channels: out of range");
  Tensor2<T> y(x.rows, width);
  for (size_t r = 0; r < x.rows; ++r)
    std::copy(x.row(r) + begin, x.row(r) + begin + width, y.row(r));
  return y;
}

}  // namespace gdpnet
