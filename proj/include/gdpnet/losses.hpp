#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "gdpnet/tensor.hpp"

namespace gdpnet {

// Loss terms. Batches are row-major matrices with one sample per row:
// meshes as B x 3N flattened coordinates, latents as B x q. All
// gradients are hand-derived; each function either fills a caller
// buffer or returns the gradient tensor.

struct HuberParams {
  double xi = 1.0;  // knee between the quadratic and linear branches
  enum class Reduction { mean, sum } reduction = Reduction::mean;
};

enum class KernelKind { linear, rbf };

struct KernelSpec {
  KernelKind kind = KernelKind::rbf;
  // <= 0 means "use the median heuristic" for rbf kernels.
  double bandwidth = 0.0;
};

struct LossWeights {
  double lambda1 = 0.1;
  double lambda2 = 10.0;
};

enum class ConstraintMode { none, huber, hsic };

inline const char* constraint_mode_name(ConstraintMode m) {
  switch (m) {
    case ConstraintMode::none: return "none";
    case ConstraintMode::huber: return "huber";
    case ConstraintMode::hsic: return "hsic";
  }
  return "?";
}

inline ConstraintMode constraint_mode_from(const std::string& s) {
  if (s == "none") return ConstraintMode::none;
  if (s == "huber") return ConstraintMode::huber;
  if (s == "hsic") return ConstraintMode::hsic;
  throw_usage("unknown constraint mode \"" + s + "\" (none|huber|hsic)");
}

// -------- reconstruction --------
//
// (1/B) sum_i ||pred_i - truth_i||^2, gradient 2(pred - truth)/B.

template <typename T>
T reconstruction_loss(const Tensor2<T>& pred, const Tensor2<T>& truth,
                      Tensor2<T>* grad_pred = nullptr) {
  if (pred.rows != truth.rows || pred.cols != truth.cols)
    throw_shape("reconstruction_loss: pred " + std::to_string(pred.rows) + "x" +
                std::to_string(pred.cols) + " vs truth " +
                std::to_string(truth.rows) + "x" + std::to_string(truth.cols));
  if (pred.rows == 0) throw_shape("reconstruction_loss: empty batch");
  const T inv_b = T(1) / T(pred.rows);
  T acc = T(0);
  if (grad_pred) *grad_pred = Tensor2<T>(pred.rows, pred.cols);
  for (size_t i = 0; i < pred.size(); ++i) {
    const T d = pred.data[i] - truth.data[i];
    acc += d * d;
    if (grad_pred) grad_pred->data[i] = T(2) * d * inv_b;
  }
  return acc * inv_b;
}

// -------- velocity --------
//
// (1/B) sum_i ||(pred_t - pred_tm1) - (truth_t - truth_tm1)||^2 over
// consecutive-frame pairs from the same sequence.

template <typename T>
T velocity_loss(const Tensor2<T>& pred_t, const Tensor2<T>& pred_tm1,
                const Tensor2<T>& truth_t, const Tensor2<T>& truth_tm1,
                Tensor2<T>* grad_pred_t = nullptr,
                Tensor2<T>* grad_pred_tm1 = nullptr) {
  if (pred_t.rows != pred_tm1.rows || pred_t.cols != pred_tm1.cols ||
      pred_t.rows != truth_t.rows || pred_t.cols != truth_t.cols ||
      truth_t.rows != truth_tm1.rows || truth_t.cols != truth_tm1.cols)
    throw_shape("velocity_loss: shape mismatch across frame pair");
  if (pred_t.rows == 0) throw_shape("velocity_loss: empty batch");
  const T inv_b = T(1) / T(pred_t.rows);
  T acc = T(0);
  if (grad_pred_t) *grad_pred_t = Tensor2<T>(pred_t.rows, pred_t.cols);
  if (grad_pred_tm1) *grad_pred_tm1 = Tensor2<T>(pred_t.rows, pred_t.cols);
  for (size_t i = 0; i < pred_t.size(); ++i) {
    const T d = (pred_t.data[i] - pred_tm1.data[i]) -
                (truth_t.data[i] - truth_tm1.data[i]);
    acc += d * d;
    const T g = T(2) * d * inv_b;
    if (grad_pred_t) grad_pred_t->data[i] = g;
    if (grad_pred_tm1) grad_pred_tm1->data[i] = -g;
  }
  return acc * inv_b;
}

// -------- Huber constraint --------
//
// Elementwise on d = r - r_hat: d^2/2 for |d| <= xi, else xi|d| - xi^2/2.
// Reduced over all batch x dim elements.

template <typename T>
T huber_value(T d, T xi) {
  const T a = std::abs(d);
  return a <= xi ? d * d / T(2) : xi * a - xi * xi / T(2);
}

template <typename T>
T huber_deriv(T d, T xi) {
  if (std::abs(d) <= xi) return d;
  return d > T(0) ? xi : -xi;
}

template <typename T>
T huber_constraint(const Tensor2<T>& r, const Tensor2<T>& r_hat,
                   const HuberParams& p, Tensor2<T>* grad_r = nullptr) {
  if (r.rows != r_hat.rows || r.cols != r_hat.cols)
    throw_shape("huber_constraint: r " + std::to_string(r.rows) + "x" +
                std::to_string(r.cols) + " vs r_hat " +
                std::to_string(r_hat.rows) + "x" + std::to_string(r_hat.cols));
  if (r.size() == 0) throw_shape("huber_constraint: empty batch");
  const T xi = T(p.xi);
  const T scale = p.reduction == HuberParams::Reduction::mean
                      ? T(1) / T(r.size())
                      : T(1);
  if (grad_r) *grad_r = Tensor2<T>(r.rows, r.cols);
  T acc = T(0);
  for (size_t i = 0; i < r.size(); ++i) {
    const T d = r.data[i] - r_hat.data[i];
    acc += huber_value(d, xi);
    if (grad_r) grad_r->data[i] = huber_deriv(d, xi) * scale;
  }
  return acc * scale;
}

// -------- HSIC --------

template <typename T>
Tensor2<T> centering_matrix(size_t m) {
  Tensor2<T> h(m, m);
  const T off = -T(1) / T(m);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < m; ++j) h(i, j) = (i == j ? T(1) : T(0)) + off;
  return h;
}

// Median of pairwise Euclidean distances; falls back to 1 when the
// median vanishes (duplicate samples) so the rbf kernel stays defined.
template <typename T>
T median_bandwidth(const Tensor2<T>& s) {
  std::vector<T> dist;
  dist.reserve(s.rows * (s.rows - 1) / 2);
  for (size_t i = 0; i < s.rows; ++i)
    for (size_t j = i + 1; j < s.rows; ++j) {
      T acc = T(0);
      for (size_t c = 0; c < s.cols; ++c) {
        const T d = s(i, c) - s(j, c);
        acc += d * d;
      }
      dist.push_back(std::sqrt(acc));
    }
  if (dist.empty()) return T(1);
  std::sort(dist.begin(), dist.end());
  const size_t n = dist.size();
  const T med = (n % 2 == 1) ? dist[n / 2]
                             : (dist[n / 2 - 1] + dist[n / 2]) / T(2);
  return (med > T(0) && is_finite(med)) ? med : T(1);
}

template <typename T>
T resolve_bandwidth(const Tensor2<T>& samples, const KernelSpec& k) {
  if (k.kind != KernelKind::rbf) return T(1);
  if (k.bandwidth > 0.0) return T(k.bandwidth);
  return median_bandwidth(samples);
}

// K = S S^T (linear) or K_ij = exp(-||s_i - s_j||^2 / (2 sigma^2)) (rbf).
template <typename T>
Tensor2<T> gram_matrix(const Tensor2<T>& s, const KernelSpec& k,
                       T resolved_bandwidth = T(0)) {
  if (s.rows < 2)
    throw_shape("gram_matrix: need at least 2 samples, got " +
                std::to_string(s.rows));
  const size_t m = s.rows;
  Tensor2<T> g(m, m);
  if (k.kind == KernelKind::linear) {
    for (size_t i = 0; i < m; ++i)
      for (size_t j = 0; j <= i; ++j) {
        T acc = T(0);
        for (size_t c = 0; c < s.cols; ++c) acc += s(i, c) * s(j, c);
        g(i, j) = acc;
        g(j, i) = acc;
      }
    return g;
  }
  const T sigma =
      resolved_bandwidth > T(0) ? resolved_bandwidth : resolve_bandwidth(s, k);
  const T inv = T(1) / (T(2) * sigma * sigma);
  for (size_t i = 0; i < m; ++i) {
    g(i, i) = T(1);
    for (size_t j = 0; j < i; ++j) {
      T acc = T(0);
      for (size_t c = 0; c < s.cols; ++c) {
        const T d = s(i, c) - s(j, c);
        acc += d * d;
      }
      const T v = std::exp(-acc * inv);
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

// Empirical HSIC: (m-1)^{-2} tr(K1 H K2 H). The gradient flows through
// K1 only; r_hat is a fixed target, and the rbf bandwidth is treated as
// a per-batch constant (resolved before differentiation).

template <typename T>
T hsic_empirical(const Tensor2<T>& r, const Tensor2<T>& r_hat,
                 const KernelSpec& k1, const KernelSpec& k2,
                 Tensor2<T>* grad_r = nullptr) {
  if (r.rows != r_hat.rows)
    throw_shape("hsic_empirical: batch mismatch " + std::to_string(r.rows) +
                " vs " + std::to_string(r_hat.rows));
  if (r.rows < 2)
    throw_shape("hsic_empirical: need at least 2 samples, got " +
                std::to_string(r.rows));
  const size_t m = r.rows;
  const T sigma1 = resolve_bandwidth(r, k1);
  Tensor2<T> g1 = gram_matrix(r, k1, sigma1);
  Tensor2<T> g2 = gram_matrix(r_hat, k2, resolve_bandwidth(r_hat, k2));
  Tensor2<T> h = centering_matrix<T>(m);

  // a = c * H K2 H with c = (m-1)^{-2}; value = tr(K1 a); a symmetric.
  const T c = T(1) / (T(m - 1) * T(m - 1));
  Tensor2<T> k2h(m, m);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < m; ++j) {
      T acc = T(0);
      for (size_t l = 0; l < m; ++l) acc += g2(i, l) * h(l, j);
      k2h(i, j) = acc;
    }
  Tensor2<T> a(m, m);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < m; ++j) {
      T acc = T(0);
      for (size_t l = 0; l < m; ++l) acc += h(i, l) * k2h(l, j);
      a(i, j) = acc * c;
    }
  T value = T(0);
  for (size_t i = 0; i < m; ++i)
    for (size_t j = 0; j < m; ++j) value += g1(i, j) * a(j, i);

  if (grad_r) {
    *grad_r = Tensor2<T>(r.rows, r.cols);
    if (k1.kind == KernelKind::linear) {
      // K1 = R R^T, d tr(K1 a)/dR = 2 a R.
      for (size_t i = 0; i < m; ++i)
        for (size_t c2 = 0; c2 < r.cols; ++c2) {
          T acc = T(0);
          for (size_t j = 0; j < m; ++j) acc += a(i, j) * r(j, c2);
          (*grad_r)(i, c2) = T(2) * acc;
        }
    } else {
      // K1_ij = exp(-||r_i - r_j||^2/(2 sigma^2));
      // d value/d r_i = -(2/sigma^2) sum_j a_ij K1_ij (r_i - r_j).
      const T scale = -T(2) / (sigma1 * sigma1);
      for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j) {
          if (i == j) continue;
          const T w = scale * a(i, j) * g1(i, j);
          for (size_t c2 = 0; c2 < r.cols; ++c2)
            (*grad_r)(i, c2) += w * (r(i, c2) - r(j, c2));
        }
    }
  }
  return value;
}

// -------- constraint dispatch --------
//
// hsic mode NEGATES the HSIC value so that minimizing the total loss
// maximizes dependence between r and r_hat. Batches of m < 2 cannot
// support the HSIC estimator; the constraint is skipped (0, zero grad)
// and *skipped reports it so the caller can warn.

template <typename T>
T constraint_loss(const Tensor2<T>& r, const Tensor2<T>& r_hat,
                  ConstraintMode mode, const HuberParams& hp,
                  const KernelSpec& k1, const KernelSpec& k2,
                  Tensor2<T>* grad_r = nullptr, bool* skipped = nullptr) {
  if (skipped) *skipped = false;
  if (mode == ConstraintMode::none) {
    if (grad_r) *grad_r = Tensor2<T>(r.rows, r.cols);
    return T(0);
  }
  if (mode == ConstraintMode::huber) return huber_constraint(r, r_hat, hp, grad_r);
  if (r.rows < 2) {
    if (skipped) *skipped = true;
    if (grad_r) *grad_r = Tensor2<T>(r.rows, r.cols);
    return T(0);
  }
  const T v = hsic_empirical(r, r_hat, k1, k2, grad_r);
  if (grad_r)
    for (auto& g : grad_r->data) g = -g;
  return -v;
}

// -------- total --------

template <typename T>
T total_loss(T recon, T constraint, T velocity, const LossWeights& w) {
  if (!is_finite(recon)) throw_numeric("total_loss: non-finite reconstruction term");
  if (!is_finite(constraint)) throw_numeric("total_loss: non-finite constraint term");
  if (!is_finite(velocity)) throw_numeric("total_loss: non-finite velocity term");
  return recon + T(w.lambda1) * constraint + T(w.lambda2) * velocity;
}

}  // namespace gdpnet
