#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "gdpnet/tensor.hpp"

namespace gdpnet {

// Principal-component decomposition of a sample matrix (count x d).
// `components` has the requested number of rows; rows at or past
// `effective_rank` are zero, as are their singular values. Retained rows
// are orthonormal, ordered by decreasing singular value, and
// sign-canonicalized: the largest-magnitude coordinate of each row is
// positive (first such coordinate on exact ties).
struct PcaResult {
  std::vector<double> mean;             // d
  Tensor2<double> components;           // rank x d
  std::vector<double> singular_values;  // rank, descending
  size_t effective_rank = 0;
};

inline PcaResult pca_fit(const Tensor2<double>& samples, size_t rank) {
  const size_t count = samples.rows;
  const size_t d = samples.cols;
  if (rank == 0) throw_usage("pca_fit: rank must be positive");
  if (count == 0) throw_data("pca_fit: no samples");
  if (rank > count)
    throw_data("pca_fit: rank " + std::to_string(rank) + " exceeds sample count " +
               std::to_string(count));
  if (rank > d)
    throw_data("pca_fit: rank " + std::to_string(rank) + " exceeds dimension " +
               std::to_string(d));

  PcaResult out;
  out.mean.assign(d, 0.0);
  for (size_t i = 0; i < count; ++i)
    for (size_t j = 0; j < d; ++j) out.mean[j] += samples(i, j);
  for (size_t j = 0; j < d; ++j) out.mean[j] /= double(count);

  Eigen::MatrixXd xc(count, d);
  for (size_t i = 0; i < count; ++i)
    for (size_t j = 0; j < d; ++j) xc(i, j) = samples(i, j) - out.mean[j];

  out.components = Tensor2<double>(rank, d);
  out.singular_values.assign(rank, 0.0);

  // Eigendecompose the smaller Gram matrix; recover row-space vectors from
  // the sample-space ones when count <= d.
  std::vector<double> lam(rank, 0.0);
  if (count <= d) {
    Eigen::MatrixXd gram = xc * xc.transpose();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
    if (es.info() != Eigen::Success) throw_numeric("pca_fit: eigensolver failed");
    const auto& vals = es.eigenvalues();  // ascending
    const auto& vecs = es.eigenvectors();
    for (size_t j = 0; j < rank; ++j) {
      Eigen::Index idx = Eigen::Index(count) - 1 - Eigen::Index(j);
      double l = vals(idx);
      lam[j] = l > 0.0 ? l : 0.0;
      if (lam[j] > 0.0) {
        Eigen::VectorXd v = xc.transpose() * vecs.col(idx) / std::sqrt(lam[j]);
        for (size_t c = 0; c < d; ++c) out.components(j, c) = v(Eigen::Index(c));
      }
    }
  } else {
    Eigen::MatrixXd cov = xc.transpose() * xc;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    if (es.info() != Eigen::Success) throw_numeric("pca_fit: eigensolver failed");
    const auto& vals = es.eigenvalues();
    const auto& vecs = es.eigenvectors();
    for (size_t j = 0; j < rank; ++j) {
      Eigen::Index idx = Eigen::Index(d) - 1 - Eigen::Index(j);
      double l = vals(idx);
      lam[j] = l > 0.0 ? l : 0.0;
      if (lam[j] > 0.0)
        for (size_t c = 0; c < d; ++c) out.components(j, c) = vecs(Eigen::Index(c), idx);
    }
  }

  double lam_max = 0.0;
  for (double l : lam) lam_max = std::max(lam_max, l);
  const double lam_tol = lam_max * 1e-12;
  for (size_t j = 0; j < rank; ++j) {
    if (lam[j] > lam_tol && lam[j] > 0.0) {
      out.effective_rank = j + 1;
      out.singular_values[j] = std::sqrt(lam[j]);
    } else {
      out.singular_values[j] = 0.0;
      for (size_t c = 0; c < d; ++c) out.components(j, c) = 0.0;
    }
  }
  // Degenerate trailing directions leave a gap, never a hole: rank is the
  // first index whose variance vanished.
  for (size_t j = out.effective_rank; j < rank; ++j) {
    out.singular_values[j] = 0.0;
    for (size_t c = 0; c < d; ++c) out.components(j, c) = 0.0;
  }

  for (size_t j = 0; j < out.effective_rank; ++j) {
    size_t arg = 0;
    double best = 0.0;
    for (size_t c = 0; c < d; ++c) {
      double a = std::abs(out.components(j, c));
      if (a > best) {
        best = a;
        arg = c;
      }
    }
    if (out.components(j, arg) < 0.0)
      for (size_t c = 0; c < d; ++c) out.components(j, c) = -out.components(j, c);
  }
  return out;
}

// Data-driven initialization of the final linear layer. Row j of the
// weight becomes the j-th principal direction scaled by s_j / sqrt(count),
// the bias starts at zero, and the sample mean moves into the fixed output
// offset. A unit-variance latent then reproduces the sample statistics.
template <typename T>
inline void pca_init_output_layer(const Tensor2<double>& displacements, size_t rank,
                                  ParamTensor<T>& out_w, ParamTensor<T>& out_b,
                                  std::vector<T>& out_offset) {
  const size_t count = displacements.rows;
  const size_t d = displacements.cols;
  if (out_w.dim(0) != rank || out_w.dim(1) != d)
    throw_shape("pca_init_output_layer: weight is " + std::to_string(out_w.dim(0)) +
                "x" + std::to_string(out_w.dim(1)) + ", expected " +
                std::to_string(rank) + "x" + std::to_string(d));
  if (out_b.size() != d) throw_shape("pca_init_output_layer: bias size mismatch");
  if (out_offset.size() != d)
    throw_shape("pca_init_output_layer: offset size mismatch");
  PcaResult pca = pca_fit(displacements, rank);
  const double inv_sqrt_count = 1.0 / std::sqrt(double(count));
  for (size_t j = 0; j < rank; ++j) {
    const double scale = pca.singular_values[j] * inv_sqrt_count;
    for (size_t c = 0; c < d; ++c)
      out_w.value[j * d + c] = T(scale * pca.components(j, c));
  }
  for (size_t c = 0; c < d; ++c) {
    out_b.value[c] = T(0);
    out_offset[c] = T(pca.mean[c]);
  }
}

}  // namespace gdpnet
