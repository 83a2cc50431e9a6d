#pragma once

#include <string>
#include <vector>

#include "gdpnet/mesh.hpp"
#include "gdpnet/pca.hpp"
#include "gdpnet/tensor.hpp"

namespace gdpnet {

// Linear geometry encoder fitted on training displacements. Supplies the
// compact targets the latent constraint compares against. Basis rows at or
// past effective_rank are zero, so encoded vectors are zero-padded to
// latent_dim when the data cannot support the full rank.
struct GeoEncoder {
  std::string provider_id = "pca-v1";
  size_t latent_dim = 0;
  size_t effective_rank = 0;
  std::vector<double> mean;  // 3N
  Tensor2<double> basis;     // latent_dim x 3N

  size_t dim() const { return mean.size(); }

  // r_hat = basis * (displacement - mean)
  std::vector<double> encode(const std::vector<double>& displacement) const {
    if (displacement.size() != dim())
      throw_shape("GeoEncoder::encode: displacement size " +
                  std::to_string(displacement.size()) + ", expected " +
                  std::to_string(dim()));
    std::vector<double> r(latent_dim, 0.0);
    for (size_t j = 0; j < effective_rank; ++j) {
      double acc = 0.0;
      for (size_t c = 0; c < dim(); ++c)
        acc += basis(j, c) * (displacement[c] - mean[c]);
      r[j] = acc;
    }
    return r;
  }

  // displacement = mean + basis^T * r_hat
  std::vector<double> decode(const std::vector<double>& r_hat) const {
    if (r_hat.size() != latent_dim)
      throw_shape("GeoEncoder::decode: latent size " + std::to_string(r_hat.size()) +
                  ", expected " + std::to_string(latent_dim));
    std::vector<double> d = mean;
    for (size_t j = 0; j < effective_rank; ++j)
      for (size_t c = 0; c < dim(); ++c) d[c] += basis(j, c) * r_hat[j];
    return d;
  }

  std::vector<double> encode_mesh(const Mesh& y, const Mesh& tmpl) const {
    if (y.vertices.size() != tmpl.vertices.size())
      throw_shape("GeoEncoder::encode_mesh: mesh/template size mismatch");
    std::vector<double> disp(y.vertices.size());
    for (size_t i = 0; i < disp.size(); ++i)
      disp[i] = y.vertices.data[i] - tmpl.vertices.data[i];
    return encode(disp);
  }

  Mesh decode_mesh(const std::vector<double>& r_hat, const Mesh& tmpl) const {
    std::vector<double> disp = decode(r_hat);
    if (disp.size() != tmpl.vertices.size())
      throw_shape("GeoEncoder::decode_mesh: template size mismatch");
    Mesh out = tmpl;
    for (size_t i = 0; i < disp.size(); ++i) out.vertices.data[i] += disp[i];
    return out;
  }
};

// Fit on a (count x 3N) displacement matrix. The achievable rank is capped
// by both the sample count and the ambient dimension; the caller can detect
// the reduction via effective_rank < latent_dim and warn.
inline GeoEncoder fit_geo_encoder(const Tensor2<double>& displacements,
                                  size_t latent_dim) {
  if (latent_dim == 0) throw_usage("fit_geo_encoder: latent_dim must be positive");
  if (displacements.rows == 0) throw_data("fit_geo_encoder: no samples");
  const size_t d = displacements.cols;
  const size_t achievable = std::min(latent_dim, std::min(displacements.rows, d));
  PcaResult pca = pca_fit(displacements, achievable);
  GeoEncoder enc;
  enc.latent_dim = latent_dim;
  enc.effective_rank = pca.effective_rank;
  enc.mean = std::move(pca.mean);
  enc.basis = Tensor2<double>(latent_dim, d);
  for (size_t j = 0; j < pca.effective_rank; ++j)
    for (size_t c = 0; c < d; ++c) enc.basis(j, c) = pca.components(j, c);
  return enc;
}

}  // namespace gdpnet
