#pragma once

#include <cmath>
#include <vector>

#include "gdpnet/gradcheck.hpp"
#include "gdpnet/losses.hpp"
#include "gdpnet/model.hpp"
#include "gdpnet/rng.hpp"

namespace gdpnet {

// Whole-model gradient verification: assemble a small random batch,
// compute the full training loss (reconstruction + weighted constraint
// + weighted velocity), populate analytic gradients via the hand-written
// backward passes, then sweep every parameter coordinate with central
// differences.
//
// Instances whose forward pass lands within kink_tol of a ReLU, Huber,
// or channel-max kink are rejected and resampled: the loss is not
// differentiable there and the comparison is meaningless.

struct ModelCheckConfig {
  ModelConfig model;
  LossWeights weights;
  HuberParams huber;
  KernelSpec k1{KernelKind::rbf, 0.0};
  KernelSpec k2{KernelKind::rbf, 0.0};
  size_t batch = 2;
  double kink_tol = 1e-3;
  size_t max_resample = 32;
};

// Small-but-complete topology used for gradient sweeps: every layer
// kind is present while the coordinate count stays in the thousands.
inline ModelCheckConfig tiny_check_config(char variant) {
  ModelCheckConfig cc;
  cc.model.W = 8;
  cc.model.D = 6;
  cc.model.S = 2;
  cc.model.N = 12;
  cc.model.latent_dim = 8;
  cc.model.base_filters = 4;
  cc.model.pca_rank = 3;
  cc.model.decoder_hidden = 16;
  apply_variant(cc.model, variant);
  return cc;
}

namespace detail {

template <typename T>
bool near_relu_kink(const Tensor2<T>& pre, double tol) {
  for (T v : pre.data)
    if (std::abs(double(v)) < tol) return true;
  return false;
}

// Exactly equal pairs are exempt: with every ReLU site at least tol
// from its kink, a post-ReLU zero comes from a dead unit that stays
// exactly zero under eps-size parameter perturbations, so a 0-0 pooled
// pair can never switch its max branch.
template <typename T>
bool near_pool_tie(const Tensor2<T>& timepooled, double tol) {
  const size_t pairs = timepooled.cols / 2;
  for (size_t t = 0; t < timepooled.rows; ++t)
    for (size_t j = 0; j < pairs; ++j) {
      const T a = timepooled(t, 2 * j), b = timepooled(t, 2 * j + 1);
      if (a != b && std::abs(double(a - b)) < tol) return true;
    }
  return false;
}

template <typename T>
bool forward_near_kink(const ModelForward<T>& f, const ModelConfig& cfg,
                       double tol) {
  for (const auto& pre : f.enc.pre)
    if (near_relu_kink(pre, tol)) return true;
  for (const auto& layer : f.enc.skip_timepooled)
    for (size_t i = 0; i + 1 < layer.size(); ++i)
      // The last entry pools the raw input map, which is constant in
      // the parameters; its ties cannot switch under perturbation.
      if (near_pool_tie(layer[i], tol)) return true;
  if (cfg.attention) {
    const Tensor2<T>& relu_in =
        cfg.attention_order == AttentionOrder::paper_literal ? f.dec.att.v
                                                             : f.dec.att.u;
    if (near_relu_kink(relu_in, tol)) return true;
  }
  return false;
}

}  // namespace detail

// One random problem instance: windows, targets, guidance latents.
template <typename T>
struct CheckInstance {
  std::vector<Tensor2<T>> win_t, win_tm1;       // per element, W x D
  std::vector<std::vector<T>> onehot;           // per element, S
  std::vector<std::vector<T>> tmpl;             // per element, 3N
  Tensor2<T> y_t, y_tm1;                        // B x 3N truth
  Tensor2<T> r_hat;                             // B x latent
};

// Targets sit close to the templates so residuals stay small: the loss
// scales quadratically with the residual but its gradients only
// linearly, and a small loss keeps the finite-difference quotient's
// floating-point noise far below the 1e-4 acceptance band.
template <typename T>
CheckInstance<T> sample_check_instance(const ModelCheckConfig& cc, Rng& rng) {
  const ModelConfig& m = cc.model;
  CheckInstance<T> inst;
  inst.y_t = Tensor2<T>(cc.batch, m.N * 3);
  inst.y_tm1 = Tensor2<T>(cc.batch, m.N * 3);
  inst.r_hat = Tensor2<T>(cc.batch, m.latent_dim);
  for (size_t i = 0; i < cc.batch; ++i) {
    Tensor2<T> wt(m.W, m.D), wtm(m.W, m.D);
    for (auto& v : wt.data) v = T(rng.normal());
    for (auto& v : wtm.data) v = T(rng.normal());
    inst.win_t.push_back(std::move(wt));
    inst.win_tm1.push_back(std::move(wtm));
    std::vector<T> oh(m.S, T(0));
    oh[rng.index(m.S)] = T(1);
    inst.onehot.push_back(std::move(oh));
    std::vector<T> tp(m.N * 3);
    for (auto& v : tp) v = T(rng.normal(0.0, 0.3));
    for (size_t j = 0; j < tp.size(); ++j) {
      inst.y_t(i, j) = tp[j] + T(rng.normal(0.0, 0.05));
      inst.y_tm1(i, j) = tp[j] + T(rng.normal(0.0, 0.05));
    }
    inst.tmpl.push_back(std::move(tp));
  }
  for (auto& v : inst.r_hat.data) v = T(rng.normal());
  return inst;
}

// Full loss over the instance with the given (already resolved) kernel
// specs. Optionally populates parameter gradients.
template <typename T>
T model_loss(ModelParams<T>& params, const ModelCheckConfig& cc,
             const CheckInstance<T>& inst, const KernelSpec& k1r,
             const KernelSpec& k2r, bool with_grads,
             std::vector<ModelForward<T>>* fwd_out = nullptr) {
  const size_t B = cc.batch;
  const ModelConfig& m = params.cfg;
  std::vector<ModelForward<T>> f_t, f_tm1;
  Tensor2<T> pred_t(B, m.N * 3), pred_tm1(B, m.N * 3), r_t(B, m.latent_dim);
  for (size_t i = 0; i < B; ++i) {
    f_t.push_back(gdpnet_forward(params, inst.win_t[i], inst.onehot[i],
                                 inst.tmpl[i]));
    f_tm1.push_back(gdpnet_forward(params, inst.win_tm1[i], inst.onehot[i],
                                   inst.tmpl[i]));
    std::copy(f_t[i].dec.pred.data.begin(), f_t[i].dec.pred.data.end(),
              pred_t.row(i));
    std::copy(f_tm1[i].dec.pred.data.begin(), f_tm1[i].dec.pred.data.end(),
              pred_tm1.row(i));
    std::copy(f_t[i].enc.r.data.begin(), f_t[i].enc.r.data.end(), r_t.row(i));
  }
  Tensor2<T> g_rec, g_vt, g_vtm, g_con;
  const T lr = reconstruction_loss(pred_t, inst.y_t,
                                   with_grads ? &g_rec : nullptr);
  const T lv = velocity_loss(pred_t, pred_tm1, inst.y_t, inst.y_tm1,
                             with_grads ? &g_vt : nullptr,
                             with_grads ? &g_vtm : nullptr);
  const T lc = constraint_loss(r_t, inst.r_hat, m.constraint_mode, cc.huber,
                               k1r, k2r, with_grads ? &g_con : nullptr);
  const T total = total_loss(lr, lc, lv, cc.weights);
  if (with_grads) {
    const T l1 = T(cc.weights.lambda1), l2 = T(cc.weights.lambda2);
    for (size_t i = 0; i < B; ++i) {
      Tensor2<T> gp_t(1, m.N * 3), gp_tm1(1, m.N * 3), gr(1, m.latent_dim);
      for (size_t j = 0; j < m.N * 3; ++j) {
        gp_t.data[j] = g_rec(i, j) + l2 * g_vt(i, j);
        gp_tm1.data[j] = l2 * g_vtm(i, j);
      }
      for (size_t j = 0; j < m.latent_dim; ++j)
        gr.data[j] = l1 * g_con(i, j);
      gdpnet_backward(params, f_t[i], gp_t, &gr);
      gdpnet_backward(params, f_tm1[i], gp_tm1);
    }
  }
  if (fwd_out) {
    *fwd_out = std::move(f_t);
    for (auto& f : f_tm1) fwd_out->push_back(std::move(f));
  }
  return total;
}

// End-to-end gradient check for one variant topology and seed.
template <typename T = double>
GradCheckReport<T> model_gradient_check(const ModelCheckConfig& cc,
                                        uint64_t seed, T eps = T(1e-5)) {
  ModelParams<T> params(cc.model);
  CheckInstance<T> inst;
  KernelSpec k1r = cc.k1, k2r = cc.k2;
  bool accepted = false;
  for (size_t attempt = 0; attempt < cc.max_resample && !accepted; ++attempt) {
    Rng rng(seed_derive(seed, "gradcheck-instance", attempt));
    // Unit gain here, not the damped training default: the sweep checks
    // the backward code, and unit-scale pre-activations keep every ReLU
    // site clear of the kink_tol rejection band.
    params.init(rng, 1.0);
    // The output layer trains from a PCA init in the real pipeline;
    // give it small random values here so its gradients are exercised
    // on a nontrivial forward.
    for (auto& v : params.out_w.value) v = T(rng.normal(0.0, 0.05));
    inst = sample_check_instance<T>(cc, rng);

    std::vector<ModelForward<T>> fwd;
    params.zero_grads();
    Tensor2<T> r_t(cc.batch, cc.model.latent_dim);
    model_loss(params, cc, inst, k1r, k2r, false, &fwd);
    for (size_t i = 0; i < cc.batch; ++i)
      std::copy(fwd[i].enc.r.data.begin(), fwd[i].enc.r.data.end(),
                r_t.row(i));

    bool near = false;
    for (const auto& f : fwd)
      if (detail::forward_near_kink(f, cc.model, cc.kink_tol)) near = true;
    if (cc.model.constraint_mode == ConstraintMode::huber)
      for (size_t i = 0; i < r_t.size() && !near; ++i)
        if (std::abs(std::abs(double(r_t.data[i] - inst.r_hat.data[i])) -
                     cc.huber.xi) < cc.kink_tol)
          near = true;
    if (near) continue;

    // The median-heuristic bandwidth is a per-batch constant: resolve
    // it from the unperturbed latents once, then differentiate with it
    // frozen.
    if (cc.model.constraint_mode == ConstraintMode::hsic) {
      k1r.bandwidth = double(resolve_bandwidth(r_t, cc.k1));
      k2r.bandwidth = double(resolve_bandwidth(inst.r_hat, cc.k2));
    }
    accepted = true;
  }
  if (!accepted)
    throw_numeric("model_gradient_check: could not sample a kink-free "
                  "instance after resampling");

  params.zero_grads();
  model_loss(params, cc, inst, k1r, k2r, true);
  auto loss_fn = [&]() {
    return model_loss(params, cc, inst, k1r, k2r, false);
  };
  return finite_diff_check<T>(loss_fn, params.learnable(), eps);
}

}  // namespace gdpnet
