#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gdpnet/losses.hpp"
#include "gdpnet/ops.hpp"
#include "gdpnet/rng.hpp"
#include "gdpnet/tensor.hpp"

namespace gdpnet {

// GDPnet: a 4-layer strided conv encoder over speech-feature windows
// (optionally with dense skip connections), a 64-dim cross-modal latent,
// and a fully connected decoder (optionally attention-gated) emitting
// per-vertex displacements added to a subject template. The graph is
// fixed, so forward passes fill explicit caches and backward passes are
// hand-derived adjoints.

enum class AttentionOrder { paper_literal, se_standard };

inline const char* attention_order_name(AttentionOrder o) {
  return o == AttentionOrder::paper_literal ? "paper_literal" : "se_standard";
}

inline AttentionOrder attention_order_from(const std::string& s) {
  if (s == "paper_literal") return AttentionOrder::paper_literal;
  if (s == "se_standard") return AttentionOrder::se_standard;
  throw_usage("unknown attention order \"" + s +
              "\" (paper_literal|se_standard)");
}

struct ModelConfig {
  size_t W = 16;            // window frames
  size_t D = 29;            // feature channels per frame
  size_t S = 2;             // subjects (one-hot width)
  size_t N = 642;           // mesh vertices
  size_t latent_dim = 64;
  size_t base_filters = 32;
  size_t pca_rank = 50;
  size_t decoder_hidden = 256;
  bool dense = true;
  bool attention = true;
  AttentionOrder attention_order = AttentionOrder::paper_literal;
  ConstraintMode constraint_mode = ConstraintMode::hsic;

  void validate() const {
    if (W < 1 || D < 1 || S < 1 || N < 1 || latent_dim < 1 ||
        base_filters < 1 || pca_rank < 1 || decoder_hidden < 1)
      throw_usage("model config: all sizes must be positive");
    if (attention && decoder_hidden % 2 != 0)
      throw_usage("model config: attention needs an even decoder_hidden, got " +
                  std::to_string(decoder_hidden));
  }
};

// Ablation variants: (a) plain everything, no constraint; (b) +HSIC;
// (c) Huber instead; (d) HSIC + dense encoder; (e) HSIC + attention;
// (f) HSIC + dense + attention.
inline void apply_variant(ModelConfig& cfg, char v) {
  switch (v) {
    case 'a': cfg.constraint_mode = ConstraintMode::none;  cfg.dense = false; cfg.attention = false; break;
    case 'b': cfg.constraint_mode = ConstraintMode::hsic;  cfg.dense = false; cfg.attention = false; break;
    case 'c': cfg.constraint_mode = ConstraintMode::huber; cfg.dense = false; cfg.attention = false; break;
    case 'd': cfg.constraint_mode = ConstraintMode::hsic;  cfg.dense = true;  cfg.attention = false; break;
    case 'e': cfg.constraint_mode = ConstraintMode::hsic;  cfg.dense = false; cfg.attention = true;  break;
    case 'f': cfg.constraint_mode = ConstraintMode::hsic;  cfg.dense = true;  cfg.attention = true;  break;
    default: throw_usage(std::string("unknown variant '") + v + "' (a..f)");
  }
}

// Channel plan: C_0 = D+S, C_l = base_filters * 2^{l-1} for l >= 1.
inline size_t channel_plan(const ModelConfig& cfg, size_t layer) {
  if (layer == 0) return cfg.D + cfg.S;
  return cfg.base_filters << (layer - 1);
}

// Input channels of conv layer l in 1..4: the previous map plus, with
// dense connectivity, every earlier map reduced once by channel-pair
// max pooling.
inline size_t encoder_input_channels(size_t layer, const ModelConfig& cfg) {
  if (layer < 1 || layer > 4)
    throw_usage("encoder_input_channels: layer must be 1..4, got " +
                std::to_string(layer));
  size_t total = channel_plan(cfg, layer - 1);
  if (cfg.dense)
    for (size_t k = 0; k + 2 <= layer; ++k) total += channel_plan(cfg, k) / 2;
  return total;
}

// Time length entering conv layer l (1..4) and after it; stride-2 convs
// halve with ceiling. encoder_time_plan[0] = W, [4] = final length.
inline std::vector<size_t> encoder_time_plan(const ModelConfig& cfg) {
  std::vector<size_t> len{cfg.W};
  for (int l = 0; l < 4; ++l) len.push_back(ceil_div(len.back(), 2));
  return len;
}

template <typename T>
struct ModelParams {
  ModelConfig cfg;
  std::vector<ParamTensor<T>> conv_w;  // 4 x {3, Cin_l, F_l}
  std::vector<ParamTensor<T>> conv_b;  // 4 x {F_l}
  ParamTensor<T> fc_latent_w, fc_latent_b;
  ParamTensor<T> dec1_w, dec1_b;
  ParamTensor<T> att_reduce, att_expand;  // {C, C/2}, {C/2, C}; row-vector convention
  ParamTensor<T> dec2_w, dec2_b;
  ParamTensor<T> out_w, out_b;
  std::vector<T> out_offset;  // fixed displacement offset, not learned

  explicit ModelParams(const ModelConfig& c) : cfg(c) {
    cfg.validate();
    const auto tlen = encoder_time_plan(cfg);
    for (size_t l = 1; l <= 4; ++l) {
      const size_t cin = encoder_input_channels(l, cfg);
      const size_t cout = channel_plan(cfg, l);
      conv_w.emplace_back("conv" + std::to_string(l) + ".w",
                          std::vector<size_t>{3, cin, cout});
      conv_b.emplace_back("conv" + std::to_string(l) + ".b",
                          std::vector<size_t>{cout});
    }
    const size_t flat = tlen[4] * channel_plan(cfg, 4);
    fc_latent_w = ParamTensor<T>("fc_latent.w", {flat, cfg.latent_dim});
    fc_latent_b = ParamTensor<T>("fc_latent.b", {cfg.latent_dim});
    dec1_w = ParamTensor<T>("dec1.w", {cfg.latent_dim, cfg.decoder_hidden});
    dec1_b = ParamTensor<T>("dec1.b", {cfg.decoder_hidden});
    if (cfg.attention) {
      att_reduce = ParamTensor<T>("att.reduce",
                                  {cfg.decoder_hidden, cfg.decoder_hidden / 2});
      att_expand = ParamTensor<T>("att.expand",
                                  {cfg.decoder_hidden / 2, cfg.decoder_hidden});
    }
    dec2_w = ParamTensor<T>("dec2.w", {cfg.decoder_hidden, cfg.pca_rank});
    dec2_b = ParamTensor<T>("dec2.b", {cfg.pca_rank});
    out_w = ParamTensor<T>("out.w", {cfg.pca_rank, cfg.N * 3});
    out_b = ParamTensor<T>("out.b", {cfg.N * 3});
    out_offset.assign(cfg.N * 3, T(0));
  }

  std::vector<ParamTensor<T>*> learnable() {
    std::vector<ParamTensor<T>*> all;
    for (auto& p : conv_w) all.push_back(&p);
    for (auto& p : conv_b) all.push_back(&p);
    all.push_back(&fc_latent_w);
    all.push_back(&fc_latent_b);
    all.push_back(&dec1_w);
    all.push_back(&dec1_b);
    if (cfg.attention) {
      all.push_back(&att_reduce);
      all.push_back(&att_expand);
    }
    all.push_back(&dec2_w);
    all.push_back(&dec2_b);
    all.push_back(&out_w);
    all.push_back(&out_b);
    return all;
  }
  std::vector<const ParamTensor<T>*> learnable() const {
    auto* self = const_cast<ModelParams<T>*>(this);
    std::vector<const ParamTensor<T>*> all;
    for (auto* p : self->learnable()) all.push_back(p);
    return all;
  }

  size_t param_count() const {
    size_t n = 0;
    for (const auto* p : learnable()) n += p->size();
    return n;
  }

  void zero_grads() {
    for (auto* p : learnable()) p->zero_grad();
  }

  // He-style init for the ReLU conv stack, Xavier-style for the dense
  // layers; biases zero; output layer zero (overwritten by the PCA
  // init, and zero weights keep prediction = template beforehand).
  //
  // The default gain starts the net well inside the linear regime.
  // With the step size and epoch budget fixed, unit-scale starts spend
  // most of the run unlearning their own random structure; a quarter-
  // scale start reaches a better basin in the same budget.
  void init(Rng& rng, double gain = 0.25) {
    auto fill_normal = [&rng](ParamTensor<T>& p, double stddev) {
      for (auto& v : p.value) v = T(rng.normal(0.0, stddev));
    };
    for (size_t l = 0; l < 4; ++l)
      fill_normal(conv_w[l], gain * std::sqrt(2.0 / double(3 * conv_w[l].dim(1))));
    fill_normal(fc_latent_w, gain * std::sqrt(1.0 / double(fc_latent_w.dim(0))));
    fill_normal(dec1_w, gain * std::sqrt(1.0 / double(dec1_w.dim(0))));
    if (cfg.attention) {
      fill_normal(att_reduce, gain * std::sqrt(1.0 / double(att_reduce.dim(0))));
      fill_normal(att_expand, gain * std::sqrt(1.0 / double(att_expand.dim(0))));
    }
    fill_normal(dec2_w, gain * std::sqrt(1.0 / double(dec2_w.dim(0))));
    // out_w, out_b, all biases, out_offset stay zero.
  }
};

// Verifies every stored tensor against the recomputed structural plan.
template <typename T>
void shape_audit(const ModelParams<T>& p) {
  const ModelConfig& cfg = p.cfg;
  const auto tlen = encoder_time_plan(cfg);
  auto expect = [](bool ok, const std::string& what) {
    if (!ok) throw_shape("shape audit: " + what);
  };
  expect(p.conv_w.size() == 4 && p.conv_b.size() == 4, "need 4 conv layers");
  for (size_t l = 1; l <= 4; ++l) {
    const auto& w = p.conv_w[l - 1];
    expect(w.shape.size() == 3 && w.dim(0) == 3, w.name + " tap count");
    expect(w.dim(1) == encoder_input_channels(l, cfg), w.name + " input channels");
    expect(w.dim(2) == channel_plan(cfg, l), w.name + " output channels");
    expect(p.conv_b[l - 1].size() == channel_plan(cfg, l),
           p.conv_b[l - 1].name + " width");
    expect(tlen[l] == ceil_div(tlen[l - 1], 2), "time plan at layer " +
           std::to_string(l));
  }
  expect(p.fc_latent_w.dim(0) == tlen[4] * channel_plan(cfg, 4) &&
         p.fc_latent_w.dim(1) == cfg.latent_dim, "fc_latent.w");
  expect(p.dec1_w.dim(0) == cfg.latent_dim &&
         p.dec1_w.dim(1) == cfg.decoder_hidden, "dec1.w");
  if (cfg.attention) {
    expect(p.att_reduce.dim(0) == cfg.decoder_hidden &&
           p.att_reduce.dim(1) == cfg.decoder_hidden / 2, "att.reduce");
    expect(p.att_expand.dim(0) == cfg.decoder_hidden / 2 &&
           p.att_expand.dim(1) == cfg.decoder_hidden, "att.expand");
  } else {
    expect(p.att_reduce.size() == 0 && p.att_expand.size() == 0,
           "attention tensors present without attention");
  }
  expect(p.dec2_w.dim(0) == cfg.decoder_hidden &&
         p.dec2_w.dim(1) == cfg.pca_rank, "dec2.w");
  expect(p.out_w.dim(0) == cfg.pca_rank && p.out_w.dim(1) == cfg.N * 3,
         "out.w");
  expect(p.out_b.size() == cfg.N * 3, "out.b");
  expect(p.out_offset.size() == cfg.N * 3, "out_offset");
}

// -------- row-vector products without bias (attention gates) --------

template <typename T>
Tensor2<T> rowvec_mul(const Tensor2<T>& x, const ParamTensor<T>& w) {
  if (x.rows != 1 || w.shape.size() != 2 || x.cols != w.dim(0))
    throw_shape("rowvec_mul: 1x" + std::to_string(x.cols) + " vs " + w.name);
  Tensor2<T> y(1, w.dim(1));
  for (size_t c = 0; c < x.cols; ++c) {
    const T xv = x.data[c];
    if (xv == T(0)) continue;
    const T* wc = w.value.data() + c * w.dim(1);
    for (size_t o = 0; o < w.dim(1); ++o) y.data[o] += xv * wc[o];
  }
  return y;
}

template <typename T>
Tensor2<T> rowvec_mul_backward(const Tensor2<T>& grad_y, const Tensor2<T>& x,
                               ParamTensor<T>& w) {
  Tensor2<T> gx(1, x.cols);
  for (size_t c = 0; c < x.cols; ++c) {
    const T* wc = w.value.data() + c * w.dim(1);
    T* gwc = w.grad.data() + c * w.dim(1);
    T acc = T(0);
    for (size_t o = 0; o < w.dim(1); ++o) {
      acc += wc[o] * grad_y.data[o];
      gwc[o] += x.data[c] * grad_y.data[o];
    }
    gx.data[c] = acc;
  }
  return gx;
}

// -------- attention gate --------
//
// paper_literal: gate a = relu(expand(sigmoid(reduce(x)))).
// se_standard:   gate a = sigmoid(expand(relu(reduce(x)))).
// Output x ~ = x (*) a elementwise. No biases.

template <typename T>
struct AttentionCache {
  Tensor2<T> x, u, s, v, a, xt;
};

template <typename T>
AttentionCache<T> attention_block(const Tensor2<T>& x,
                                  const ParamTensor<T>& reduce,
                                  const ParamTensor<T>& expand,
                                  AttentionOrder order) {
  AttentionCache<T> c;
  const Act inner =
      order == AttentionOrder::paper_literal ? Act::sigmoid : Act::relu;
  const Act outer =
      order == AttentionOrder::paper_literal ? Act::relu : Act::sigmoid;
  c.x = x;
  c.u = rowvec_mul(x, reduce);
  c.s = activation(c.u, inner);
  c.v = rowvec_mul(c.s, expand);
  c.a = activation(c.v, outer);
  c.xt = Tensor2<T>(1, x.cols);
  for (size_t i = 0; i < x.cols; ++i) c.xt.data[i] = x.data[i] * c.a.data[i];
  return c;
}

template <typename T>
Tensor2<T> attention_backward(const Tensor2<T>& grad_xt,
                              const AttentionCache<T>& c,
                              ParamTensor<T>& reduce, ParamTensor<T>& expand,
                              AttentionOrder order) {
  const Act inner =
      order == AttentionOrder::paper_literal ? Act::sigmoid : Act::relu;
  const Act outer =
      order == AttentionOrder::paper_literal ? Act::relu : Act::sigmoid;
  Tensor2<T> ga(1, c.a.cols), gx(1, c.x.cols);
  for (size_t i = 0; i < c.x.cols; ++i) {
    ga.data[i] = grad_xt.data[i] * c.x.data[i];
    gx.data[i] = grad_xt.data[i] * c.a.data[i];  // direct path
  }
  Tensor2<T> gv = activation_backward(ga, c.v, c.a, outer);
  Tensor2<T> gs = rowvec_mul_backward(gv, c.s, expand);
  Tensor2<T> gu = activation_backward(gs, c.u, c.s, inner);
  Tensor2<T> gx_att = rowvec_mul_backward(gu, c.x, reduce);
  for (size_t i = 0; i < gx.cols; ++i) gx.data[i] += gx_att.data[i];
  return gx;
}

// -------- encoder --------

template <typename T>
struct EncoderCache {
  // s[0] is the W x (D+S) input; s[l] the post-ReLU map of conv layer l.
  std::vector<Tensor2<T>> s;
  std::vector<Tensor2<T>> layer_in;  // concatenated conv inputs
  std::vector<Tensor2<T>> pre;       // conv outputs before ReLU
  // Per layer, per skip (ordered most-recent-first), the time-pooled
  // map before channel-pair max pooling.
  std::vector<std::vector<Tensor2<T>>> skip_timepooled;
  Tensor2<T> flat;  // 1 x (final_len * F4)
  Tensor2<T> r;     // 1 x latent_dim
};

template <typename T>
Tensor2<T> assemble_window_input(const ModelConfig& cfg,
                                 const Tensor2<T>& features,
                                 const std::vector<T>& subject_onehot) {
  if (features.rows != cfg.W || features.cols != cfg.D)
    throw_shape("encoder: features must be " + std::to_string(cfg.W) + "x" +
                std::to_string(cfg.D) + ", got " +
                std::to_string(features.rows) + "x" +
                std::to_string(features.cols));
  if (subject_onehot.size() != cfg.S)
    throw_shape("encoder: subject one-hot must have " + std::to_string(cfg.S) +
                " entries, got " + std::to_string(subject_onehot.size()));
  Tensor2<T> x0(cfg.W, cfg.D + cfg.S);
  for (size_t t = 0; t < cfg.W; ++t) {
    T* row = x0.row(t);
    const T* f = features.row(t);
    std::copy(f, f + cfg.D, row);
    std::copy(subject_onehot.begin(), subject_onehot.end(), row + cfg.D);
  }
  return x0;
}

template <typename T>
EncoderCache<T> encoder_forward(const ModelParams<T>& p,
                                const Tensor2<T>& features,
                                const std::vector<T>& subject_onehot) {
  const ModelConfig& cfg = p.cfg;
  EncoderCache<T> c;
  c.s.push_back(assemble_window_input(cfg, features, subject_onehot));
  c.skip_timepooled.resize(4);
  for (size_t l = 1; l <= 4; ++l) {
    // Skips enter most-recent-first: concat(s_{l-1}, down(s_{l-2}), ..,
    // down(s_0)).
    std::vector<Tensor2<T>> maxed;
    if (cfg.dense && l >= 2)
      for (size_t k = l - 1; k-- > 0;) {
        const size_t gap = l - 1 - k;
        c.skip_timepooled[l - 1].push_back(
            pool_time_avg(c.s[k], size_t(1) << gap));
        maxed.push_back(pool_channels_max(c.skip_timepooled[l - 1].back()));
      }
    std::vector<const Tensor2<T>*> parts{&c.s[l - 1]};
    for (auto& mp : maxed) parts.push_back(&mp);
    c.layer_in.push_back(concat_channels(parts));
    c.pre.push_back(conv1d_forward(c.layer_in.back(), p.conv_w[l - 1],
                                   p.conv_b[l - 1], 2));
    c.s.push_back(activation(c.pre.back(), Act::relu));
  }
  const Tensor2<T>& last = c.s[4];
  c.flat = Tensor2<T>(1, last.size(), last.data);
  c.r = fc_forward(c.flat, p.fc_latent_w, p.fc_latent_b);
  return c;
}

// Accumulates parameter gradients; returns the gradient w.r.t. the
// W x (D+S) assembled input (rarely needed, but cheap).
template <typename T>
Tensor2<T> encoder_backward(ModelParams<T>& p, const EncoderCache<T>& c,
                            const Tensor2<T>& grad_r) {
  const ModelConfig& cfg = p.cfg;
  std::vector<Tensor2<T>> grad_s;
  for (const auto& s : c.s) grad_s.emplace_back(s.rows, s.cols);

  Tensor2<T> gflat = fc_backward(grad_r, c.flat, p.fc_latent_w, p.fc_latent_b);
  grad_s[4] = Tensor2<T>(c.s[4].rows, c.s[4].cols, gflat.data);

  for (size_t l = 4; l >= 1; --l) {
    Tensor2<T> gpre =
        activation_backward(grad_s[l], c.pre[l - 1], c.s[l], Act::relu);
    Tensor2<T> gin =
        conv1d_backward(gpre, c.layer_in[l - 1], p.conv_w[l - 1],
                        p.conv_b[l - 1], 2);
    size_t off = c.s[l - 1].cols;
    {
      Tensor2<T> direct = slice_channels(gin, 0, off);
      for (size_t i = 0; i < direct.size(); ++i)
        grad_s[l - 1].data[i] += direct.data[i];
    }
    if (cfg.dense && l >= 2) {
      size_t idx = 0;
      for (size_t k = l - 1; k-- > 0;) {
        const size_t gap = l - 1 - k;
        const Tensor2<T>& tp = c.skip_timepooled[l - 1][idx];
        const size_t width = tp.cols / 2;
        Tensor2<T> gslice = slice_channels(gin, off, width);
        off += width;
        Tensor2<T> gtp = pool_channels_max_backward(gslice, tp);
        Tensor2<T> gsk =
            pool_time_avg_backward(gtp, c.s[k].rows, size_t(1) << gap);
        for (size_t i = 0; i < gsk.size(); ++i) grad_s[k].data[i] += gsk.data[i];
        ++idx;
      }
    }
    if (off != gin.cols)
      throw_shape("encoder_backward: concat split mismatch at layer " +
                  std::to_string(l));
  }
  return grad_s[0];
}

// -------- decoder --------

template <typename T>
struct DecoderCache {
  Tensor2<T> r;            // input latent, 1 x latent_dim
  Tensor2<T> h1pre, h1;    // first FC + tanh
  AttentionCache<T> att;   // valid only when attention is on
  Tensor2<T> xt;           // gated (or pass-through) hidden
  Tensor2<T> h2pre, h2;    // second FC + tanh
  Tensor2<T> disp;         // 1 x 3N displacement
  Tensor2<T> pred;         // 1 x 3N template + disp
};

template <typename T>
DecoderCache<T> decoder_forward(const ModelParams<T>& p, const Tensor2<T>& r,
                                const std::vector<T>& template_flat) {
  const ModelConfig& cfg = p.cfg;
  if (template_flat.size() != cfg.N * 3)
    throw_shape("decoder: template has " +
                std::to_string(template_flat.size() / 3) + " vertices, model " +
                std::to_string(cfg.N));
  if (r.rows != 1 || r.cols != cfg.latent_dim)
    throw_shape("decoder: latent must be 1x" + std::to_string(cfg.latent_dim));
  DecoderCache<T> c;
  c.r = r;
  c.h1pre = fc_forward(r, p.dec1_w, p.dec1_b);
  c.h1 = activation(c.h1pre, Act::tanh);
  if (cfg.attention) {
    c.att = attention_block(c.h1, p.att_reduce, p.att_expand,
                            cfg.attention_order);
    c.xt = c.att.xt;
  } else {
    c.xt = c.h1;
  }
  c.h2pre = fc_forward(c.xt, p.dec2_w, p.dec2_b);
  c.h2 = activation(c.h2pre, Act::tanh);
  c.disp = fc_forward(c.h2, p.out_w, p.out_b);
  for (size_t i = 0; i < c.disp.cols; ++i) c.disp.data[i] += p.out_offset[i];
  c.pred = Tensor2<T>(1, cfg.N * 3);
  for (size_t i = 0; i < c.pred.cols; ++i)
    c.pred.data[i] = T(template_flat[i]) + c.disp.data[i];
  return c;
}

// grad_pred is d(loss)/d(prediction) = d(loss)/d(displacement); returns
// the gradient w.r.t. the latent r.
template <typename T>
Tensor2<T> decoder_backward(ModelParams<T>& p, const DecoderCache<T>& c,
                            const Tensor2<T>& grad_pred) {
  const ModelConfig& cfg = p.cfg;
  Tensor2<T> gh2 = fc_backward(grad_pred, c.h2, p.out_w, p.out_b);
  Tensor2<T> gh2pre = activation_backward(gh2, c.h2pre, c.h2, Act::tanh);
  Tensor2<T> gxt = fc_backward(gh2pre, c.xt, p.dec2_w, p.dec2_b);
  Tensor2<T> gh1 =
      cfg.attention
          ? attention_backward(gxt, c.att, p.att_reduce, p.att_expand,
                               cfg.attention_order)
          : gxt;
  Tensor2<T> gh1pre = activation_backward(gh1, c.h1pre, c.h1, Act::tanh);
  return fc_backward(gh1pre, c.r, p.dec1_w, p.dec1_b);
}

// -------- full model --------

template <typename T>
struct ModelForward {
  EncoderCache<T> enc;
  DecoderCache<T> dec;
};

template <typename T>
ModelForward<T> gdpnet_forward(const ModelParams<T>& p,
                               const Tensor2<T>& features,
                               const std::vector<T>& subject_onehot,
                               const std::vector<T>& template_flat) {
  ModelForward<T> f;
  f.enc = encoder_forward(p, features, subject_onehot);
  f.dec = decoder_forward(p, f.enc.r, template_flat);
  return f;
}

// grad_pred drives the reconstruction/velocity path; grad_r_extra (may
// be null) adds the constraint loss gradient flowing directly into the
// latent.
template <typename T>
void gdpnet_backward(ModelParams<T>& p, const ModelForward<T>& f,
                     const Tensor2<T>& grad_pred,
                     const Tensor2<T>* grad_r_extra = nullptr) {
  Tensor2<T> grad_r = decoder_backward(p, f.dec, grad_pred);
  if (grad_r_extra) {
    if (grad_r_extra->rows != 1 || grad_r_extra->cols != grad_r.cols)
      throw_shape("gdpnet_backward: constraint gradient shape mismatch");
    for (size_t i = 0; i < grad_r.size(); ++i)
      grad_r.data[i] += grad_r_extra->data[i];
  }
  encoder_backward(p, f.enc, grad_r);
}

}  // namespace gdpnet
