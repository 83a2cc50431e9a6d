#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "gdpnet/checkpoint.hpp"
#include "gdpnet/config.hpp"
#include "gdpnet/eval.hpp"
#include "gdpnet/geo.hpp"
#include "gdpnet/model.hpp"
#include "gdpnet/pca.hpp"

namespace gdpnet {

// -------- Adam --------

template <typename T>
struct AdamState {
  uint64_t step = 0;
  std::vector<std::vector<T>> m, v;  // parallel to params.learnable()

  template <typename P>
  void init_for(P& params) {
    m.clear();
    v.clear();
    for (auto* p : params.learnable()) {
      m.emplace_back(p->size(), T(0));
      v.emplace_back(p->size(), T(0));
    }
  }
};

// One update over every learnable tensor. All gradients are validated
// before any value moves, so a non-finite gradient aborts with the
// parameters still holding the last finite state.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& st, const TrainConfig& tc) {
  auto learnable = params.learnable();
  if (st.m.size() != learnable.size())
    throw_shape("adam_step: state tracks " + std::to_string(st.m.size()) +
                " tensors, model has " + std::to_string(learnable.size()));
  for (auto* p : learnable)
    for (T g : p->grad)
      if (!is_finite(g))
        throw_numeric("adam_step: non-finite gradient in " + p->name);
  st.step += 1;
  const double b1 = tc.beta1, b2 = tc.beta2;
  const double c1 = 1.0 - std::pow(b1, double(st.step));
  const double c2 = 1.0 - std::pow(b2, double(st.step));
  for (size_t i = 0; i < learnable.size(); ++i) {
    ParamTensor<T>& p = *learnable[i];
    std::vector<T>& m = st.m[i];
    std::vector<T>& v = st.v[i];
    if (m.size() != p.size())
      throw_shape("adam_step: moment size mismatch for " + p.name);
    for (size_t k = 0; k < p.size(); ++k) {
      const double g = double(p.grad[k]);
      const double mn = b1 * double(m[k]) + (1.0 - b1) * g;
      const double vn = b2 * double(v[k]) + (1.0 - b2) * g * g;
      m[k] = T(mn);
      v[k] = T(vn);
      const double mhat = mn / c1;
      const double vhat = vn / c2;
      p.value[k] -= T(tc.lr * mhat / (std::sqrt(vhat) + tc.eps));
    }
  }
}

// -------- in-memory training set --------

template <typename T>
struct SeqData {
  std::string subject_id, sentence_id;
  size_t onehot = 0;       // index into the train-subject one-hot space
  FeatureArray windows;
  std::vector<T> tmpl;     // 3N
  Tensor2<T> truth;        // frames x 3N vertex positions
  Tensor2<T> rhat;         // frames x latent guidance codes (train split)
};

namespace detail {

template <typename T>
SeqData<T> load_seq(const GeneratedDataset& ds, const SequenceManifest& man,
                    size_t onehot) {
  SeqData<T> sd;
  sd.subject_id = man.subject_id;
  sd.sentence_id = man.sentence_id;
  sd.onehot = onehot;
  sd.windows = load_feature_file(resolve_path(ds, man.feature_path));
  if (sd.windows.frames != man.frame_count)
    throw_data("train: " + man.feature_path + " frame count mismatch");
  Mesh tmpl = load_mesh(resolve_path(ds, man.template_path));
  if (tmpl.vertex_count() != ds.cfg.vertices)
    throw_shape("train: template vertex count mismatch for " + man.subject_id);
  sd.tmpl.resize(ds.cfg.vertices * 3);
  for (size_t i = 0; i < sd.tmpl.size(); ++i) sd.tmpl[i] = T(tmpl.vertices.data[i]);
  sd.truth = Tensor2<T>(man.frame_count, ds.cfg.vertices * 3);
  char buf[64];
  for (size_t f = 0; f < man.frame_count; ++f) {
    std::snprintf(buf, sizeof buf, "frame_%06zu.obj", f);
    Mesh y = load_mesh(resolve_path(ds, man.mesh_dir) + "/" + buf);
    if (y.vertex_count() != ds.cfg.vertices)
      throw_shape("train: frame mesh vertex count mismatch in " + man.mesh_dir);
    for (size_t i = 0; i < sd.truth.cols; ++i) sd.truth(f, i) = T(y.vertices.data[i]);
  }
  return sd;
}

template <typename T>
Tensor2<T> window_tensor(const FeatureArray& fa, size_t frame) {
  Tensor2<T> w(fa.window, fa.dim);
  const float* src = &fa.values[frame * fa.window * fa.dim];
  for (size_t i = 0; i < w.size(); ++i) w.data[i] = T(src[i]);
  return w;
}

inline uint64_t fnv1a_bytes(const void* data, size_t len, uint64_t h) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// -------- logs --------

struct EpochLog {
  size_t epoch = 0;  // 1-based
  double total = 0, recon = 0, constraint = 0, velocity = 0;
  double val_mse = 0;
  double wall_seconds = 0;
};

inline void write_metrics_csv(const std::vector<EpochLog>& log,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("train: cannot write " + path);
  out << "epoch,loss,recon,constraint,velocity,val_mse,wall_seconds\n";
  char buf[256];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e.epoch,
                  e.total, e.recon, e.constraint, e.velocity, e.val_mse,
                  e.wall_seconds);
    out << buf;
  }
}

// -------- checkpoint bundles --------

template <typename T>
void fill_params_from_blobs(ModelParams<T>& params, const CheckpointData& ck) {
  for (auto* p : params.learnable()) {
    const std::vector<float>& blob = ck.blob(p->name);
    if (blob.size() != p->size())
      throw_data("checkpoint: blob " + p->name + " has " +
                 std::to_string(blob.size()) + " values, model expects " +
                 std::to_string(p->size()));
    for (size_t i = 0; i < blob.size(); ++i) p->value[i] = T(blob[i]);
  }
  const std::vector<float>& off = ck.blob("out.offset");
  if (off.size() != params.out_offset.size())
    throw_data("checkpoint: blob out.offset size mismatch");
  for (size_t i = 0; i < off.size(); ++i) params.out_offset[i] = T(off[i]);
}

template <typename T>
void save_train_checkpoint(const std::string& path, const ModelParams<T>& params,
                           const AdamState<T>& adam, const GeoEncoder& geo,
                           nlohmann::json header) {
  CheckpointData ck;
  header["step"] = adam.step;
  header["geo"] = {{"provider_id", geo.provider_id},
                   {"latent_dim", geo.latent_dim},
                   {"effective_rank", geo.effective_rank}};
  ck.header = std::move(header);
  auto push = [&ck](const std::string& name, const auto& values) {
    std::vector<float> f(values.size());
    for (size_t i = 0; i < f.size(); ++i) f[i] = float(values[i]);
    ck.blobs.emplace_back(name, std::move(f));
  };
  auto learnable = params.learnable();
  for (const auto* p : learnable) push(p->name, p->value);
  for (size_t i = 0; i < learnable.size(); ++i) {
    push("adam." + learnable[i]->name + ".m", adam.m[i]);
    push("adam." + learnable[i]->name + ".v", adam.v[i]);
  }
  push("out.offset", params.out_offset);
  push("geo.mean", geo.mean);
  push("geo.basis", geo.basis.data);
  save_checkpoint(path, ck);
}

// Model-only view of a checkpoint, enough to run inference.
template <typename T>
struct ModelBundle {
  ModelConfig cfg;
  ModelParams<T> params;
  nlohmann::json header;
};

template <typename T = float>
ModelBundle<T> load_model_bundle(const std::string& path) {
  CheckpointData ck = load_checkpoint(path);
  if (!ck.header.contains("model_config"))
    throw_data("checkpoint " + path + " has no model_config");
  ModelConfig cfg = model_config_from_json(ck.header.at("model_config"));
  ModelBundle<T> b{cfg, ModelParams<T>(cfg), {}};
  fill_params_from_blobs(b.params, ck);
  b.header = std::move(ck.header);
  return b;
}

// -------- training --------

template <typename T>
struct TrainOutput {
  ModelParams<T> params;
  AdamState<T> adam;
  GeoEncoder geo;
  std::vector<EpochLog> log;
  double best_val = std::numeric_limits<double>::infinity();
  size_t best_epoch = 0;
  uint64_t rhat_hash_first = 0, rhat_hash_last = 0;
  std::vector<std::string> train_subjects;
};

namespace detail {

template <typename T>
struct BatchResult {
  T total = 0, recon = 0, constraint = 0, velocity = 0;
  bool constraint_skipped = false;
};

// One optimizer batch over (t-1, t) frame pairs, mirroring the verified
// whole-model loss: reconstruction and velocity on predictions, the
// constraint on the frame-t latents against precomputed guidance codes.
template <typename T>
BatchResult<T> train_batch(ModelParams<T>& params, const TrainConfig& tc,
                           const std::vector<SeqData<T>>& seqs,
                           const std::vector<std::pair<size_t, size_t>>& pairs,
                           size_t begin, size_t end) {
  const ModelConfig& m = params.cfg;
  const size_t B = end - begin;
  std::vector<ModelForward<T>> f_t, f_tm1;
  f_t.reserve(B);
  f_tm1.reserve(B);
  Tensor2<T> pred_t(B, m.N * 3), pred_tm1(B, m.N * 3);
  Tensor2<T> y_t(B, m.N * 3), y_tm1(B, m.N * 3);
  Tensor2<T> r_t(B, m.latent_dim), rhat(B, m.latent_dim);
  for (size_t i = 0; i < B; ++i) {
    const auto [si, t] = pairs[begin + i];
    const SeqData<T>& sd = seqs[si];
    std::vector<T> onehot(m.S, T(0));
    onehot[sd.onehot] = T(1);
    Tensor2<T> wt = window_tensor<T>(sd.windows, t);
    Tensor2<T> wtm = window_tensor<T>(sd.windows, t - 1);
    f_t.push_back(gdpnet_forward(params, wt, onehot, sd.tmpl));
    f_tm1.push_back(gdpnet_forward(params, wtm, onehot, sd.tmpl));
    std::copy(f_t[i].dec.pred.data.begin(), f_t[i].dec.pred.data.end(),
              pred_t.row(i));
    std::copy(f_tm1[i].dec.pred.data.begin(), f_tm1[i].dec.pred.data.end(),
              pred_tm1.row(i));
    std::copy(f_t[i].enc.r.data.begin(), f_t[i].enc.r.data.end(), r_t.row(i));
    std::copy(sd.truth.row(t), sd.truth.row(t) + sd.truth.cols, y_t.row(i));
    std::copy(sd.truth.row(t - 1), sd.truth.row(t - 1) + sd.truth.cols,
              y_tm1.row(i));
    std::copy(sd.rhat.row(t), sd.rhat.row(t) + sd.rhat.cols, rhat.row(i));
  }

  KernelSpec k1r = tc.kernel1, k2r = tc.kernel2;
  if (m.constraint_mode == ConstraintMode::hsic && B >= 2) {
    k1r.bandwidth = double(resolve_bandwidth(r_t, tc.kernel1));
    k2r.bandwidth = double(resolve_bandwidth(rhat, tc.kernel2));
  }

  Tensor2<T> g_rec, g_vt, g_vtm, g_con;
  BatchResult<T> res;
  res.recon = reconstruction_loss(pred_t, y_t, &g_rec);
  res.velocity = velocity_loss(pred_t, pred_tm1, y_t, y_tm1, &g_vt, &g_vtm);
  res.constraint = constraint_loss(r_t, rhat, m.constraint_mode, tc.huber, k1r,
                                   k2r, &g_con, &res.constraint_skipped);
  res.total = total_loss(res.recon, res.constraint, res.velocity, tc.weights);

  const T l1 = T(tc.weights.lambda1), l2 = T(tc.weights.lambda2);
  for (size_t i = 0; i < B; ++i) {
    Tensor2<T> gp_t(1, m.N * 3), gp_tm1(1, m.N * 3), gr(1, m.latent_dim);
    for (size_t j = 0; j < m.N * 3; ++j) {
      gp_t.data[j] = g_rec(i, j) + l2 * g_vt(i, j);
      gp_tm1.data[j] = l2 * g_vtm(i, j);
    }
    for (size_t j = 0; j < m.latent_dim; ++j) gr.data[j] = l1 * g_con(i, j);
    gdpnet_backward(params, f_t[i], gp_t, &gr);
    gdpnet_backward(params, f_tm1[i], gp_tm1);
  }
  return res;
}

// Frame-weighted mean vertex error over preloaded sequences, each driven
// with the conditioning one-hot it was loaded with.
template <typename T>
double held_out_error(const ModelParams<T>& params,
                      const std::vector<SeqData<T>>& seqs) {
  double acc = 0.0;
  size_t frames = 0;
  for (const SeqData<T>& sd : seqs) {
    Tensor2<T> pred = predict_sequence(params, sd.windows, sd.onehot, sd.tmpl);
    std::vector<double> p(sd.truth.cols), y(sd.truth.cols);
    for (size_t f = 0; f < sd.truth.rows; ++f) {
      for (size_t i = 0; i < sd.truth.cols; ++i) {
        p[i] = double(pred(f, i));
        y[i] = double(sd.truth(f, i));
      }
      acc += mean_vertex_error_rows(p.data(), y.data(), params.cfg.N);
    }
    frames += sd.truth.rows;
  }
  if (frames == 0) throw_data("train: no validation frames");
  return acc / double(frames);
}

template <typename T>
uint64_t rhat_table_hash(const std::vector<SeqData<T>>& seqs) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const SeqData<T>& sd : seqs)
    h = fnv1a_bytes(sd.rhat.data.data(), sd.rhat.size() * sizeof(T), h);
  return h;
}

}  // namespace detail

// Trains one model on the dataset's train split, validating each epoch on
// the val split with held-out speakers conditioned on cond_subject. Writes
// metrics.csv plus best/last checkpoints into out_dir every epoch. With
// resume_from set, continues an interrupted run to tc.epochs; everything
// stochastic is derived from (seed, epoch), so a resumed run reproduces
// the uninterrupted one exactly.
template <typename T = float>
TrainOutput<T> train_model(const GeneratedDataset& ds, const FullConfig& fc,
                           const std::string& out_dir,
                           const std::string& resume_from = "") {
  namespace fs = std::filesystem;
  const TrainConfig& tc = fc.train;
  tc.validate();
  fs::create_directories(out_dir);

  SplitPlan plan = split_plan(ds.sequences);
  ModelConfig mcfg = fc.model_for(ds, plan.train_subjects.size());
  if (fc.eval.cond_subject >= plan.train_subjects.size())
    throw_usage("train: cond_subject " + std::to_string(fc.eval.cond_subject) +
                " out of range, have " +
                std::to_string(plan.train_subjects.size()) + " train subjects");

  auto train_onehot = [&plan](const std::string& subject_id) {
    for (size_t i = 0; i < plan.train_subjects.size(); ++i)
      if (plan.train_subjects[i] == subject_id) return i;
    throw_data("train: subject " + subject_id + " is not a train subject");
  };

  std::vector<SeqData<T>> train_seqs, val_seqs;
  for (const auto& man : ds.split.train)
    train_seqs.push_back(detail::load_seq<T>(ds, man, train_onehot(man.subject_id)));
  for (const auto& man : ds.split.val)
    val_seqs.push_back(detail::load_seq<T>(ds, man, fc.eval.cond_subject));
  if (train_seqs.empty()) throw_data("train: empty train split");
  if (val_seqs.empty()) throw_data("train: empty val split");

  size_t total_frames = 0;
  for (const auto& sd : train_seqs) total_frames += sd.truth.rows;
  Tensor2<double> train_disp(total_frames, mcfg.N * 3);
  {
    size_t row = 0;
    for (const auto& sd : train_seqs)
      for (size_t f = 0; f < sd.truth.rows; ++f, ++row)
        for (size_t i = 0; i < sd.truth.cols; ++i)
          train_disp(row, i) = double(sd.truth(f, i)) - double(sd.tmpl[i]);
  }

  const size_t max_rank = std::min(total_frames, mcfg.N * 3);
  if (mcfg.pca_rank > max_rank) {
    std::cerr << "train: clamping pca_rank " << mcfg.pca_rank << " to " << max_rank
              << " (limited by " << total_frames << " train frames)\n";
    mcfg.pca_rank = max_rank;
  }

  TrainOutput<T> out{ModelParams<T>(mcfg),
                     {},
                     fit_geo_encoder(train_disp, mcfg.latent_dim),
                     {},
                     std::numeric_limits<double>::infinity(),
                     0,
                     0,
                     0,
                     plan.train_subjects};
  out.adam.init_for(out.params);

  {
    size_t row = 0;
    std::vector<double> disp(mcfg.N * 3);
    for (auto& sd : train_seqs) {
      sd.rhat = Tensor2<T>(sd.truth.rows, mcfg.latent_dim);
      for (size_t f = 0; f < sd.truth.rows; ++f, ++row) {
        std::copy(train_disp.row(row), train_disp.row(row) + disp.size(),
                  disp.begin());
        std::vector<double> r = out.geo.encode(disp);
        for (size_t j = 0; j < mcfg.latent_dim; ++j) sd.rhat(f, j) = T(r[j]);
      }
    }
  }
  out.rhat_hash_first = detail::rhat_table_hash(train_seqs);

  std::vector<std::pair<size_t, size_t>> pairs;
  for (size_t si = 0; si < train_seqs.size(); ++si)
    for (size_t t = 1; t < train_seqs[si].truth.rows; ++t) pairs.emplace_back(si, t);
  if (pairs.empty()) throw_data("train: need at least 2 frames per sequence");

  size_t start_epoch = 0;
  if (resume_from.empty()) {
    Rng init_rng(seed_derive(tc.seed, "init"));
    out.params.init(init_rng);
    pca_init_output_layer(train_disp, mcfg.pca_rank, out.params.out_w,
                          out.params.out_b, out.params.out_offset);
  } else {
    CheckpointData ck = load_checkpoint(resume_from);
    nlohmann::json want_model = model_config_to_json(mcfg);
    if (ck.header.at("model_config") != want_model)
      throw_data("resume: model config in " + resume_from +
                 " does not match this run");
    nlohmann::json want_train = train_config_to_json(tc);
    nlohmann::json have_train = ck.header.at("train_config");
    want_train.erase("epochs");
    have_train.erase("epochs");
    if (have_train != want_train)
      throw_data("resume: train config in " + resume_from +
                 " does not match this run");
    if (ck.header.at("dataset").at("topology_id") != ds.topology_id)
      throw_data("resume: checkpoint was trained on a different mesh topology");
    fill_params_from_blobs(out.params, ck);
    auto learnable = out.params.learnable();
    for (size_t i = 0; i < learnable.size(); ++i) {
      const auto& mb = ck.blob("adam." + learnable[i]->name + ".m");
      const auto& vb = ck.blob("adam." + learnable[i]->name + ".v");
      if (mb.size() != learnable[i]->size() || vb.size() != learnable[i]->size())
        throw_data("resume: adam moment size mismatch for " + learnable[i]->name);
      for (size_t k = 0; k < mb.size(); ++k) {
        out.adam.m[i][k] = T(mb[k]);
        out.adam.v[i][k] = T(vb[k]);
      }
    }
    out.adam.step = ck.header.at("step").get<uint64_t>();
    start_epoch = ck.header.at("epoch").get<size_t>();
    out.best_val = ck.header.at("best_val").get<double>();
    out.best_epoch = ck.header.at("best_epoch").get<size_t>();
    for (const auto& row : ck.header.at("metrics")) {
      EpochLog e;
      e.epoch = row.at(0).get<size_t>();
      e.total = row.at(1).get<double>();
      e.recon = row.at(2).get<double>();
      e.constraint = row.at(3).get<double>();
      e.velocity = row.at(4).get<double>();
      e.val_mse = row.at(5).get<double>();
      e.wall_seconds = row.at(6).get<double>();
      out.log.push_back(e);
    }
  }

  auto header_for = [&](size_t completed_epochs) {
    nlohmann::json metrics = nlohmann::json::array();
    for (const EpochLog& e : out.log)
      metrics.push_back({e.epoch, e.total, e.recon, e.constraint, e.velocity,
                         e.val_mse, e.wall_seconds});
    nlohmann::json h;
    h["kind"] = "train-state";
    h["model_config"] = model_config_to_json(mcfg);
    h["train_config"] = train_config_to_json(tc);
    h["dataset"] = {{"topology_id", ds.topology_id},
                    {"train_subjects", plan.train_subjects},
                    {"cond_subject", fc.eval.cond_subject}};
    h["epoch"] = completed_epochs;
    h["best_val"] = out.best_val;
    h["best_epoch"] = out.best_epoch;
    h["metrics"] = metrics;
    h["rhat_hash_first"] = out.rhat_hash_first;
    h["rhat_hash_last"] = out.rhat_hash_last;
    return h;
  };

  const std::string metrics_path = (fs::path(out_dir) / "metrics.csv").string();
  bool warned_skip = false;

  for (size_t e = start_epoch; e < tc.epochs; ++e) {
    const auto t0 = std::chrono::steady_clock::now();
    Rng perm_rng(seed_derive(tc.seed, "epoch", e));
    std::vector<std::pair<size_t, size_t>> order = pairs;
    perm_rng.shuffle(order);

    double sum_total = 0, sum_recon = 0, sum_con = 0, sum_vel = 0;
    size_t batches = 0;
    try {
      for (size_t b = 0; b < order.size(); b += tc.batch_size) {
        const size_t end = std::min(order.size(), b + tc.batch_size);
        out.params.zero_grads();
        detail::BatchResult<T> r =
            detail::train_batch(out.params, tc, train_seqs, order, b, end);
        if (r.constraint_skipped && !warned_skip) {
          std::cerr << "train: batch of " << (end - b)
                    << " pair(s) is too small for the statistical constraint; "
                       "skipping it there\n";
          warned_skip = true;
        }
        adam_step(out.params, out.adam, tc);
        sum_total += double(r.total);
        sum_recon += double(r.recon);
        sum_con += double(r.constraint);
        sum_vel += double(r.velocity);
        ++batches;
      }
    } catch (const Error& err) {
      if (err.kind() == ErrorKind::numeric) {
        out.rhat_hash_last = detail::rhat_table_hash(train_seqs);
        save_train_checkpoint((fs::path(out_dir) / "diverged.ckpt").string(),
                              out.params, out.adam, out.geo, header_for(e));
        std::cerr << "train: diverged in epoch " << (e + 1)
                  << "; last finite state saved to diverged.ckpt\n";
      }
      throw;
    }

    EpochLog log;
    log.epoch = e + 1;
    log.total = sum_total / double(batches);
    log.recon = sum_recon / double(batches);
    log.constraint = sum_con / double(batches);
    log.velocity = sum_vel / double(batches);
    log.val_mse = detail::held_out_error(out.params, val_seqs);
    const auto t1 = std::chrono::steady_clock::now();
    log.wall_seconds =
        tc.deterministic ? 0.0 : std::chrono::duration<double>(t1 - t0).count();
    out.log.push_back(log);
    out.rhat_hash_last = detail::rhat_table_hash(train_seqs);

    write_metrics_csv(out.log, metrics_path);
    save_train_checkpoint((fs::path(out_dir) / "last.ckpt").string(), out.params,
                          out.adam, out.geo, header_for(e + 1));
    if (log.val_mse < out.best_val) {
      out.best_val = log.val_mse;
      out.best_epoch = e + 1;
      save_train_checkpoint((fs::path(out_dir) / "best.ckpt").string(), out.params,
                            out.adam, out.geo, header_for(e + 1));
    }
  }

  if (out.rhat_hash_last == 0) out.rhat_hash_last = detail::rhat_table_hash(train_seqs);
  write_metrics_csv(out.log, metrics_path);
  save_train_checkpoint((fs::path(out_dir) / "last.ckpt").string(), out.params,
                        out.adam, out.geo, header_for(tc.epochs));
  return out;
}

}  // namespace gdpnet
