#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdpnet/data.hpp"
#include "gdpnet/model.hpp"

namespace gdpnet {

// Mean per-vertex Euclidean distance. The reported "error" of a frame is
// (1/N) sum_i ||v_i - v̂_i||; no squaring on the outside.
template <typename T>
inline double mean_vertex_error_rows(const T* pred, const T* truth, size_t n_vertices) {
  double acc = 0.0;
  for (size_t v = 0; v < n_vertices; ++v) {
    double n2 = 0.0;
    for (size_t k = 0; k < 3; ++k) {
      double d = double(pred[3 * v + k]) - double(truth[3 * v + k]);
      n2 += d * d;
    }
    acc += std::sqrt(n2);
  }
  return acc / double(n_vertices);
}

inline double mse_metric(const Mesh& pred, const Mesh& truth) {
  if (pred.vertex_count() != truth.vertex_count())
    throw_shape("mse_metric: vertex counts " + std::to_string(pred.vertex_count()) +
                " vs " + std::to_string(truth.vertex_count()));
  return mean_vertex_error_rows(pred.vertices.data.data(), truth.vertices.data.data(),
                                pred.vertex_count());
}

inline std::vector<double> per_vertex_error(const Mesh& pred, const Mesh& truth) {
  if (pred.vertex_count() != truth.vertex_count())
    throw_shape("per_vertex_error: vertex counts " +
                std::to_string(pred.vertex_count()) + " vs " +
                std::to_string(truth.vertex_count()));
  std::vector<double> e(pred.vertex_count());
  for (size_t v = 0; v < pred.vertex_count(); ++v) {
    double n2 = 0.0;
    for (size_t k = 0; k < 3; ++k) {
      double d = pred.vertices(v, k) - truth.vertices(v, k);
      n2 += d * d;
    }
    e[v] = std::sqrt(n2);
  }
  return e;
}

// Runs the model over every frame of a window file. Rows are predicted
// vertex positions (template plus displacement), one per frame.
template <typename T>
inline Tensor2<T> predict_sequence(const ModelParams<T>& params,
                                   const FeatureArray& windows, size_t subject,
                                   const std::vector<T>& template_row) {
  const ModelConfig& cfg = params.cfg;
  if (windows.window != cfg.W || windows.dim != cfg.D)
    throw_shape("predict_sequence: window file is " + std::to_string(windows.window) +
                "x" + std::to_string(windows.dim) + ", model expects " +
                std::to_string(cfg.W) + "x" + std::to_string(cfg.D));
  if (subject >= cfg.S)
    throw_usage("predict_sequence: subject index " + std::to_string(subject) +
                " out of range 0.." + std::to_string(cfg.S - 1));
  const size_t d3 = cfg.N * 3;
  if (template_row.size() != d3)
    throw_shape("predict_sequence: template has " +
                std::to_string(template_row.size()) + " values, expected " +
                std::to_string(d3));
  Tensor2<T> out(windows.frames, d3);
  std::vector<T> onehot(cfg.S, T(0));
  onehot[subject] = T(1);
  Tensor2<T> feat(cfg.W, cfg.D);
  for (size_t f = 0; f < windows.frames; ++f) {
    for (size_t i = 0; i < feat.size(); ++i)
      feat.data[i] = T(windows.values[f * feat.size() + i]);
    ModelForward<T> fwd = gdpnet_forward(params, feat, onehot, template_row);
    for (size_t i = 0; i < d3; ++i) out(f, i) = fwd.dec.pred.data[i];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct SequenceRow {
  std::string split, subject, sentence;
  size_t frames = 0;
  double metric = 0.0;    // model
  double baseline = 0.0;  // zero-displacement prediction
};

struct SpeakerRow {
  std::string split, subject;
  size_t frames = 0;
  double metric = 0.0;
  double baseline = 0.0;
};

struct NoiseRow {
  std::string kind;
  double level = 0.0;
  double metric = 0.0;  // frame-weighted over sequences, mean over noise seeds
};

struct EvalReport {
  std::vector<SequenceRow> per_sequence;
  std::vector<SpeakerRow> per_speaker;
  double overall = 0.0;
  double baseline_overall = 0.0;
  std::vector<NoiseRow> noise_rows;
};

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double level = 0.0;
};

inline std::vector<NoiseSpec> default_noise_grid() {
  return {{NoiseKind::gaussian, 0.05}, {NoiseKind::gaussian, 0.1},
          {NoiseKind::gaussian, 0.2},  {NoiseKind::outlier, 0.05},
          {NoiseKind::outlier, 0.1},   {NoiseKind::dropout, 0.1}};
}

struct EvalOptions {
  size_t cond_subject = 0;   // one-hot used for held-out speakers
  size_t noise_seeds = 3;    // repetitions averaged per noise row
  uint64_t seed = 999;       // root for noise draws
  bool per_vertex_csv = false;
  std::string per_vertex_dir;
};

// Clean metric per held-out sequence/speaker plus noise-degradation rows.
// Held-out speakers are conditioned on a training subject's identity, so the
// reported error includes the identity mismatch, mirroring how the model
// would be driven for an unseen speaker.
template <typename T>
inline EvalReport evaluate_model(const ModelParams<T>& params,
                                 const GeneratedDataset& ds,
                                 const std::vector<NoiseSpec>& grid,
                                 const EvalOptions& opt) {
  const ModelConfig& cfg = params.cfg;
  EvalReport report;
  struct Bucket {
    const char* split;
    const std::vector<SequenceManifest>* seqs;
  };
  const Bucket buckets[] = {{"val", &ds.split.val}, {"test", &ds.split.test}};

  double overall_acc = 0.0, baseline_acc = 0.0;
  size_t overall_frames = 0;
  std::map<std::pair<std::string, std::string>, SpeakerRow> speakers;

  struct CachedSeq {
    const SequenceManifest* man;
    std::string split;
    FeatureArray windows;
    std::vector<T> template_row;
    Tensor2<double> truth;  // F x 3N
  };
  std::vector<CachedSeq> cache;

  for (const Bucket& bucket : buckets) {
    for (const auto& man : *bucket.seqs) {
      CachedSeq c;
      c.man = &man;
      c.split = bucket.split;
      c.windows = load_feature_file(resolve_path(ds, man.feature_path));
      if (c.windows.frames != man.frame_count)
        throw_data("evaluate_model: " + man.feature_path + " has " +
                   std::to_string(c.windows.frames) + " frames, manifest says " +
                   std::to_string(man.frame_count));
      Mesh tmpl = load_mesh(resolve_path(ds, man.template_path));
      if (tmpl.vertex_count() != cfg.N)
        throw_shape("evaluate_model: template has " +
                    std::to_string(tmpl.vertex_count()) + " vertices, model expects " +
                    std::to_string(cfg.N));
      c.template_row.resize(cfg.N * 3);
      for (size_t i = 0; i < c.template_row.size(); ++i)
        c.template_row[i] = T(tmpl.vertices.data[i]);
      c.truth = Tensor2<double>(man.frame_count, cfg.N * 3);
      char buf[64];
      for (size_t f = 0; f < man.frame_count; ++f) {
        std::snprintf(buf, sizeof buf, "frame_%06zu.obj", f);
        Mesh y = load_mesh(resolve_path(ds, man.mesh_dir) + "/" + buf);
        if (y.vertex_count() != cfg.N)
          throw_shape("evaluate_model: frame mesh vertex count mismatch in " +
                      man.mesh_dir);
        for (size_t i = 0; i < c.truth.cols; ++i) c.truth(f, i) = y.vertices.data[i];
      }
      cache.push_back(std::move(c));
    }
  }

  auto score_sequence = [&](const CachedSeq& c, const FeatureArray& windows) {
    Tensor2<T> pred =
        predict_sequence(params, windows, opt.cond_subject, c.template_row);
    double acc = 0.0;
    for (size_t f = 0; f < windows.frames; ++f) {
      std::vector<double> p(c.truth.cols);
      for (size_t i = 0; i < c.truth.cols; ++i) p[i] = double(pred(f, i));
      acc += mean_vertex_error_rows(p.data(), &c.truth(f, 0), cfg.N);
    }
    return acc / double(windows.frames);
  };

  for (const CachedSeq& c : cache) {
    SequenceRow row;
    row.split = c.split;
    row.subject = c.man->subject_id;
    row.sentence = c.man->sentence_id;
    row.frames = c.man->frame_count;
    row.metric = score_sequence(c, c.windows);

    double base = 0.0;
    std::vector<double> tmpl_d(c.template_row.size());
    for (size_t i = 0; i < tmpl_d.size(); ++i) tmpl_d[i] = double(c.template_row[i]);
    for (size_t f = 0; f < c.man->frame_count; ++f)
      base += mean_vertex_error_rows(tmpl_d.data(), &c.truth(f, 0), cfg.N);
    row.baseline = base / double(c.man->frame_count);

    if (opt.per_vertex_csv) {
      namespace fs = std::filesystem;
      fs::create_directories(opt.per_vertex_dir);
      Tensor2<T> pred =
          predict_sequence(params, c.windows, opt.cond_subject, c.template_row);
      char buf[128];
      for (size_t f = 0; f < c.man->frame_count; ++f) {
        std::snprintf(buf, sizeof buf, "%s_%s_frame_%06zu.csv",
                      c.man->subject_id.c_str(), c.man->sentence_id.c_str(), f);
        std::ofstream out(fs::path(opt.per_vertex_dir) / buf);
        out << "vertex,error\n";
        for (size_t v = 0; v < cfg.N; ++v) {
          double n2 = 0.0;
          for (size_t k = 0; k < 3; ++k) {
            double d = double(pred(f, 3 * v + k)) - c.truth(f, 3 * v + k);
            n2 += d * d;
          }
          std::snprintf(buf, sizeof buf, "%zu,%.9g\n", v, std::sqrt(n2));
          out << buf;
        }
      }
    }

    report.per_sequence.push_back(row);
    overall_acc += row.metric * double(row.frames);
    baseline_acc += row.baseline * double(row.frames);
    overall_frames += row.frames;

    auto key = std::make_pair(row.split, row.subject);
    SpeakerRow& sp = speakers[key];
    sp.split = row.split;
    sp.subject = row.subject;
    sp.frames += row.frames;
    sp.metric += row.metric * double(row.frames);
    sp.baseline += row.baseline * double(row.frames);
  }

  for (auto& [key, sp] : speakers) {
    sp.metric /= double(sp.frames);
    sp.baseline /= double(sp.frames);
    report.per_speaker.push_back(sp);
  }
  if (overall_frames == 0) throw_data("evaluate_model: no evaluation sequences");
  report.overall = overall_acc / double(overall_frames);
  report.baseline_overall = baseline_acc / double(overall_frames);

  for (const NoiseSpec& spec : grid) {
    double rep_acc = 0.0;
    for (size_t rep = 0; rep < opt.noise_seeds; ++rep) {
      double acc = 0.0;
      size_t frames = 0;
      for (size_t ci = 0; ci < cache.size(); ++ci) {
        const CachedSeq& c = cache[ci];
        FeatureArray noisy = c.windows;
        Rng rng(seed_derive(opt.seed, noise_kind_name(spec.kind),
                            uint64_t(std::llround(spec.level * 1e6)),
                            rep * 7919 + ci));
        inject_noise(noisy, spec.kind, spec.level, rng);
        acc += score_sequence(c, noisy) * double(c.man->frame_count);
        frames += c.man->frame_count;
      }
      rep_acc += acc / double(frames);
    }
    NoiseRow row;
    row.kind = noise_kind_name(spec.kind);
    row.level = spec.level;
    row.metric = rep_acc / double(opt.noise_seeds);
    report.noise_rows.push_back(row);
  }
  return report;
}

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["metric"] = "mean_vertex_error";
  j["overall"] = r.overall;
  j["baseline_overall"] = r.baseline_overall;
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& s : r.per_sequence)
    seqs.push_back({{"split", s.split},
                    {"subject", s.subject},
                    {"sentence", s.sentence},
                    {"frames", s.frames},
                    {"mean_vertex_error", s.metric},
                    {"baseline", s.baseline}});
  j["per_sequence"] = seqs;
  nlohmann::json spk = nlohmann::json::array();
  for (const auto& s : r.per_speaker)
    spk.push_back({{"split", s.split},
                   {"subject", s.subject},
                   {"frames", s.frames},
                   {"mean_vertex_error", s.metric},
                   {"baseline", s.baseline}});
  j["per_speaker"] = spk;
  nlohmann::json noise = nlohmann::json::array();
  for (const auto& n : r.noise_rows)
    noise.push_back(
        {{"kind", n.kind}, {"level", n.level}, {"mean_vertex_error", n.metric}});
  j["noise_rows"] = noise;
  return j;
}

inline void write_eval_report(const EvalReport& r, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  {
    std::ofstream out(fs::path(dir) / "report.json", std::ios::binary);
    if (!out) throw_data("write_eval_report: cannot open report.json");
    out << eval_report_to_json(r).dump(2) << "\n";
  }
  std::ofstream out(fs::path(dir) / "report.csv", std::ios::binary);
  if (!out) throw_data("write_eval_report: cannot open report.csv");
  char buf[256];
  out << "row,split,subject,sentence,kind,level,frames,mean_vertex_error,baseline\n";
  for (const auto& s : r.per_sequence) {
    std::snprintf(buf, sizeof buf, "sequence,%s,%s,%s,,,%zu,%.9g,%.9g\n",
                  s.split.c_str(), s.subject.c_str(), s.sentence.c_str(), s.frames,
                  s.metric, s.baseline);
    out << buf;
  }
  for (const auto& s : r.per_speaker) {
    std::snprintf(buf, sizeof buf, "speaker,%s,%s,,,,%zu,%.9g,%.9g\n",
                  s.split.c_str(), s.subject.c_str(), s.frames, s.metric, s.baseline);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "overall,,,,,,,%.9g,%.9g\n", r.overall,
                r.baseline_overall);
  out << buf;
  for (const auto& n : r.noise_rows) {
    std::snprintf(buf, sizeof buf, "noise,,,,%s,%.9g,,%.9g,\n", n.kind.c_str(),
                  n.level, n.metric);
    out << buf;
  }
}

// ---------------------------------------------------------------------------
// Least-squares oracle

// Ridge regression from flattened windows (plus subject one-hot and bias)
// to vertex displacements. The ridge keeps weakly-excited directions from
// exploding on held-out sentences; its strength is part of the oracle's
// definition.
constexpr double kLsRidgeRel = 1e-3;

struct LsOracle {
  double fit_residual = 0.0;   // on the fitting set, true identities
  double eval_metric = 0.0;    // on the eval set, conditioned identity
};

inline LsOracle ls_oracle(const GeneratedDataset& ds,
                          const std::vector<SequenceManifest>& fit_set,
                          const std::vector<SequenceManifest>& eval_set,
                          size_t cond_subject) {
  const size_t wd = ds.cfg.window * ds.cfg.audio_dim;
  const size_t s_dim = ds.subjects.size();
  const size_t d3 = ds.cfg.vertices * 3;

  auto load_rows = [&](const std::vector<SequenceManifest>& seqs, bool condition,
                       Eigen::MatrixXd& x, Eigen::MatrixXd& y) {
    size_t total = 0;
    for (const auto& m : seqs) total += m.frame_count;
    x.resize(total, wd + s_dim + 1);
    y.resize(total, d3);
    size_t row = 0;
    char buf[64];
    for (const auto& man : seqs) {
      FeatureArray fa = load_feature_file(resolve_path(ds, man.feature_path));
      Mesh tmpl = load_mesh(resolve_path(ds, man.template_path));
      size_t sidx = condition ? cond_subject : subject_index(ds, man.subject_id);
      for (size_t f = 0; f < man.frame_count; ++f, ++row) {
        for (size_t i = 0; i < wd; ++i) x(row, i) = fa.values[f * wd + i];
        for (size_t s = 0; s < s_dim; ++s) x(row, wd + s) = s == sidx ? 1.0 : 0.0;
        x(row, wd + s_dim) = 1.0;
        std::snprintf(buf, sizeof buf, "frame_%06zu.obj", f);
        Mesh m = load_mesh(resolve_path(ds, man.mesh_dir) + "/" + buf);
        for (size_t i = 0; i < d3; ++i)
          y(row, i) = m.vertices.data[i] - tmpl.vertices.data[i];
      }
    }
  };

  auto metric_of = [&](const Eigen::MatrixXd& resid) {
    double acc = 0.0;
    for (Eigen::Index r = 0; r < resid.rows(); ++r) {
      double frame = 0.0;
      for (size_t v = 0; v < ds.cfg.vertices; ++v) {
        double n2 = 0.0;
        for (size_t k = 0; k < 3; ++k) n2 += resid(r, 3 * v + k) * resid(r, 3 * v + k);
        frame += std::sqrt(n2);
      }
      acc += frame / double(ds.cfg.vertices);
    }
    return acc / double(resid.rows());
  };

  Eigen::MatrixXd xf, yf;
  load_rows(fit_set, false, xf, yf);
  Eigen::MatrixXd xtx = xf.transpose() * xf;
  xtx.diagonal().array() += kLsRidgeRel * xtx.trace() / double(xtx.rows());
  Eigen::MatrixXd w = Eigen::LDLT<Eigen::MatrixXd>(xtx).solve(xf.transpose() * yf);

  LsOracle out;
  out.fit_residual = metric_of(yf - xf * w);
  Eigen::MatrixXd xe, ye;
  load_rows(eval_set, true, xe, ye);
  out.eval_metric = metric_of(ye - xe * w);
  return out;
}

}  // namespace gdpnet
