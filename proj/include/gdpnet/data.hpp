#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdpnet/mesh.hpp"
#include "gdpnet/rng.hpp"
#include "gdpnet/tensor.hpp"

namespace gdpnet {

struct SequenceManifest {
  std::string subject_id;
  std::string sentence_id;
  size_t frame_count = 0;
  std::string feature_path;   // relative to the index file
  std::string template_path;  // relative to the index file
  std::string mesh_dir;       // relative to the index file
  double fps = 30.0;
};

struct DatasetSplit {
  std::vector<SequenceManifest> train, val, test;
};

struct SynthConfig {
  size_t subjects = 4;
  size_t sentences = 10;       // per subject
  size_t frames = 100;         // per sentence
  size_t vertices = 642;       // icosphere resolution
  size_t blendshapes = 6;
  size_t window = 16;          // W
  size_t audio_dim = 29;       // D
  double fps = 30.0;
  double noise_floor = 6e-5;  // expected linear-oracle error level, mesh units
  uint64_t seed = 1234;

  void validate() const {
    if (subjects == 0 || sentences == 0 || frames == 0 || blendshapes == 0 ||
        window == 0 || audio_dim == 0)
      throw_usage("SynthConfig: all counts must be positive");
    if (fps <= 0.0) throw_usage("SynthConfig: fps must be positive");
    if (noise_floor <= 0.0) throw_usage("SynthConfig: noise_floor must be positive");
  }
};

// ---------------------------------------------------------------------------
// Icosphere

// Subdivided icosahedron projected to the unit sphere. Vertex order is
// creation order (base vertices, then edge midpoints per subdivision pass),
// so the same resolution always yields the same topology.
inline Mesh make_icosphere(size_t vertices) {
  size_t levels = 0;
  switch (vertices) {
    case 12: levels = 0; break;
    case 42: levels = 1; break;
    case 162: levels = 2; break;
    case 642: levels = 3; break;
    default:
      throw_usage("make_icosphere: vertex count " + std::to_string(vertices) +
                  " not in {12, 42, 162, 642}");
  }
  const double t = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<std::array<double, 3>> verts = {
      {-1, t, 0}, {1, t, 0}, {-1, -t, 0}, {1, -t, 0},
      {0, -1, t}, {0, 1, t}, {0, -1, -t}, {0, 1, -t},
      {t, 0, -1}, {t, 0, 1}, {-t, 0, -1}, {-t, 0, 1}};
  std::vector<std::array<size_t, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  auto normalize = [](std::array<double, 3>& v) {
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    v[0] /= n;
    v[1] /= n;
    v[2] /= n;
  };
  for (auto& v : verts) normalize(v);

  for (size_t level = 0; level < levels; ++level) {
    std::map<std::pair<size_t, size_t>, size_t> midpoint;
    auto mid = [&](size_t a, size_t b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      std::array<double, 3> m = {(verts[a][0] + verts[b][0]) / 2.0,
                                 (verts[a][1] + verts[b][1]) / 2.0,
                                 (verts[a][2] + verts[b][2]) / 2.0};
      normalize(m);
      verts.push_back(m);
      size_t idx = verts.size() - 1;
      midpoint.emplace(key, idx);
      return idx;
    };
    std::vector<std::array<size_t, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      size_t a = mid(f[0], f[1]), b = mid(f[1], f[2]), c = mid(f[2], f[0]);
      next.push_back({f[0], a, c});
      next.push_back({f[1], b, a});
      next.push_back({f[2], c, b});
      next.push_back({a, b, c});
    }
    faces = std::move(next);
  }

  Mesh m;
  m.vertices = Tensor2<double>(verts.size(), 3);
  for (size_t i = 0; i < verts.size(); ++i)
    for (size_t k = 0; k < 3; ++k) m.vertices(i, k) = verts[i][k];
  char buf[64];
  for (const auto& f : faces) {
    std::snprintf(buf, sizeof buf, "f %zu %zu %zu", f[0] + 1, f[1] + 1, f[2] + 1);
    m.face_lines.push_back(buf);
  }
  return m;
}

// ---------------------------------------------------------------------------
// Feature windows: GDPF container

struct FeatureArray {
  size_t frames = 0;  // F
  size_t window = 0;  // W
  size_t dim = 0;     // D

  std::vector<float> values;  // F * W * D row-major

  FeatureArray() = default;
  FeatureArray(size_t f, size_t w, size_t d)
      : frames(f), window(w), dim(d), values(f * w * d, 0.0f) {}

  float& at(size_t f, size_t w, size_t d) {
    return values[(f * window + w) * dim + d];
  }
  float at(size_t f, size_t w, size_t d) const {
    return values[(f * window + w) * dim + d];
  }

  // One frame's window as a dense W x D block.
  Tensor2<float> frame_window(size_t f) const {
    if (f >= frames) throw_shape("FeatureArray: frame index out of range");
    Tensor2<float> out(window, dim);
    std::copy(values.begin() + ptrdiff_t(f * window * dim),
              values.begin() + ptrdiff_t((f + 1) * window * dim), out.data.begin());
    return out;
  }
};

namespace detail {

inline void put_u32(std::ofstream& out, uint32_t v) {
  unsigned char b[4] = {(unsigned char)(v & 0xff), (unsigned char)((v >> 8) & 0xff),
                        (unsigned char)((v >> 16) & 0xff),
                        (unsigned char)((v >> 24) & 0xff)};
  out.write((const char*)b, 4);
}

inline uint32_t take_u32(std::ifstream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read((char*)b, 4))
    throw_data("load_feature_file: truncated header in " + path);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

}  // namespace detail

// Little-endian binary: "GDPF", u32 version=1, u32 F, u32 W, u32 D, then
// F*W*D float32 row-major.
inline void write_feature_file(const std::string& path, const FeatureArray& a) {
  for (float v : a.values)
    if (!is_finite(v)) throw_data("write_feature_file: non-finite value");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw_data("write_feature_file: cannot open " + path);
  out.write("GDPF", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, uint32_t(a.frames));
  detail::put_u32(out, uint32_t(a.window));
  detail::put_u32(out, uint32_t(a.dim));
  static_assert(sizeof(float) == 4);
  out.write((const char*)a.values.data(), std::streamsize(a.values.size() * 4));
  if (!out) throw_data("write_feature_file: write failed for " + path);
}

inline FeatureArray load_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("load_feature_file: cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4))
    throw_data("load_feature_file: truncated header in " + path);
  if (std::string(magic, 4) != "GDPF")
    throw_data("load_feature_file: bad magic in " + path);
  uint32_t version = detail::take_u32(in, path);
  if (version != 1)
    throw_data("load_feature_file: unsupported version " + std::to_string(version) +
               " in " + path);
  uint32_t f = detail::take_u32(in, path);
  uint32_t w = detail::take_u32(in, path);
  uint32_t d = detail::take_u32(in, path);
  FeatureArray a(f, w, d);
  if (!a.values.empty() &&
      !in.read((char*)a.values.data(), std::streamsize(a.values.size() * 4)))
    throw_data("load_feature_file: truncated data in " + path);
  char extra;
  if (in.read(&extra, 1))
    throw_data("load_feature_file: trailing bytes in " + path);
  return a;
}

// ---------------------------------------------------------------------------
// Noise injection

enum class NoiseKind { gaussian, outlier, dropout };

inline const char* noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::outlier: return "outlier";
    case NoiseKind::dropout: return "dropout";
  }
  return "?";
}

inline NoiseKind noise_kind_from(const std::string& s) {
  if (s == "gaussian") return NoiseKind::gaussian;
  if (s == "outlier") return NoiseKind::outlier;
  if (s == "dropout") return NoiseKind::dropout;
  throw_usage("unknown noise kind: " + s);
}

namespace detail {

inline std::vector<double> channel_std(const FeatureArray& a) {
  std::vector<double> mean(a.dim, 0.0), var(a.dim, 0.0);
  const size_t per_channel = a.frames * a.window;
  if (per_channel == 0) return std::vector<double>(a.dim, 0.0);
  for (size_t f = 0; f < a.frames; ++f)
    for (size_t w = 0; w < a.window; ++w)
      for (size_t d = 0; d < a.dim; ++d) mean[d] += a.at(f, w, d);
  for (auto& m : mean) m /= double(per_channel);
  for (size_t f = 0; f < a.frames; ++f)
    for (size_t w = 0; w < a.window; ++w)
      for (size_t d = 0; d < a.dim; ++d) {
        double c = a.at(f, w, d) - mean[d];
        var[d] += c * c;
      }
  std::vector<double> sd(a.dim);
  for (size_t d = 0; d < a.dim; ++d) sd[d] = std::sqrt(var[d] / double(per_channel));
  return sd;
}

// Exactly k distinct frame indices, order-independent of k's magnitude.
inline std::vector<size_t> pick_frames(size_t total, size_t k, Rng& rng) {
  std::vector<size_t> idx(total);
  for (size_t i = 0; i < total; ++i) idx[i] = i;
  for (size_t i = 0; i < k; ++i) {
    size_t j = i + rng.index(total - i);
    std::swap(idx[i], idx[j]);
  }
  idx.resize(k);
  return idx;
}

}  // namespace detail

// gaussian: add N(0, level*std(channel)) everywhere. outlier: replace a
// level-fraction of frames (exact count) with +-5*std spikes. dropout: zero
// a level-fraction of frames.
inline void inject_noise(FeatureArray& a, NoiseKind kind, double level, Rng& rng) {
  if (level < 0.0) throw_usage("inject_noise: level must be non-negative");
  if (level == 0.0) return;
  if ((kind == NoiseKind::outlier || kind == NoiseKind::dropout) && level > 1.0)
    throw_usage(std::string("inject_noise: level > 1 invalid for ") +
                noise_kind_name(kind));
  std::vector<double> sd = detail::channel_std(a);
  switch (kind) {
    case NoiseKind::gaussian:
      for (size_t f = 0; f < a.frames; ++f)
        for (size_t w = 0; w < a.window; ++w)
          for (size_t d = 0; d < a.dim; ++d)
            a.at(f, w, d) += float(level * sd[d] * rng.normal());
      break;
    case NoiseKind::outlier: {
      size_t k = size_t(std::llround(level * double(a.frames)));
      for (size_t f : detail::pick_frames(a.frames, k, rng))
        for (size_t w = 0; w < a.window; ++w)
          for (size_t d = 0; d < a.dim; ++d)
            a.at(f, w, d) = float((rng.uniform() < 0.5 ? -5.0 : 5.0) * sd[d]);
      break;
    }
    case NoiseKind::dropout: {
      size_t k = size_t(std::llround(level * double(a.frames)));
      for (size_t f : detail::pick_frames(a.frames, k, rng))
        for (size_t w = 0; w < a.window; ++w)
          for (size_t d = 0; d < a.dim; ++d) a.at(f, w, d) = 0.0f;
      break;
    }
  }
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitPlan {
  std::vector<std::string> train_subjects, val_subjects, test_subjects;
  std::vector<std::string> train_sentences, val_sentences, test_sentences;
};

// 8/2/2-proportioned subject split plus held-out sentence ids, so train and
// test share neither subjects nor sentences.
inline SplitPlan split_plan(const std::vector<SequenceManifest>& manifests) {
  std::set<std::string> subj_set, sent_set;
  for (const auto& m : manifests) {
    subj_set.insert(m.subject_id);
    sent_set.insert(m.sentence_id);
  }
  std::vector<std::string> subjects(subj_set.begin(), subj_set.end());
  std::vector<std::string> sentences(sent_set.begin(), sent_set.end());
  if (subjects.size() < 4)
    throw_data("split_plan: need at least 4 subjects, got " +
               std::to_string(subjects.size()));
  if (sentences.size() < 3)
    throw_data("split_plan: need at least 3 sentences, got " +
               std::to_string(sentences.size()));

  const size_t s = subjects.size();
  size_t s_hold = std::max<size_t>(1, size_t(std::llround(double(s) * 2.0 / 12.0)));
  const size_t m = sentences.size();
  size_t m_hold = std::max<size_t>(1, size_t(std::llround(double(m) * 0.1)));

  SplitPlan plan;
  plan.train_subjects.assign(subjects.begin(), subjects.end() - ptrdiff_t(2 * s_hold));
  plan.val_subjects.assign(subjects.end() - ptrdiff_t(2 * s_hold),
                           subjects.end() - ptrdiff_t(s_hold));
  plan.test_subjects.assign(subjects.end() - ptrdiff_t(s_hold), subjects.end());
  plan.train_sentences.assign(sentences.begin(),
                              sentences.end() - ptrdiff_t(2 * m_hold));
  plan.val_sentences.assign(sentences.end() - ptrdiff_t(2 * m_hold),
                            sentences.end() - ptrdiff_t(m_hold));
  plan.test_sentences.assign(sentences.end() - ptrdiff_t(m_hold), sentences.end());
  if (plan.train_subjects.empty()) throw_data("split_plan: no training subjects left");
  if (plan.train_sentences.empty())
    throw_data("split_plan: no training sentences left");
  return plan;
}

inline DatasetSplit split_dataset(const std::vector<SequenceManifest>& manifests) {
  SplitPlan plan = split_plan(manifests);
  auto contains = [](const std::vector<std::string>& v, const std::string& x) {
    return std::find(v.begin(), v.end(), x) != v.end();
  };
  DatasetSplit out;
  for (const auto& m : manifests) {
    if (contains(plan.train_subjects, m.subject_id) &&
        contains(plan.train_sentences, m.sentence_id))
      out.train.push_back(m);
    else if (contains(plan.val_subjects, m.subject_id) &&
             contains(plan.val_sentences, m.sentence_id))
      out.val.push_back(m);
    else if (contains(plan.test_subjects, m.subject_id) &&
             contains(plan.test_sentences, m.sentence_id))
      out.test.push_back(m);
  }
  if (out.train.empty() || out.val.empty() || out.test.empty())
    throw_data("split_dataset: a split bucket came out empty");
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic generator

namespace detail {

struct BlendShape {
  std::vector<double> bump;      // per-vertex profile on the unit sphere
  std::array<double, 3> dir{};   // displacement direction
};

inline std::array<double, 3> random_unit_vec(Rng& rng) {
  while (true) {
    std::array<double, 3> v = {rng.normal(), rng.normal(), rng.normal()};
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n > 1e-6) return {v[0] / n, v[1] / n, v[2] / n};
  }
}

// cos^2 cap: 1 at the center direction, smoothly 0 at angular radius w.
inline double cap_profile(double angle, double width) {
  if (angle >= width) return 0.0;
  double c = std::cos(M_PI / 2.0 * angle / width);
  return c * c;
}

inline double angle_between(const std::array<double, 3>& a, const double* b) {
  double dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  return std::acos(std::clamp(dot, -1.0, 1.0));
}

// Shared across subjects: only the per-subject style scalar differs.
inline std::vector<BlendShape> make_blendshapes(const Mesh& sphere, size_t count,
                                                uint64_t root_seed) {
  std::vector<BlendShape> shapes(count);
  for (size_t j = 0; j < count; ++j) {
    Rng rng(seed_derive(root_seed, "blend", j));
    std::array<double, 3> center = random_unit_vec(rng);
    double width = 0.35 + 0.55 * rng.uniform();
    BlendShape& b = shapes[j];
    b.dir = random_unit_vec(rng);
    b.bump.resize(sphere.vertex_count());
    for (size_t v = 0; v < sphere.vertex_count(); ++v)
      b.bump[v] = cap_profile(angle_between(center, &sphere.vertices(v, 0)), width);
  }
  return shapes;
}

// Identity: the unit sphere scaled by a smooth per-subject radius field.
inline Tensor2<double> subject_template(const Mesh& sphere, uint64_t root_seed,
                                        size_t subject) {
  Rng rng(seed_derive(root_seed, "template", subject));
  Tensor2<double> verts = sphere.vertices;
  const size_t bumps = 4;
  for (size_t b = 0; b < bumps; ++b) {
    std::array<double, 3> center = random_unit_vec(rng);
    double width = 0.5 + 0.6 * rng.uniform();
    double amp = 0.08 * (rng.uniform() * 2.0 - 1.0);
    for (size_t v = 0; v < sphere.vertex_count(); ++v) {
      double scale =
          1.0 + amp * cap_profile(angle_between(center, &sphere.vertices(v, 0)), width);
      for (size_t k = 0; k < 3; ++k) verts(v, k) = verts(v, k) * scale;
    }
  }
  return verts;
}

constexpr size_t kSinPerChannel = 5;

// Five dataset-global oscillators and a fixed random channel mix. A sentence
// only redraws the oscillator amplitudes and phases, so its entire content
// state has ten degrees of freedom; training windows then cover the same
// region held-out sentences are drawn from instead of lying on disjoint
// per-sentence curves.
struct CurveBank {
  std::array<double, kSinPerChannel> freqs;  // Hz
  Tensor2<double> mix;                       // dim x kSinPerChannel gains
};

inline CurveBank make_frequency_pool(size_t dim, uint64_t root_seed) {
  CurveBank bank;
  Rng frng(seed_derive(root_seed, "freqpool", 0));
  // 0.3..9.3 Hz at 30 fps: articulation-rate content that decorrelates
  // within a window, so every sentence contributes many distinct windows.
  for (auto& f : bank.freqs) f = 0.3 + 9.0 * frng.uniform();
  bank.mix = Tensor2<double>(dim, kSinPerChannel);
  for (size_t d = 0; d < dim; ++d) {
    Rng rng(seed_derive(root_seed, "chanmix", d));
    for (size_t i = 0; i < kSinPerChannel; ++i) bank.mix(d, i) = rng.normal();
  }
  return bank;
}

// Smooth per-channel curves: 5 sinusoids each, normalized to unit power.
inline Tensor2<double> sentence_curve(const CurveBank& bank, size_t frames,
                                      double fps, uint64_t seed) {
  Rng rng(seed);
  const size_t dim = bank.mix.rows;
  std::array<double, kSinPerChannel> amp, phase;
  for (size_t i = 0; i < kSinPerChannel; ++i) {
    amp[i] = 0.3 + 0.7 * rng.uniform();
    phase[i] = 2.0 * M_PI * rng.uniform();
  }
  Tensor2<double> curve(frames, dim);
  for (size_t d = 0; d < dim; ++d) {
    double power = 0.0;
    for (size_t i = 0; i < kSinPerChannel; ++i) {
      const double g = bank.mix(d, i) * amp[i];
      power += g * g / 2.0;
    }
    const double inv = power > 0.0 ? 1.0 / std::sqrt(power) : 1.0;
    for (size_t t = 0; t < frames; ++t) {
      double acc = 0.0;
      for (size_t i = 0; i < kSinPerChannel; ++i)
        acc += bank.mix(d, i) * amp[i] *
               std::sin(2.0 * M_PI * bank.freqs[i] * (double(t) / fps) + phase[i]);
      curve(t, d) = acc * inv;
    }
  }
  return curve;
}

// W-frame slice centered at t (offsets -(W/2-1) .. +W/2), edge-clamped.
inline Tensor2<double> window_at(const Tensor2<double>& curve, size_t t, size_t w) {
  Tensor2<double> out(w, curve.cols);
  const ptrdiff_t lo = ptrdiff_t(w) / 2 - 1;
  for (size_t j = 0; j < w; ++j) {
    ptrdiff_t src = ptrdiff_t(t) + ptrdiff_t(j) - lo;
    src = std::clamp<ptrdiff_t>(src, 0, ptrdiff_t(curve.rows) - 1);
    for (size_t d = 0; d < curve.cols; ++d) out(j, d) = curve(size_t(src), d);
  }
  return out;
}

// Activation scale and squashing gain of the generative map. kKappa keeps
// the pre-tanh argument mostly inside (-1, 1), so a linear fit explains the
// bulk of the deformation and the residual sets the learnability ceiling.
constexpr double kBlendAmp = 0.05;
constexpr double kKappa = 0.5;

struct SentenceOracle {
  std::vector<Tensor2<double>> projections;  // per blendshape, W x D, unit Frobenius
};

inline SentenceOracle make_oracle(size_t window, size_t dim, size_t blendshapes,
                                  uint64_t root_seed) {
  SentenceOracle o;
  o.projections.resize(blendshapes);
  for (size_t j = 0; j < blendshapes; ++j) {
    Rng rng(seed_derive(root_seed, "proj", j));
    // Rank-1, slow in time: a sub-cycle cosine profile times a random channel
    // mix. Each activation is then a smoothed channel average, a function a
    // strided conv stack represents as readily as a flat regression does, so
    // fitting it on the training sentences carries over to unseen ones.
    const double cycles = 0.25 + rng.uniform();
    const double phase = 2.0 * M_PI * rng.uniform();
    std::vector<double> tau(window), chi(dim);
    for (size_t w = 0; w < window; ++w)
      tau[w] = std::cos(2.0 * M_PI * cycles * (double(w) + 0.5) / double(window) +
                        phase);
    for (auto& v : chi) v = rng.normal();
    Tensor2<double> p(window, dim);
    double norm2 = 0.0;
    for (size_t w = 0; w < window; ++w)
      for (size_t d = 0; d < dim; ++d) {
        p(w, d) = tau[w] * chi[d];
        norm2 += p(w, d) * p(w, d);
      }
    double inv = 1.0 / std::sqrt(norm2);
    for (auto& v : p.data) v *= inv;
    o.projections[j] = std::move(p);
  }
  return o;
}

inline double blend_activation(const SentenceOracle& o, size_t j,
                               const Tensor2<double>& window) {
  double acc = 0.0;
  const auto& p = o.projections[j];
  for (size_t i = 0; i < p.size(); ++i) acc += p.data[i] * window.data[i];
  return std::tanh(kKappa * acc);
}

}  // namespace detail

struct GeneratedDataset {
  std::string index_path;
  SynthConfig cfg;
  std::string topology_id;
  std::vector<std::string> subjects;
  std::vector<SequenceManifest> sequences;
  DatasetSplit split;
};

namespace detail {

inline nlohmann::json manifest_to_json(const SequenceManifest& m) {
  return nlohmann::json{{"subject_id", m.subject_id},
                        {"sentence_id", m.sentence_id},
                        {"frame_count", m.frame_count},
                        {"feature_path", m.feature_path},
                        {"template_path", m.template_path},
                        {"mesh_dir", m.mesh_dir},
                        {"fps", m.fps}};
}

inline SequenceManifest manifest_from_json(const nlohmann::json& j) {
  SequenceManifest m;
  m.subject_id = j.at("subject_id").get<std::string>();
  m.sentence_id = j.at("sentence_id").get<std::string>();
  m.frame_count = j.at("frame_count").get<size_t>();
  m.feature_path = j.at("feature_path").get<std::string>();
  m.template_path = j.at("template_path").get<std::string>();
  m.mesh_dir = j.at("mesh_dir").get<std::string>();
  m.fps = j.at("fps").get<double>();
  return m;
}

}  // namespace detail

// Generates the full corpus under out_dir and writes index.json. Returns
// the manifests plus the derived split. Deterministic for a fixed config:
// regeneration reproduces every file byte for byte.
inline GeneratedDataset generate_synthetic_dataset(const SynthConfig& cfg,
                                                   const std::string& out_dir) {
  namespace fs = std::filesystem;
  cfg.validate();
  Mesh sphere = make_icosphere(cfg.vertices);
  auto shapes = detail::make_blendshapes(sphere, cfg.blendshapes, cfg.seed);
  auto oracle = detail::make_oracle(cfg.window, cfg.audio_dim, cfg.blendshapes, cfg.seed);
  detail::CurveBank pool = detail::make_frequency_pool(cfg.audio_dim, cfg.seed);

  GeneratedDataset out;
  out.cfg = cfg;

  fs::create_directories(out_dir);
  char nbuf[64];
  for (size_t s = 0; s < cfg.subjects; ++s) {
    std::snprintf(nbuf, sizeof nbuf, "s%02zu", s);
    std::string subj = nbuf;
    out.subjects.push_back(subj);
    fs::path subj_dir = fs::path(out_dir) / "subjects" / subj;
    fs::create_directories(subj_dir);

    Mesh tmpl = sphere;
    tmpl.vertices = detail::subject_template(sphere, cfg.seed, s);
    std::string template_rel = ("subjects/" + subj) + "/template.obj";
    write_mesh(tmpl, (fs::path(out_dir) / template_rel).string());

    Rng style_rng(seed_derive(cfg.seed, "style", s));
    std::vector<double> style(cfg.blendshapes);
    // Per-subject articulation gains. The spread bounds how well a model
    // conditioned on one training identity can track a held-out speaker,
    // so it is kept well below the audio-driven part of the signal.
    for (auto& v : style)
      v = std::clamp(1.0 + 0.05 * style_rng.normal(), 0.8, 1.2);

    for (size_t t = 0; t < cfg.sentences; ++t) {
      std::snprintf(nbuf, sizeof nbuf, "t%02zu", t);
      std::string sent = nbuf;
      fs::path sent_dir = subj_dir / "sentences" / sent;
      fs::path mesh_dir = sent_dir / "meshes";
      fs::create_directories(mesh_dir);

      Tensor2<double> curve = detail::sentence_curve(
          pool, cfg.frames, cfg.fps, seed_derive(cfg.seed, "sentence", t));

      FeatureArray windows(cfg.frames, cfg.window, cfg.audio_dim);
      Mesh frame = tmpl;
      for (size_t f = 0; f < cfg.frames; ++f) {
        Tensor2<double> win = detail::window_at(curve, f, cfg.window);
        for (size_t w = 0; w < cfg.window; ++w)
          for (size_t d = 0; d < cfg.audio_dim; ++d)
            windows.at(f, w, d) = float(win(w, d));

        frame.vertices = tmpl.vertices;
        for (size_t j = 0; j < cfg.blendshapes; ++j) {
          double c = detail::kBlendAmp * style[j] *
                     detail::blend_activation(oracle, j, win);
          if (c == 0.0) continue;
          for (size_t v = 0; v < frame.vertex_count(); ++v) {
            double b = shapes[j].bump[v];
            if (b == 0.0) continue;
            for (size_t k = 0; k < 3; ++k)
              frame.vertices(v, k) += c * b * shapes[j].dir[k];
          }
        }
        std::snprintf(nbuf, sizeof nbuf, "frame_%06zu.obj", f);
        write_mesh(frame, (mesh_dir / nbuf).string());
      }

      std::string base = "subjects/" + subj + "/sentences/" + sent;
      SequenceManifest man;
      man.subject_id = subj;
      man.sentence_id = sent;
      man.frame_count = cfg.frames;
      man.feature_path = base + "/features.gdpf";
      man.template_path = template_rel;
      man.mesh_dir = base + "/meshes";
      man.fps = cfg.fps;
      write_feature_file((fs::path(out_dir) / man.feature_path).string(), windows);
      out.sequences.push_back(std::move(man));
    }
  }

  out.topology_id = mesh_topology_id(sphere);
  out.split = split_dataset(out.sequences);
  SplitPlan plan = split_plan(out.sequences);

  nlohmann::json idx;
  idx["format"] = "gdpnet-dataset";
  idx["version"] = 1;
  idx["seed"] = cfg.seed;
  idx["subjects"] = out.subjects;
  idx["sentences_per_subject"] = cfg.sentences;
  idx["frames_per_sentence"] = cfg.frames;
  idx["vertices"] = cfg.vertices;
  idx["blendshapes"] = cfg.blendshapes;
  idx["window"] = cfg.window;
  idx["audio_dim"] = cfg.audio_dim;
  idx["fps"] = cfg.fps;
  idx["noise_floor"] = cfg.noise_floor;
  idx["topology_id"] = out.topology_id;
  idx["split"] = {{"train_subjects", plan.train_subjects},
                  {"val_subjects", plan.val_subjects},
                  {"test_subjects", plan.test_subjects},
                  {"train_sentences", plan.train_sentences},
                  {"val_sentences", plan.val_sentences},
                  {"test_sentences", plan.test_sentences}};
  nlohmann::json seqs = nlohmann::json::array();
  for (const auto& m : out.sequences) seqs.push_back(detail::manifest_to_json(m));
  idx["sequences"] = seqs;

  out.index_path = (fs::path(out_dir) / "index.json").string();
  std::ofstream f(out.index_path, std::ios::binary);
  if (!f) throw_data("generate_synthetic_dataset: cannot write " + out.index_path);
  f << idx.dump(2) << "\n";
  return out;
}

// Reads index.json back; paths in the manifests stay relative to the index.
inline GeneratedDataset load_dataset_index(const std::string& index_path) {
  std::ifstream in(index_path);
  if (!in) throw_data("load_dataset_index: cannot open " + index_path);
  nlohmann::json idx;
  try {
    in >> idx;
  } catch (const nlohmann::json::exception& e) {
    throw_data("load_dataset_index: parse error in " + index_path + ": " + e.what());
  }
  GeneratedDataset out;
  try {
    if (idx.at("format").get<std::string>() != "gdpnet-dataset")
      throw_data("load_dataset_index: not a dataset index: " + index_path);
    out.cfg.seed = idx.at("seed").get<uint64_t>();
    out.cfg.sentences = idx.at("sentences_per_subject").get<size_t>();
    out.cfg.frames = idx.at("frames_per_sentence").get<size_t>();
    out.cfg.vertices = idx.at("vertices").get<size_t>();
    out.cfg.blendshapes = idx.at("blendshapes").get<size_t>();
    out.cfg.window = idx.at("window").get<size_t>();
    out.cfg.audio_dim = idx.at("audio_dim").get<size_t>();
    out.cfg.fps = idx.at("fps").get<double>();
    out.cfg.noise_floor = idx.at("noise_floor").get<double>();
    out.subjects = idx.at("subjects").get<std::vector<std::string>>();
    out.cfg.subjects = out.subjects.size();
    out.topology_id = idx.at("topology_id").get<std::string>();
    for (const auto& j : idx.at("sequences"))
      out.sequences.push_back(detail::manifest_from_json(j));
  } catch (const nlohmann::json::exception& e) {
    throw_data("load_dataset_index: bad index " + index_path + ": " + e.what());
  }
  out.index_path = index_path;
  out.split = split_dataset(out.sequences);
  return out;
}

// Position of a subject id in the sorted subject list; the one-hot index.
inline size_t subject_index(const GeneratedDataset& ds, const std::string& subject_id) {
  auto it = std::find(ds.subjects.begin(), ds.subjects.end(), subject_id);
  if (it == ds.subjects.end())
    throw_data("subject_index: unknown subject " + subject_id);
  return size_t(it - ds.subjects.begin());
}

inline std::string dataset_root(const GeneratedDataset& ds) {
  return std::filesystem::path(ds.index_path).parent_path().string();
}

inline std::string resolve_path(const GeneratedDataset& ds, const std::string& rel) {
  return (std::filesystem::path(dataset_root(ds)) / rel).string();
}

}  // namespace gdpnet
