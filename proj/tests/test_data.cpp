#include <Eigen/Dense>
#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <set>

#include "gdpnet/data.hpp"

using namespace gdpnet;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

fs::path tmp_root() {
  fs::path p = fs::temp_directory_path() / "gdpnet_data_tests";
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

SynthConfig tiny_config() {
  SynthConfig cfg;
  cfg.subjects = 4;
  cfg.sentences = 3;
  cfg.frames = 20;
  cfg.vertices = 12;
  cfg.blendshapes = 2;
  cfg.window = 8;
  cfg.audio_dim = 6;
  cfg.seed = 77;
  return cfg;
}

std::vector<SequenceManifest> fake_manifests(size_t subjects, size_t sentences) {
  std::vector<SequenceManifest> out;
  char buf[32];
  for (size_t s = 0; s < subjects; ++s)
    for (size_t t = 0; t < sentences; ++t) {
      SequenceManifest m;
      std::snprintf(buf, sizeof buf, "s%02zu", s);
      m.subject_id = buf;
      std::snprintf(buf, sizeof buf, "t%02zu", t);
      m.sentence_id = buf;
      m.frame_count = 10;
      out.push_back(m);
    }
  return out;
}

}  // namespace

TEST_CASE("icosphere resolutions, unit radii, and Euler characteristic") {
  const size_t counts[] = {12, 42, 162, 642};
  const size_t faces[] = {20, 80, 320, 1280};
  for (size_t i = 0; i < 4; ++i) {
    Mesh m = make_icosphere(counts[i]);
    REQUIRE(m.vertex_count() == counts[i]);
    REQUIRE(m.face_lines.size() == faces[i]);
    for (size_t v = 0; v < m.vertex_count(); ++v) {
      double r2 = 0.0;
      for (size_t k = 0; k < 3; ++k) r2 += m.vertices(v, k) * m.vertices(v, k);
      REQUIRE(std::sqrt(r2) == Approx(1.0).margin(1e-12));
    }
    // V - E + F = 2 with every edge shared by exactly two triangles.
    std::set<std::pair<size_t, size_t>> edges;
    for (const auto& line : m.face_lines) {
      size_t a, b, c;
      REQUIRE(std::sscanf(line.c_str(), "f %zu %zu %zu", &a, &b, &c) == 3);
      edges.insert(std::minmax(a, b));
      edges.insert(std::minmax(b, c));
      edges.insert(std::minmax(c, a));
    }
    REQUIRE(counts[i] - edges.size() + faces[i] == 2);
  }
  REQUIRE_THROWS_AS(make_icosphere(100), Error);
  Mesh a = make_icosphere(42), b = make_icosphere(42);
  REQUIRE(a.vertices.data == b.vertices.data);
  REQUIRE(a.face_lines == b.face_lines);
}

TEST_CASE("feature file round-trip is bitwise lossless") {
  Rng rng(11);
  FeatureArray a(5, 4, 3);
  for (auto& v : a.values) v = float(rng.normal());
  fs::path p = tmp_root() / "roundtrip.gdpf";
  write_feature_file(p.string(), a);
  FeatureArray b = load_feature_file(p.string());
  REQUIRE(b.frames == 5);
  REQUIRE(b.window == 4);
  REQUIRE(b.dim == 3);
  REQUIRE(b.values == a.values);
}

TEST_CASE("empty feature file is valid") {
  FeatureArray a(0, 16, 29);
  fs::path p = tmp_root() / "empty.gdpf";
  write_feature_file(p.string(), a);
  FeatureArray b = load_feature_file(p.string());
  REQUIRE(b.frames == 0);
  REQUIRE(b.values.empty());
}

TEST_CASE("corrupt feature files raise distinct errors") {
  Rng rng(12);
  FeatureArray a(3, 2, 2);
  for (auto& v : a.values) v = float(rng.normal());
  fs::path good = tmp_root() / "good.gdpf";
  write_feature_file(good.string(), a);
  std::string bytes = slurp(good);

  auto write_variant = [&](const std::string& name, const std::string& content) {
    fs::path p = tmp_root() / name;
    std::ofstream out(p, std::ios::binary);
    out << content;
    return p;
  };

  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    load_feature_file(write_variant("bad_magic.gdpf", bad_magic).string());
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("bad magic") != std::string::npos);
  }

  std::string bad_version = bytes;
  bad_version[4] = 9;
  try {
    load_feature_file(write_variant("bad_version.gdpf", bad_version).string());
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("version") != std::string::npos);
  }

  try {
    load_feature_file(
        write_variant("trunc_header.gdpf", bytes.substr(0, 10)).string());
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("truncated header") != std::string::npos);
  }

  try {
    load_feature_file(
        write_variant("trunc_data.gdpf", bytes.substr(0, bytes.size() - 5)).string());
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("truncated data") != std::string::npos);
  }

  try {
    load_feature_file(write_variant("trailing.gdpf", bytes + "zz").string());
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(std::string(e.what()).find("trailing") != std::string::npos);
  }

  FeatureArray nan_arr(1, 1, 1);
  nan_arr.values[0] = std::numeric_limits<float>::quiet_NaN();
  REQUIRE_THROWS_AS(
      write_feature_file((tmp_root() / "nan.gdpf").string(), nan_arr), Error);
}

TEST_CASE("noise level zero is the identity") {
  Rng rng(13);
  FeatureArray a(50, 2, 3);
  for (auto& v : a.values) v = float(rng.normal());
  FeatureArray b = a;
  for (NoiseKind k : {NoiseKind::gaussian, NoiseKind::outlier, NoiseKind::dropout}) {
    Rng noise_rng(99);
    inject_noise(b, k, 0.0, noise_rng);
    REQUIRE(b.values == a.values);
  }
}

TEST_CASE("gaussian noise tracks per-channel scale") {
  const double scale[3] = {1.0, 5.0, 0.5};
  Rng rng(14);
  FeatureArray a(1000, 2, 3);
  for (size_t f = 0; f < a.frames; ++f)
    for (size_t w = 0; w < a.window; ++w)
      for (size_t d = 0; d < a.dim; ++d)
        a.at(f, w, d) = float(scale[d] * rng.normal());
  FeatureArray b = a;
  Rng noise_rng(15);
  inject_noise(b, NoiseKind::gaussian, 0.1, noise_rng);

  for (size_t d = 0; d < 3; ++d) {
    double mean = 0.0, var = 0.0;
    const size_t n = a.frames * a.window;
    for (size_t f = 0; f < a.frames; ++f)
      for (size_t w = 0; w < a.window; ++w)
        mean += double(b.at(f, w, d)) - double(a.at(f, w, d));
    mean /= double(n);
    for (size_t f = 0; f < a.frames; ++f)
      for (size_t w = 0; w < a.window; ++w) {
        double c = double(b.at(f, w, d)) - double(a.at(f, w, d)) - mean;
        var += c * c;
      }
    double sd = std::sqrt(var / double(n));
    // Channel std of the payload is close to scale[d]; the injected std must
    // land within 20% of 0.1 * that.
    REQUIRE(sd > 0.08 * scale[d] * 0.8);
    REQUIRE(sd < 0.12 * scale[d] * 1.2);
  }
}

TEST_CASE("outlier noise alters an exact frame count with 5-sigma spikes") {
  Rng rng(16);
  FeatureArray a(100, 2, 2);
  for (auto& v : a.values) v = float(rng.normal());
  std::vector<double> sd = detail::channel_std(a);
  FeatureArray b = a;
  Rng noise_rng(17);
  inject_noise(b, NoiseKind::outlier, 0.5, noise_rng);

  size_t altered = 0;
  for (size_t f = 0; f < a.frames; ++f) {
    bool diff = false;
    for (size_t w = 0; w < a.window; ++w)
      for (size_t d = 0; d < a.dim; ++d)
        if (b.at(f, w, d) != a.at(f, w, d)) diff = true;
    if (!diff) continue;
    ++altered;
    for (size_t w = 0; w < a.window; ++w)
      for (size_t d = 0; d < a.dim; ++d)
        REQUIRE(std::abs(double(b.at(f, w, d))) == Approx(5.0 * sd[d]).epsilon(1e-6));
  }
  REQUIRE(altered == 50);
}

TEST_CASE("dropout zeroes an exact frame count and nothing else") {
  Rng rng(18);
  FeatureArray a(100, 3, 2);
  for (auto& v : a.values) v = float(rng.normal()) + 3.0f;  // keep away from zero
  FeatureArray b = a;
  Rng noise_rng(19);
  inject_noise(b, NoiseKind::dropout, 0.1, noise_rng);

  size_t zeroed = 0;
  for (size_t f = 0; f < a.frames; ++f) {
    bool all_zero = true, untouched = true;
    for (size_t w = 0; w < a.window; ++w)
      for (size_t d = 0; d < a.dim; ++d) {
        if (b.at(f, w, d) != 0.0f) all_zero = false;
        if (b.at(f, w, d) != a.at(f, w, d)) untouched = false;
      }
    if (all_zero) ++zeroed;
    REQUIRE((all_zero || untouched));
  }
  REQUIRE(zeroed == 10);
}

TEST_CASE("fraction noise kinds reject level above one") {
  FeatureArray a(10, 2, 2);
  Rng rng(20);
  REQUIRE_THROWS_AS(inject_noise(a, NoiseKind::outlier, 1.5, rng), Error);
  REQUIRE_THROWS_AS(inject_noise(a, NoiseKind::dropout, 1.5, rng), Error);
  REQUIRE_THROWS_AS(inject_noise(a, NoiseKind::gaussian, -0.1, rng), Error);
  inject_noise(a, NoiseKind::gaussian, 1.5, rng);  // amplitude kinds are unbounded
}

TEST_CASE("twelve subjects split 8/2/2 with held-out sentences") {
  auto manifests = fake_manifests(12, 10);
  SplitPlan plan = split_plan(manifests);
  REQUIRE(plan.train_subjects.size() == 8);
  REQUIRE(plan.val_subjects.size() == 2);
  REQUIRE(plan.test_subjects.size() == 2);
  REQUIRE(plan.train_sentences.size() == 8);
  REQUIRE(plan.val_sentences.size() == 1);
  REQUIRE(plan.test_sentences.size() == 1);
}

TEST_CASE("four subjects split 2/1/1 and buckets stay disjoint") {
  auto manifests = fake_manifests(4, 10);
  SplitPlan plan = split_plan(manifests);
  REQUIRE(plan.train_subjects.size() == 2);
  REQUIRE(plan.val_subjects.size() == 1);
  REQUIRE(plan.test_subjects.size() == 1);

  DatasetSplit split = split_dataset(manifests);
  REQUIRE(split.train.size() == 2 * 8);
  REQUIRE(split.val.size() == 1 * 1);
  REQUIRE(split.test.size() == 1 * 1);

  std::set<std::string> train_subj, test_subj, train_sent, test_sent;
  for (const auto& m : split.train) {
    train_subj.insert(m.subject_id);
    train_sent.insert(m.sentence_id);
  }
  for (const auto& m : split.test) {
    test_subj.insert(m.subject_id);
    test_sent.insert(m.sentence_id);
  }
  std::vector<std::string> subj_overlap, sent_overlap;
  std::set_intersection(train_subj.begin(), train_subj.end(), test_subj.begin(),
                        test_subj.end(), std::back_inserter(subj_overlap));
  std::set_intersection(train_sent.begin(), train_sent.end(), test_sent.begin(),
                        test_sent.end(), std::back_inserter(sent_overlap));
  REQUIRE(subj_overlap.empty());
  REQUIRE(sent_overlap.empty());
}

TEST_CASE("too few subjects or sentences is a data error") {
  REQUIRE_THROWS_AS(split_plan(fake_manifests(3, 10)), Error);
  REQUIRE_THROWS_AS(split_plan(fake_manifests(4, 2)), Error);
}

TEST_CASE("generated windows equal the centered edge-clamped curve slice") {
  SynthConfig cfg = tiny_config();
  fs::path dir = tmp_root() / "window_check";
  fs::remove_all(dir);
  GeneratedDataset ds = generate_synthetic_dataset(cfg, dir.string());

  detail::CurveBank pool = detail::make_frequency_pool(cfg.audio_dim, cfg.seed);
  for (const auto& man : ds.sequences) {
    size_t t_idx = std::stoul(man.sentence_id.substr(1));
    Tensor2<double> curve = detail::sentence_curve(
        pool, cfg.frames, cfg.fps, seed_derive(cfg.seed, "sentence", t_idx));
    FeatureArray fa = load_feature_file(resolve_path(ds, man.feature_path));
    REQUIRE(fa.frames == cfg.frames);
    REQUIRE(fa.window == cfg.window);
    REQUIRE(fa.dim == cfg.audio_dim);
    for (size_t f = 0; f < cfg.frames; ++f) {
      Tensor2<double> win = detail::window_at(curve, f, cfg.window);
      for (size_t w = 0; w < cfg.window; ++w)
        for (size_t d = 0; d < cfg.audio_dim; ++d)
          REQUIRE(fa.at(f, w, d) == float(win(w, d)));
    }
  }

  // Clamping at the left edge: frame 0's leading rows repeat the first frame.
  const auto& man = ds.sequences.front();
  FeatureArray fa = load_feature_file(resolve_path(ds, man.feature_path));
  const size_t lead = cfg.window / 2 - 1;
  for (size_t w = 0; w + 1 < lead + 1; ++w)
    for (size_t d = 0; d < cfg.audio_dim; ++d)
      REQUIRE(fa.at(0, w, d) == fa.at(0, lead, d));
}

TEST_CASE("zero feature window produces exactly zero activation") {
  SynthConfig cfg = tiny_config();
  auto oracle =
      detail::make_oracle(cfg.window, cfg.audio_dim, cfg.blendshapes, cfg.seed);
  Tensor2<double> zero(cfg.window, cfg.audio_dim);
  for (size_t j = 0; j < cfg.blendshapes; ++j)
    REQUIRE(detail::blend_activation(oracle, j, zero) == 0.0);
}

TEST_CASE("regeneration with the same seed is byte-identical") {
  SynthConfig cfg = tiny_config();
  fs::path a = tmp_root() / "det_a";
  fs::path b = tmp_root() / "det_b";
  fs::remove_all(a);
  fs::remove_all(b);
  generate_synthetic_dataset(cfg, a.string());
  generate_synthetic_dataset(cfg, b.string());

  size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), a);
    REQUIRE(slurp(entry.path()) == slurp(b / rel));
    ++compared;
  }
  // 4 subjects x (1 template + 3 sentences x (1 feature file + 20 meshes)) + index
  REQUIRE(compared == 4 * (1 + 3 * (1 + 20)) + 1);
}

TEST_CASE("index round-trips manifests, split, and lookup helpers") {
  SynthConfig cfg = tiny_config();
  fs::path dir = tmp_root() / "index_check";
  fs::remove_all(dir);
  GeneratedDataset ds = generate_synthetic_dataset(cfg, dir.string());
  GeneratedDataset back = load_dataset_index(ds.index_path);

  REQUIRE(back.subjects == ds.subjects);
  REQUIRE(back.topology_id == ds.topology_id);
  REQUIRE(back.cfg.frames == cfg.frames);
  REQUIRE(back.cfg.noise_floor == cfg.noise_floor);
  REQUIRE(back.sequences.size() == ds.sequences.size());
  for (size_t i = 0; i < ds.sequences.size(); ++i) {
    REQUIRE(back.sequences[i].subject_id == ds.sequences[i].subject_id);
    REQUIRE(back.sequences[i].feature_path == ds.sequences[i].feature_path);
    REQUIRE(back.sequences[i].frame_count == ds.sequences[i].frame_count);
  }
  REQUIRE(back.split.train.size() == ds.split.train.size());
  REQUIRE(back.split.test.size() == ds.split.test.size());
  REQUIRE(subject_index(back, "s02") == 2);
  REQUIRE_THROWS_AS(subject_index(back, "zz"), Error);
  REQUIRE(fs::exists(resolve_path(back, back.sequences[0].feature_path)));

  // Every referenced file exists and mesh topology matches the index.
  for (const auto& man : back.sequences) {
    REQUIRE(fs::exists(resolve_path(back, man.template_path)));
    Mesh tmpl = load_mesh(resolve_path(back, man.template_path));
    REQUIRE(mesh_topology_id(tmpl) == back.topology_id);
  }
}

TEST_CASE("corrupt index files are data errors") {
  fs::path p = tmp_root() / "bad_index.json";
  std::ofstream(p) << "{ not json";
  try {
    load_dataset_index(p.string());
    FAIL("expected error");
  } catch (const Error& e) {
    REQUIRE(e.kind() == ErrorKind::data);
  }
  std::ofstream(p) << "{\"format\": \"something-else\"}";
  REQUIRE_THROWS_AS(load_dataset_index(p.string()), Error);
  REQUIRE_THROWS_AS(load_dataset_index((tmp_root() / "nope.json").string()), Error);
}

TEST_CASE("linear oracle fit lands at the configured noise floor") {
  SynthConfig cfg;
  cfg.subjects = 4;
  cfg.sentences = 5;
  cfg.frames = 80;
  cfg.vertices = 162;
  cfg.blendshapes = 4;
  cfg.seed = 1234;
  cfg.noise_floor = 5e-5;  // measured in-sample ridge residual for this config
  fs::path dir = tmp_root() / "oracle_check";
  fs::remove_all(dir);
  GeneratedDataset ds = generate_synthetic_dataset(cfg, dir.string());

  const size_t wd = cfg.window * cfg.audio_dim;
  const size_t s_dim = ds.subjects.size();
  const size_t d3 = cfg.vertices * 3;
  size_t total = 0;
  for (const auto& m : ds.split.train) total += m.frame_count;

  Eigen::MatrixXd x(total, wd + s_dim + 1), y(total, d3);
  size_t row = 0;
  char buf[64];
  for (const auto& man : ds.split.train) {
    FeatureArray fa = load_feature_file(resolve_path(ds, man.feature_path));
    Mesh tmpl = load_mesh(resolve_path(ds, man.template_path));
    size_t sidx = subject_index(ds, man.subject_id);
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

  Eigen::MatrixXd xtx = x.transpose() * x;
  xtx.diagonal().array() += 1e-3 * xtx.trace() / double(xtx.rows());
  Eigen::MatrixXd w = Eigen::LDLT<Eigen::MatrixXd>(xtx).solve(x.transpose() * y);
  Eigen::MatrixXd resid = y - x * w;

  double acc = 0.0;
  for (Eigen::Index r = 0; r < resid.rows(); ++r) {
    double frame = 0.0;
    for (size_t v = 0; v < cfg.vertices; ++v) {
      double n2 = 0.0;
      for (size_t k = 0; k < 3; ++k) n2 += resid(r, 3 * v + k) * resid(r, 3 * v + k);
      frame += std::sqrt(n2);
    }
    acc += frame / double(cfg.vertices);
  }
  double oracle_mse = acc / double(resid.rows());
  REQUIRE(oracle_mse > cfg.noise_floor / 3.0);
  REQUIRE(oracle_mse < cfg.noise_floor * 3.0);
}
