#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "gdpnet/config.hpp"
#include "gdpnet/data.hpp"
#include "gdpnet/eval.hpp"

using namespace gdpnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / "gdpnet_eval_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Mesh mesh_of(std::vector<double> flat) {
  const size_t n = flat.size() / 3;
  Mesh m;
  m.vertices = Tensor2<double>(n, 3, std::move(flat));
  return m;
}

SynthConfig tiny_synth() {
  SynthConfig cfg;
  cfg.subjects = 4;
  cfg.sentences = 3;
  cfg.frames = 6;
  cfg.vertices = 42;
  cfg.blendshapes = 3;
  cfg.window = 4;
  cfg.audio_dim = 5;
  cfg.noise_floor = 1e-3;
  cfg.seed = 77;
  return cfg;
}

FullConfig tiny_full() {
  FullConfig fc;
  fc.data = tiny_synth();
  fc.latent_dim = 6;
  fc.base_filters = 2;
  fc.pca_rank = 4;
  fc.decoder_hidden = 8;
  return fc;
}

const GeneratedDataset& shared_dataset() {
  static GeneratedDataset ds = [] {
    fs::path dir = temp_dir("shared_ds");
    return generate_synthetic_dataset(tiny_synth(), dir.string());
  }();
  return ds;
}

}  // namespace

TEST_CASE("mean vertex error on known displacements") {
  // Single vertex moved by a 3-4-0 offset: distance exactly 5.
  Mesh truth = mesh_of({0, 0, 0});
  Mesh pred = mesh_of({3, 4, 0});
  CHECK(mse_metric(pred, truth) == 5.0);

  // Second vertex exact: the mean halves the distance.
  Mesh truth2 = mesh_of({0, 0, 0, 1, 1, 1});
  Mesh pred2 = mesh_of({3, 4, 0, 1, 1, 1});
  CHECK(mse_metric(pred2, truth2) == 2.5);

  // Unit offset of every vertex along x gives exactly 1.
  Mesh truth3 = mesh_of({0, 0, 0, 5, 5, 5, -2, 0, 7});
  Mesh pred3 = mesh_of({1, 0, 0, 6, 5, 5, -1, 0, 7});
  CHECK(mse_metric(pred3, truth3) == 1.0);

  // Identical meshes score zero.
  CHECK(mse_metric(truth3, truth3) == 0.0);
}

TEST_CASE("mean vertex error is translation invariant") {
  Rng rng(11);
  std::vector<double> a(30), b(30);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  Mesh pa = mesh_of(a), pb = mesh_of(b);
  double base = mse_metric(pa, pb);
  for (size_t i = 0; i < a.size(); i += 3) {
    a[i] += 0.5;
    b[i] += 0.5;
  }
  CHECK_THAT(mse_metric(mesh_of(a), mesh_of(b)),
             Catch::Matchers::WithinRel(base, 1e-12));
}

TEST_CASE("vertex count mismatch is a shape error") {
  Mesh a = mesh_of({0, 0, 0});
  Mesh b = mesh_of({0, 0, 0, 1, 1, 1});
  try {
    mse_metric(a, b);
    FAIL("expected shape error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::shape);
  }
  CHECK_THROWS_AS(per_vertex_error(a, b), Error);
}

TEST_CASE("mean of per-vertex errors equals the metric exactly") {
  Rng rng(5);
  std::vector<double> a(60), b(60);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal();
  Mesh pa = mesh_of(a), pb = mesh_of(b);
  std::vector<double> e = per_vertex_error(pa, pb);
  double acc = 0.0;
  for (double v : e) acc += v;
  CHECK(acc / double(e.size()) == mse_metric(pa, pb));
}

TEST_CASE("zero-weight model predicts the template everywhere") {
  const GeneratedDataset& ds = shared_dataset();
  FullConfig fc = tiny_full();
  ModelConfig mcfg = fc.model_for(ds, 2);
  ModelParams<float> params(mcfg);  // all weights zero, offset zero

  const SequenceManifest& man = ds.split.train.front();
  FeatureArray windows = load_feature_file(resolve_path(ds, man.feature_path));
  Mesh tmpl = load_mesh(resolve_path(ds, man.template_path));
  std::vector<double> tf = tmpl.flat();
  std::vector<float> trow(tf.begin(), tf.end());

  Tensor2<float> pred = predict_sequence(params, windows, 0, trow);
  REQUIRE(pred.rows == man.frame_count);
  REQUIRE(pred.cols == mcfg.N * 3);
  for (size_t f = 0; f < pred.rows; ++f)
    for (size_t i = 0; i < pred.cols; ++i) REQUIRE(pred(f, i) == trow[i]);

  // A fixed output offset shifts every prediction by exactly that much.
  for (auto& v : params.out_offset) v = 0.25f;
  Tensor2<float> shifted = predict_sequence(params, windows, 0, trow);
  for (size_t i = 0; i < shifted.cols; ++i)
    REQUIRE(shifted(0, i) == trow[i] + 0.25f);
}

TEST_CASE("predict_sequence validates its inputs") {
  const GeneratedDataset& ds = shared_dataset();
  FullConfig fc = tiny_full();
  ModelParams<float> params(fc.model_for(ds, 2));
  const SequenceManifest& man = ds.split.train.front();
  FeatureArray windows = load_feature_file(resolve_path(ds, man.feature_path));
  Mesh tmpl = load_mesh(resolve_path(ds, man.template_path));
  std::vector<double> tf = tmpl.flat();
  std::vector<float> trow(tf.begin(), tf.end());

  try {
    predict_sequence(params, windows, 9, trow);
    FAIL("expected usage error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::usage);
    CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring("out of range"));
  }

  std::vector<float> short_row(trow.begin(), trow.end() - 3);
  CHECK_THROWS_AS(predict_sequence(params, windows, 0, short_row), Error);

  FeatureArray wrong = windows;
  wrong.dim += 1;
  CHECK_THROWS_AS(predict_sequence(params, wrong, 0, trow), Error);
}

TEST_CASE("evaluate_model report structure and invariants") {
  const GeneratedDataset& ds = shared_dataset();
  FullConfig fc = tiny_full();
  ModelParams<float> params(fc.model_for(ds, 2));  // zero model

  EvalOptions opt;
  opt.noise_seeds = 2;
  std::vector<NoiseSpec> grid = {{NoiseKind::gaussian, 0.0},
                                 {NoiseKind::gaussian, 0.3}};
  EvalReport r = evaluate_model(params, ds, grid, opt);

  // One val and one test speaker, one sentence each at this size.
  REQUIRE(r.per_sequence.size() == 2);
  REQUIRE(r.per_speaker.size() == 2);

  // The zero model is the zero-displacement baseline.
  for (const auto& row : r.per_sequence) CHECK(row.metric == row.baseline);
  CHECK(r.overall == r.baseline_overall);
  CHECK(r.overall > 0.0);

  // Overall equals the frame-weighted mean of the sequence rows.
  double acc = 0;
  size_t frames = 0;
  for (const auto& row : r.per_sequence) {
    acc += row.metric * double(row.frames);
    frames += row.frames;
  }
  CHECK_THAT(r.overall, Catch::Matchers::WithinRel(acc / double(frames), 1e-14));

  // Zero-level noise equals the clean score; real noise hurts the (zero)
  // model's input but not its constant output, so inputs only matter for
  // a non-trivial model; here the row must still equal clean exactly.
  REQUIRE(r.noise_rows.size() == 2);
  CHECK_THAT(r.noise_rows[0].metric, Catch::Matchers::WithinRel(r.overall, 1e-14));
  CHECK(r.noise_rows[1].metric == r.noise_rows[0].metric);
}

TEST_CASE("noise rows respond to the inputs for a non-constant model") {
  const GeneratedDataset& ds = shared_dataset();
  FullConfig fc = tiny_full();
  ModelConfig mcfg = fc.model_for(ds, 2);
  ModelParams<float> params(mcfg);
  Rng rng(3);
  params.init(rng);
  for (auto& v : params.out_w.value) v = float(rng.normal(0.0, 0.01));

  EvalOptions opt;
  opt.noise_seeds = 2;
  std::vector<NoiseSpec> grid = {{NoiseKind::gaussian, 0.0},
                                 {NoiseKind::gaussian, 1.0}};
  EvalReport r = evaluate_model(params, ds, grid, opt);
  CHECK_THAT(r.noise_rows[0].metric, Catch::Matchers::WithinRel(r.overall, 1e-14));
  // Heavy input noise must change the score of a model that reads its input.
  CHECK(r.noise_rows[1].metric != r.noise_rows[0].metric);
}

TEST_CASE("evaluate_model is deterministic") {
  const GeneratedDataset& ds = shared_dataset();
  FullConfig fc = tiny_full();
  ModelParams<float> params(fc.model_for(ds, 2));
  Rng rng(9);
  params.init(rng);
  EvalOptions opt;
  EvalReport a = evaluate_model(params, ds, default_noise_grid(), opt);
  EvalReport b = evaluate_model(params, ds, default_noise_grid(), opt);
  CHECK(eval_report_to_json(a) == eval_report_to_json(b));
}

TEST_CASE("report writers produce JSON and CSV") {
  const GeneratedDataset& ds = shared_dataset();
  FullConfig fc = tiny_full();
  ModelParams<float> params(fc.model_for(ds, 2));
  EvalOptions opt;
  opt.noise_seeds = 1;
  EvalReport r = evaluate_model(params, ds, {{NoiseKind::dropout, 0.1}}, opt);

  fs::path dir = temp_dir("writers");
  write_eval_report(r, dir.string());

  std::ifstream jin(dir / "report.json");
  REQUIRE(jin);
  nlohmann::json j;
  jin >> j;
  CHECK(j.at("metric") == "mean_vertex_error");
  CHECK(j.at("per_sequence").size() == r.per_sequence.size());
  CHECK(j.at("noise_rows").size() == 1);
  CHECK(j.at("overall").get<double>() == r.overall);

  std::ifstream cin_(dir / "report.csv");
  REQUIRE(cin_);
  size_t lines = 0;
  std::string line;
  bool header_seen = false;
  while (std::getline(cin_, line)) {
    if (lines == 0)
      header_seen = line.rfind("row,split,subject,sentence", 0) == 0 &&
                    line.find("mean_vertex_error") != std::string::npos;
    ++lines;
  }
  CHECK(header_seen);
  CHECK(lines == 1 + r.per_sequence.size() + r.per_speaker.size() + 1 + 1);
}

TEST_CASE("per-vertex CSVs are written only when asked") {
  const GeneratedDataset& ds = shared_dataset();
  FullConfig fc = tiny_full();
  ModelParams<float> params(fc.model_for(ds, 2));

  fs::path dir = temp_dir("pervertex");
  EvalOptions opt;
  opt.noise_seeds = 1;
  evaluate_model(params, ds, {}, opt);
  CHECK_FALSE(fs::exists(dir / "per_vertex"));

  opt.per_vertex_csv = true;
  opt.per_vertex_dir = (dir / "per_vertex").string();
  evaluate_model(params, ds, {}, opt);
  REQUIRE(fs::exists(dir / "per_vertex"));
  size_t files = 0, expected_lines = tiny_synth().vertices + 1;
  for (const auto& entry : fs::directory_iterator(dir / "per_vertex")) {
    ++files;
    std::ifstream in(entry.path());
    size_t lines = 0;
    std::string line;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == expected_lines);
  }
  // Every val/test frame gets one file.
  CHECK(files == 2 * tiny_synth().frames);
}

TEST_CASE("ls oracle beats the baseline in-sample and stays sane held out") {
  const GeneratedDataset& ds = shared_dataset();
  LsOracle oracle = ls_oracle(ds, ds.split.train, ds.split.test, 0);
  CHECK(std::isfinite(oracle.fit_residual));
  CHECK(std::isfinite(oracle.eval_metric));
  CHECK(oracle.fit_residual > 0.0);

  // Baseline on the fit set: mean displacement magnitude of train frames.
  double base_acc = 0.0;
  size_t base_frames = 0;
  char buf[64];
  for (const auto& man : ds.split.train) {
    Mesh tmpl = load_mesh(resolve_path(ds, man.template_path));
    for (size_t f = 0; f < man.frame_count; ++f) {
      std::snprintf(buf, sizeof buf, "frame_%06zu.obj", f);
      Mesh y = load_mesh(resolve_path(ds, man.mesh_dir) + "/" + buf);
      base_acc += mse_metric(tmpl, y);
      ++base_frames;
    }
  }
  double baseline = base_acc / double(base_frames);
  CHECK(oracle.fit_residual < baseline);

  // Determinism.
  LsOracle again = ls_oracle(ds, ds.split.train, ds.split.test, 0);
  CHECK(again.fit_residual == oracle.fit_residual);
  CHECK(again.eval_metric == oracle.eval_metric);
}
