#include <catch2/catch_amalgamated.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Everything here drives the installed binary through /bin/sh, so the suite
// exercises exactly what a user types: argument parsing, exit codes, and the
// files left behind.

std::string binary_path() {
  const char* env = std::getenv("GDPNET_BIN");
  REQUIRE(env != nullptr);
  REQUIRE(fs::exists(env));
  return env;
}

fs::path tmp_root() {
  fs::path p = fs::temp_directory_path() / "gdpnet_cli_tests";
  fs::create_directories(p);
  return p;
}

struct RunResult {
  int exit_code = -1;
  std::string output;  // stdout and stderr interleaved
};

RunResult run_cli(const std::string& args, const std::string& env_prefix = "") {
  static int counter = 0;
  fs::path log = tmp_root() / ("cmd_" + std::to_string(counter++) + ".log");
  std::string cmd =
      env_prefix + binary_path() + " " + args + " > " + log.string() + " 2>&1";
  int status = std::system(cmd.c_str());
  RunResult r;
#ifdef WIFEXITED
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#else
  r.exit_code = status;
#endif
  std::ifstream in(log);
  r.output.assign((std::istreambuf_iterator<char>(in)), {});
  return r;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

// Small enough that a 2-epoch training finishes in well under a second.
const std::string kTinyData =
    "--set data.subjects=4 --set data.sentences=3 --set data.frames=6"
    " --set data.vertices=42 --set data.blendshapes=3 --set data.window=4"
    " --set data.audio_dim=5 --set data.seed=77";
const std::string kTinyModel =
    "--set model.latent_dim=6 --set model.base_filters=2"
    " --set model.pca_rank=4 --set model.decoder_hidden=8";
const std::string kTinyTrain =
    " --set train.epochs=2 --set train.batch_size=4"
    " --set train.deterministic=true";

// Dataset and one trained run, produced once through the CLI and shared.
const fs::path& fixture_dir() {
  static fs::path dir = [] {
    fs::path d = tmp_root() / "fixture";
    fs::remove_all(d);
    fs::create_directories(d);
    RunResult gen =
        run_cli("gen-data --out " + (d / "ds").string() + " " + kTinyData);
    REQUIRE(gen.exit_code == 0);
    RunResult train = run_cli("train --data " + (d / "ds/index.json").string() +
                              " --out " + (d / "run").string() + " " +
                              kTinyModel + kTinyTrain);
    REQUIRE(train.exit_code == 0);
    return d;
  }();
  return dir;
}

fs::path fresh_dir(const std::string& name) {
  fs::path d = tmp_root() / name;
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("cli: no subcommand and unknown subcommand are usage errors") {
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("frobnicate").exit_code == 1);
  RunResult help = run_cli("--help");
  CHECK(help.exit_code == 0);
  for (const char* sub :
       {"gen-data", "train", "infer", "eval", "gradcheck", "ablate"})
    CHECK(help.output.find(sub) != std::string::npos);
}

TEST_CASE("cli: gen-data writes index plus effective config and honours --force") {
  fs::path out = fresh_dir("gen_force");
  RunResult first = run_cli("gen-data --out " + out.string() + " " + kTinyData);
  REQUIRE(first.exit_code == 0);
  CHECK(fs::exists(out / "index.json"));
  CHECK(fs::exists(out / "config.json"));

  json echoed = json::parse(slurp(out / "config.json"));
  CHECK(echoed["data"]["subjects"] == 4);
  CHECK(echoed["data"]["vertices"] == 42);
  CHECK(echoed["train"]["epochs"] == 50);  // untouched defaults echoed too

  RunResult again = run_cli("gen-data --out " + out.string() + " " + kTinyData);
  CHECK(again.exit_code == 1);
  CHECK(again.output.find("--force") != std::string::npos);
  CHECK(run_cli("gen-data --force --out " + out.string() + " " + kTinyData)
            .exit_code == 0);
}

TEST_CASE("cli: bad overrides are usage errors that name the problem") {
  fs::path out = fresh_dir("gen_badset");
  RunResult unknown = run_cli("gen-data --out " + out.string() +
                              " --set data.subjcts=4");
  CHECK(unknown.exit_code == 1);
  CHECK(unknown.output.find("data.subjcts") != std::string::npos);

  RunResult noeq = run_cli("gen-data --out " + out.string() + " --set data");
  CHECK(noeq.exit_code == 1);

  RunResult badcfg = run_cli("gen-data --out " + out.string() +
                             " --config /nonexistent/cfg.json");
  CHECK(badcfg.exit_code == 1);
}

TEST_CASE("cli: train on a missing dataset is a data error") {
  fs::path out = fresh_dir("train_nods");
  RunResult r =
      run_cli("train --data /nonexistent/index.json --out " + out.string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("index.json") != std::string::npos);
}

TEST_CASE("cli: train leaves checkpoints, metrics, and an effective config") {
  const fs::path& d = fixture_dir();
  CHECK(fs::exists(d / "run/best.ckpt"));
  CHECK(fs::exists(d / "run/last.ckpt"));
  CHECK(fs::exists(d / "run/config.json"));
  std::string csv = slurp(d / "run/metrics.csv");
  CHECK(csv.rfind("epoch,loss,recon,constraint,velocity,val_mse,wall_seconds",
                  0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);  // header + 2 epochs

  json cfg = json::parse(slurp(d / "run/config.json"));
  CHECK(cfg["train"]["epochs"] == 2);
  CHECK(cfg["train"]["deterministic"] == true);
}

TEST_CASE("cli: deterministic training is byte-identical across invocations") {
  const fs::path& d = fixture_dir();
  fs::path out = fresh_dir("train_repeat");
  RunResult r = run_cli("train --data " + (d / "ds/index.json").string() +
                        " --out " + out.string() + " " + kTinyModel +
                        kTinyTrain);
  REQUIRE(r.exit_code == 0);
  CHECK(slurp(out / "last.ckpt") == slurp(d / "run/last.ckpt"));
  CHECK(slurp(out / "best.ckpt") == slurp(d / "run/best.ckpt"));
  CHECK(slurp(out / "metrics.csv") == slurp(d / "run/metrics.csv"));
}

TEST_CASE("cli: infer writes one OBJ per frame with the template topology") {
  const fs::path& d = fixture_dir();
  fs::path out = fresh_dir("infer_out");
  RunResult r = run_cli(
      "infer --checkpoint " + (d / "run/best.ckpt").string() + " --features " +
      (d / "ds/subjects/s00/sentences/t00/features.gdpf").string() +
      " --template " + (d / "ds/subjects/s00/template.obj").string() +
      " --subject 0 --out " + out.string());
  REQUIRE(r.exit_code == 0);
  for (int f = 0; f < 6; ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%06d.obj", f);
    CHECK(fs::exists(out / name));
  }
  CHECK(!fs::exists(out / "frame_000006.obj"));

  auto face_lines = [](const std::string& text) {
    size_t n = text.rfind("f ", 0) == 0 ? 1 : 0;
    for (size_t at = text.find("\nf "); at != std::string::npos;
         at = text.find("\nf ", at + 1))
      ++n;
    return n;
  };
  std::string frame0 = slurp(out / "frame_000000.obj");
  std::string tmpl = slurp(d / "ds/subjects/s00/template.obj");
  CHECK(face_lines(tmpl) == 80);  // 42-vertex icosphere
  CHECK(face_lines(frame0) == face_lines(tmpl));
  CHECK(frame0.rfind("v ", 0) == 0);
}

TEST_CASE("cli: infer subject index outside the train set is rejected") {
  const fs::path& d = fixture_dir();
  fs::path out = fresh_dir("infer_range");
  RunResult r = run_cli(
      "infer --checkpoint " + (d / "run/best.ckpt").string() + " --features " +
      (d / "ds/subjects/s00/sentences/t00/features.gdpf").string() +
      " --template " + (d / "ds/subjects/s00/template.obj").string() +
      " --subject 7 --out " + out.string());
  CHECK(r.exit_code == 1);
  CHECK(r.output.find("out of range") != std::string::npos);
  CHECK(r.output.find("0..1") != std::string::npos);
}

TEST_CASE("cli: infer on a corrupt checkpoint is a data error") {
  const fs::path& d = fixture_dir();
  fs::path bad = fresh_dir("bad_ckpt");
  fs::create_directories(bad);
  std::string bytes = slurp(d / "run/best.ckpt");
  bytes[0] = 'X';
  {
    std::ofstream(bad / "broken.ckpt", std::ios::binary) << bytes;
  }
  RunResult r = run_cli(
      "infer --checkpoint " + (bad / "broken.ckpt").string() + " --features " +
      (d / "ds/subjects/s00/sentences/t00/features.gdpf").string() +
      " --template " + (d / "ds/subjects/s00/template.obj").string() +
      " --subject 0 --out " + (bad / "out").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("magic") != std::string::npos);
}

TEST_CASE("cli: eval writes the report pair and matches the metric label") {
  const fs::path& d = fixture_dir();
  fs::path out = fresh_dir("eval_out");
  RunResult r = run_cli("eval --checkpoint " + (d / "run/best.ckpt").string() +
                        " --data " + (d / "ds/index.json").string() + " --out " +
                        out.string() + " --set eval.noise_seeds=1");
  REQUIRE(r.exit_code == 0);
  CHECK(r.output.find("mean vertex error") != std::string::npos);

  json rep = json::parse(slurp(out / "report.json"));
  CHECK(rep["metric"] == "mean_vertex_error");
  CHECK(rep["overall"].is_number());
  CHECK(rep["baseline_overall"].is_number());

  std::string csv = slurp(out / "report.csv");
  CHECK(csv.rfind("row,split,subject,sentence,kind,level,frames,"
                  "mean_vertex_error,baseline",
                  0) == 0);
}

TEST_CASE("cli: eval rejects a checkpoint trained on a different topology") {
  const fs::path& d = fixture_dir();
  fs::path other = fresh_dir("other_ds");
  RunResult gen = run_cli(
      "gen-data --out " + other.string() + " " + kTinyData +
      " --set data.vertices=12 --set data.blendshapes=2 --set data.seed=5");
  REQUIRE(gen.exit_code == 0);
  RunResult r = run_cli("eval --checkpoint " + (d / "run/best.ckpt").string() +
                        " --data " + (other / "index.json").string() +
                        " --out " + (other / "eval").string());
  CHECK(r.exit_code == 2);
}

TEST_CASE("cli: gradcheck exit codes cover usage, pass, and failure") {
  CHECK(run_cli("gradcheck --samples 0").exit_code == 1);
  CHECK(run_cli("gradcheck --variants q --samples 1").exit_code == 1);

  RunResult ok = run_cli("gradcheck --variants a --samples 1 --seed 3");
  CHECK(ok.exit_code == 0);
  CHECK(ok.output.find("worst relative error") != std::string::npos);

  // An absurd tolerance turns the same run into a numeric failure.
  RunResult fail =
      run_cli("gradcheck --variants a --samples 1 --seed 3 --tolerance 1e-18");
  CHECK(fail.exit_code == 3);
}

TEST_CASE("cli: GDPNET_THREADS must be a positive integer") {
  CHECK(run_cli("gradcheck --variants a --samples 1",
                "GDPNET_THREADS=abc ").exit_code == 1);
  CHECK(run_cli("gradcheck --variants a --samples 1",
                "GDPNET_THREADS=0 ").exit_code == 1);
  CHECK(run_cli("gradcheck --variants a --samples 1",
                "GDPNET_THREADS=1 ").exit_code == 0);
}

TEST_CASE("cli: ablate produces the variant grid from one command") {
  const fs::path& d = fixture_dir();
  fs::path out = fresh_dir("ablate_out");
  RunResult r = run_cli("ablate --data " + (d / "ds/index.json").string() +
                        " --out " + out.string() + " --seeds 1 " + kTinyModel +
                        " --set train.epochs=1 --set train.batch_size=4" +
                        " --set train.deterministic=true");
  REQUIRE(r.exit_code == 0);

  std::string grid = slurp(out / "ablation.csv");
  CHECK(grid.rfind("variant,val_error,test_error,wall_seconds", 0) == 0);
  for (char v = 'a'; v <= 'f'; ++v)
    CHECK(grid.find("\n" + std::string(1, v) + ",") != std::string::npos);
  CHECK(fs::exists(out / "runs.csv"));
  for (char v = 'a'; v <= 'f'; ++v) {
    fs::path run_dir = out / ("run_" + std::string(1, v) + "_seed_0");
    CHECK(fs::exists(run_dir / "last.ckpt"));
  }
}
