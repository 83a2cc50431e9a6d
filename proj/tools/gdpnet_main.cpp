#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gdpnet/config.hpp"
#include "gdpnet/data.hpp"
#include "gdpnet/eval.hpp"
#include "gdpnet/train.hpp"
#include "gdpnet/verify.hpp"

namespace fs = std::filesystem;
using namespace gdpnet;

namespace {

// Exit codes: 0 success, 1 usage, 2 bad data or shapes, 3 numeric failure.
int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::usage: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::shape: return 2;
    case ErrorKind::numeric: return 3;
  }
  return 1;
}

size_t resolve_threads() {
  const char* env = std::getenv("GDPNET_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  long n = std::strtol(env, &end, 10);
  if (!end || *end != '\0' || n < 1)
    throw_usage(std::string("GDPNET_THREADS must be a positive integer, got \"") +
                env + "\"");
  return size_t(n);
}

void ensure_writable_dir(const std::string& dir, bool force) {
  if (fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir) && !force)
    throw_usage("output directory " + dir +
                " is not empty; pass --force to write into it");
  fs::create_directories(dir);
}

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  bool force = false;
};

void add_config_opts(CLI::App* cmd, CommonOpts& o) {
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--set", o.sets, "dotted override, e.g. train.lr=5e-5")
      ->take_all();
}

double test_split_error(const EvalReport& r) {
  double acc = 0;
  size_t frames = 0;
  for (const auto& s : r.per_speaker)
    if (s.split == "test") {
      acc += s.metric * double(s.frames);
      frames += s.frames;
    }
  if (frames == 0) throw_data("no test-split rows in evaluation report");
  return acc / double(frames);
}

int cmd_gen_data(const CommonOpts& o, const std::string& out_dir) {
  FullConfig fc = resolve_config(o.config_path, o.sets);
  ensure_writable_dir(out_dir, o.force);
  GeneratedDataset ds = generate_synthetic_dataset(fc.data, out_dir);
  write_effective_config(fc, out_dir);
  std::printf("generated %zu subjects x %zu sentences x %zu frames, %zu vertices\n",
              fc.data.subjects, fc.data.sentences, fc.data.frames,
              fc.data.vertices);
  std::printf("index: %s\n", ds.index_path.c_str());
  return 0;
}

int cmd_train(const CommonOpts& o, const std::string& data_index,
              const std::string& out_dir, const std::string& resume) {
  FullConfig fc = resolve_config(o.config_path, o.sets);
  GeneratedDataset ds = load_dataset_index(data_index);
  if (resume.empty())
    ensure_writable_dir(out_dir, o.force);
  else
    fs::create_directories(out_dir);
  TrainOutput<float> out = train_model<float>(ds, fc, out_dir, resume);
  write_effective_config(fc, out_dir);
  std::printf("trained variant %c for %zu epochs\n", fc.train.variant,
              fc.train.epochs);
  std::printf("final val error %.9g, best %.9g at epoch %zu\n",
              out.log.empty() ? 0.0 : out.log.back().val_mse, out.best_val,
              out.best_epoch);
  std::printf("checkpoints: %s and %s\n",
              (fs::path(out_dir) / "best.ckpt").string().c_str(),
              (fs::path(out_dir) / "last.ckpt").string().c_str());
  return 0;
}

int cmd_infer(const std::string& ckpt_path, const std::string& features_path,
              const std::string& template_path, long subject,
              const std::string& out_dir, bool force) {
  ModelBundle<float> bundle = load_model_bundle<float>(ckpt_path);
  const ModelConfig& cfg = bundle.cfg;
  if (subject < 0 || size_t(subject) >= cfg.S) {
    std::string ids;
    if (bundle.header.contains("dataset") &&
        bundle.header.at("dataset").contains("train_subjects"))
      for (const auto& s : bundle.header.at("dataset").at("train_subjects"))
        ids += " " + s.get<std::string>();
    throw_usage("subject " + std::to_string(subject) +
                " out of range; valid indices are 0.." + std::to_string(cfg.S - 1) +
                (ids.empty() ? "" : " (train subjects:" + ids + ")"));
  }
  FeatureArray windows = load_feature_file(features_path);
  Mesh tmpl = load_mesh(template_path);
  std::vector<double> tf = tmpl.flat();
  std::vector<float> trow(tf.begin(), tf.end());

  ensure_writable_dir(out_dir, force);
  Tensor2<float> pred =
      predict_sequence(bundle.params, windows, size_t(subject), trow);
  Mesh frame = tmpl;  // keeps the face list
  char buf[64];
  std::vector<double> row(pred.cols);
  for (size_t f = 0; f < pred.rows; ++f) {
    for (size_t i = 0; i < pred.cols; ++i) row[i] = double(pred(f, i));
    frame.set_flat(row);
    std::snprintf(buf, sizeof buf, "frame_%06zu.obj", f);
    write_mesh(frame, (fs::path(out_dir) / buf).string());
  }
  nlohmann::json echo = {{"checkpoint", ckpt_path},
                         {"features", features_path},
                         {"template", template_path},
                         {"subject", subject},
                         {"frames", pred.rows},
                         {"model_config", model_config_to_json(cfg)}};
  std::ofstream cfg_out(fs::path(out_dir) / "config.json", std::ios::binary);
  cfg_out << echo.dump(2) << "\n";
  std::printf("wrote %zu frames to %s\n", pred.rows, out_dir.c_str());
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& ckpt_path,
             const std::string& data_index, const std::string& out_dir) {
  FullConfig fc = resolve_config(o.config_path, o.sets);
  ModelBundle<float> bundle = load_model_bundle<float>(ckpt_path);
  GeneratedDataset ds = load_dataset_index(data_index);
  const std::string ckpt_topo =
      bundle.header.value("dataset", nlohmann::json::object())
          .value("topology_id", "");
  if (!ckpt_topo.empty() && ckpt_topo != ds.topology_id)
    throw_data("topology mismatch: checkpoint was trained on mesh " + ckpt_topo +
               ", dataset has " + ds.topology_id);
  if (bundle.cfg.N != ds.cfg.vertices)
    throw_data("topology mismatch: checkpoint expects " +
               std::to_string(bundle.cfg.N) + " vertices, dataset has " +
               std::to_string(ds.cfg.vertices));
  if (fc.eval.cond_subject >= bundle.cfg.S)
    throw_usage("eval.cond_subject " + std::to_string(fc.eval.cond_subject) +
                " out of range; model has " + std::to_string(bundle.cfg.S) +
                " train subjects");
  ensure_writable_dir(out_dir, o.force);
  EvalOptions opt;
  opt.cond_subject = fc.eval.cond_subject;
  opt.noise_seeds = fc.eval.noise_seeds;
  opt.seed = fc.eval.seed;
  opt.per_vertex_csv = fc.eval.per_vertex_csv;
  opt.per_vertex_dir = (fs::path(out_dir) / "per_vertex").string();
  EvalReport report = evaluate_model(bundle.params, ds, fc.eval.grid, opt);
  write_eval_report(report, out_dir);
  write_effective_config(fc, out_dir);
  std::printf("mean vertex error %.9g (zero-displacement baseline %.9g)\n",
              report.overall, report.baseline_overall);
  for (const auto& n : report.noise_rows)
    std::printf("noise %s %.3g: %.9g\n", n.kind.c_str(), n.level, n.metric);
  std::printf("report: %s\n", (fs::path(out_dir) / "report.json").string().c_str());
  return 0;
}

int cmd_gradcheck(const std::string& variants, size_t samples, uint64_t seed,
                  double tolerance) {
  if (samples == 0) throw_usage("gradcheck: --samples must be at least 1");
  if (variants.empty()) throw_usage("gradcheck: --variants must not be empty");
  for (char v : variants)
    if (v < 'a' || v > 'f')
      throw_usage(std::string("gradcheck: unknown variant '") + v + "' (a..f)");
  double worst = 0.0;
  char worst_variant = '?';
  for (char v : variants) {
    double vworst = 0.0;
    for (size_t s = 0; s < samples; ++s) {
      ModelCheckConfig cc = tiny_check_config(v);
      GradCheckReport<double> rep =
          model_gradient_check<double>(cc, seed_derive(seed, "cli-gradcheck",
                                                       uint64_t(v), s));
      vworst = std::max(vworst, double(rep.worst_rel_err));
    }
    std::printf("variant %c: worst relative error %.3e over %zu seeds\n", v,
                vworst, samples);
    if (vworst > worst) {
      worst = vworst;
      worst_variant = v;
    }
  }
  std::printf("worst relative error %.3e (variant %c, tolerance %.1e)\n", worst,
              worst_variant, tolerance);
  if (worst > tolerance)
    throw_numeric("gradient check failed: worst relative error " +
                  std::to_string(worst) + " exceeds tolerance");
  std::printf("gradient check passed\n");
  return 0;
}

int cmd_ablate(const CommonOpts& o, const std::string& data_index,
               const std::string& out_dir, size_t seeds) {
  if (seeds == 0) throw_usage("ablate: --seeds must be at least 1");
  FullConfig fc = resolve_config(o.config_path, o.sets);
  GeneratedDataset ds = load_dataset_index(data_index);
  ensure_writable_dir(out_dir, o.force);
  write_effective_config(fc, out_dir);

  std::ofstream runs(fs::path(out_dir) / "runs.csv", std::ios::binary);
  runs << "variant,seed,val_error,test_error,wall_seconds\n";
  struct Agg {
    double val = 0, test = 0, wall = 0;
  };
  std::map<char, Agg> table;
  char buf[256];
  for (char v : {'a', 'b', 'c', 'd', 'e', 'f'}) {
    for (size_t i = 0; i < seeds; ++i) {
      FullConfig run_fc = fc;
      run_fc.train.variant = v;
      run_fc.train.seed = fc.train.seed + i;
      std::snprintf(buf, sizeof buf, "run_%c_seed_%zu", v, i);
      const std::string run_dir = (fs::path(out_dir) / buf).string();
      fs::create_directories(run_dir);
      TrainOutput<float> out = train_model<float>(ds, run_fc, run_dir);
      double wall = 0;
      for (const auto& e : out.log) wall += e.wall_seconds;
      EvalOptions opt;
      opt.cond_subject = run_fc.eval.cond_subject;
      EvalReport rep = evaluate_model(out.params, ds, {}, opt);
      const double val = out.log.back().val_mse;
      const double test = test_split_error(rep);
      std::snprintf(buf, sizeof buf, "%c,%llu,%.9g,%.9g,%.9g\n", v,
                    (unsigned long long)run_fc.train.seed, val, test, wall);
      runs << buf << std::flush;
      table[v].val += val / double(seeds);
      table[v].test += test / double(seeds);
      table[v].wall += wall / double(seeds);
      std::printf("variant %c seed %llu: val %.6g test %.6g (%.1fs)\n", v,
                  (unsigned long long)run_fc.train.seed, val, test, wall);
    }
  }
  std::ofstream grid(fs::path(out_dir) / "ablation.csv", std::ios::binary);
  grid << "variant,val_error,test_error,wall_seconds\n";
  std::printf("\nvariant  val_error      test_error     wall_seconds\n");
  for (const auto& [v, agg] : table) {
    std::snprintf(buf, sizeof buf, "%c,%.9g,%.9g,%.9g\n", v, agg.val, agg.test,
                  agg.wall);
    grid << buf;
    std::printf("%c        %-14.6g %-14.6g %.1f\n", v, agg.val, agg.test,
                agg.wall);
  }
  std::printf("grid: %s\n", (fs::path(out_dir) / "ablation.csv").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"speech-driven facial animation pipeline"};
  app.require_subcommand(1);

  CommonOpts gen_o;
  std::string gen_out;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--out", gen_out, "output directory")->required();
  add_config_opts(gen, gen_o);
  gen->add_flag("--force", gen_o.force, "write into a non-empty directory");

  CommonOpts train_o;
  std::string train_data, train_out, train_resume;
  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", train_data, "dataset index.json")->required();
  train->add_option("--out", train_out, "output directory")->required();
  train->add_option("--resume", train_resume, "checkpoint to continue from");
  add_config_opts(train, train_o);
  train->add_flag("--force", train_o.force, "write into a non-empty directory");

  std::string infer_ckpt, infer_features, infer_template, infer_out;
  long infer_subject = 0;
  bool infer_force = false;
  CLI::App* infer = app.add_subcommand("infer", "drive a mesh from features");
  infer->add_option("--checkpoint", infer_ckpt, "trained checkpoint")->required();
  infer->add_option("--features", infer_features, "feature window file")->required();
  infer->add_option("--template", infer_template, "template mesh .obj")->required();
  infer->add_option("--subject", infer_subject, "train-subject one-hot index")
      ->required();
  infer->add_option("--out", infer_out, "output directory")->required();
  infer->add_flag("--force", infer_force, "write into a non-empty directory");

  CommonOpts eval_o;
  std::string eval_ckpt, eval_data, eval_out;
  CLI::App* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--checkpoint", eval_ckpt, "trained checkpoint")->required();
  eval->add_option("--data", eval_data, "dataset index.json")->required();
  eval->add_option("--out", eval_out, "output directory")->required();
  add_config_opts(eval, eval_o);
  eval->add_flag("--force", eval_o.force, "write into a non-empty directory");

  std::string gc_variants = "abcdef";
  size_t gc_samples = 20;
  uint64_t gc_seed = 2024;
  double gc_tol = 1e-4;
  CLI::App* gc = app.add_subcommand("gradcheck",
                                    "finite-difference gradient verification");
  gc->add_option("--variants", gc_variants, "variant letters to check");
  gc->add_option("--samples", gc_samples, "seeds per variant");
  gc->add_option("--seed", gc_seed, "base seed");
  gc->add_option("--tolerance", gc_tol, "relative error tolerance");

  CommonOpts ab_o;
  std::string ab_data, ab_out;
  size_t ab_seeds = 3;
  CLI::App* ab = app.add_subcommand("ablate", "train every variant and tabulate");
  ab->add_option("--data", ab_data, "dataset index.json")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--seeds", ab_seeds, "seeds per variant");
  add_config_opts(ab, ab_o);
  ab->add_flag("--force", ab_o.force, "write into a non-empty directory");

  try {
    app.parse(argc, argv);
    resolve_threads();  // single-threaded build; validates the request
    if (*gen) return cmd_gen_data(gen_o, gen_out);
    if (*train) return cmd_train(train_o, train_data, train_out, train_resume);
    if (*infer)
      return cmd_infer(infer_ckpt, infer_features, infer_template, infer_subject,
                       infer_out, infer_force);
    if (*eval) return cmd_eval(eval_o, eval_ckpt, eval_data, eval_out);
    if (*gc) return cmd_gradcheck(gc_variants, gc_samples, gc_seed, gc_tol);
    if (*ab) return cmd_ablate(ab_o, ab_data, ab_out, ab_seeds);
    throw_usage("no subcommand given");
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
