#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gdpnet/data.hpp"
#include "gdpnet/eval.hpp"
#include "gdpnet/model.hpp"

namespace gdpnet {

struct TrainConfig {
  size_t epochs = 50;
  size_t batch_size = 32;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  char variant = 'f';
  uint64_t seed = 42;
  bool deterministic = false;  // report wall_seconds as 0 so logs are byte-stable
  LossWeights weights;
  HuberParams huber;
  KernelSpec kernel1, kernel2;

  void validate() const {
    if (epochs == 0 || batch_size == 0) throw_usage("train config: epochs and batch_size must be positive");
    if (lr <= 0.0) throw_usage("train config: lr must be positive");
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw_usage("train config: betas must lie in [0, 1)");
    if (variant < 'a' || variant > 'f')
      throw_usage(std::string("train config: unknown variant '") + variant + "'");
  }
};

struct EvalConfig {
  size_t cond_subject = 0;
  size_t noise_seeds = 3;
  uint64_t seed = 999;
  bool per_vertex_csv = false;
  std::vector<NoiseSpec> grid = default_noise_grid();
};

struct FullConfig {
  SynthConfig data;
  // Model sizes the user may tune; W/D/S/N always come from the dataset,
  // and dense/attention/constraint from the training variant.
  size_t latent_dim = 64;
  size_t base_filters = 32;
  size_t pca_rank = 50;
  size_t decoder_hidden = 256;
  AttentionOrder attention_order = AttentionOrder::paper_literal;
  TrainConfig train;
  EvalConfig eval;

  ModelConfig model_for(const GeneratedDataset& ds, size_t train_subject_count) const {
    ModelConfig m;
    m.W = ds.cfg.window;
    m.D = ds.cfg.audio_dim;
    m.S = train_subject_count;
    m.N = ds.cfg.vertices;
    m.latent_dim = latent_dim;
    m.base_filters = base_filters;
    m.pca_rank = pca_rank;
    m.decoder_hidden = decoder_hidden;
    m.attention_order = attention_order;
    apply_variant(m, train.variant);
    return m;
  }
};

// -------- JSON round trips --------

inline nlohmann::json kernel_to_json(const KernelSpec& k) {
  return {{"kind", k.kind == KernelKind::rbf ? "rbf" : "linear"},
          {"bandwidth", k.bandwidth}};
}

inline KernelSpec kernel_from_json(const nlohmann::json& j) {
  KernelSpec k;
  if (j.contains("kind")) {
    std::string s = j.at("kind").get<std::string>();
    if (s == "rbf") k.kind = KernelKind::rbf;
    else if (s == "linear") k.kind = KernelKind::linear;
    else throw_usage("config: unknown kernel kind \"" + s + "\"");
  }
  if (j.contains("bandwidth")) k.bandwidth = j.at("bandwidth").get<double>();
  return k;
}

// Complete model description, used in checkpoint headers so a saved model
// can be rebuilt without the dataset.
inline nlohmann::json model_config_to_json(const ModelConfig& m) {
  return {{"W", m.W},
          {"D", m.D},
          {"S", m.S},
          {"N", m.N},
          {"latent_dim", m.latent_dim},
          {"base_filters", m.base_filters},
          {"pca_rank", m.pca_rank},
          {"decoder_hidden", m.decoder_hidden},
          {"dense", m.dense},
          {"attention", m.attention},
          {"attention_order", attention_order_name(m.attention_order)},
          {"constraint_mode", constraint_mode_name(m.constraint_mode)}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig m;
  m.W = j.at("W").get<size_t>();
  m.D = j.at("D").get<size_t>();
  m.S = j.at("S").get<size_t>();
  m.N = j.at("N").get<size_t>();
  m.latent_dim = j.at("latent_dim").get<size_t>();
  m.base_filters = j.at("base_filters").get<size_t>();
  m.pca_rank = j.at("pca_rank").get<size_t>();
  m.decoder_hidden = j.at("decoder_hidden").get<size_t>();
  m.dense = j.at("dense").get<bool>();
  m.attention = j.at("attention").get<bool>();
  m.attention_order = attention_order_from(j.at("attention_order").get<std::string>());
  m.constraint_mode = constraint_mode_from(j.at("constraint_mode").get<std::string>());
  m.validate();
  return m;
}

inline nlohmann::json train_config_to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"lr", t.lr},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"eps", t.eps},
          {"variant", std::string(1, t.variant)},
          {"seed", t.seed},
          {"deterministic", t.deterministic},
          {"lambda1", t.weights.lambda1},
          {"lambda2", t.weights.lambda2},
          {"huber_xi", t.huber.xi},
          {"kernel1", kernel_to_json(t.kernel1)},
          {"kernel2", kernel_to_json(t.kernel2)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig t;
  if (j.contains("epochs")) t.epochs = j.at("epochs").get<size_t>();
  if (j.contains("batch_size")) t.batch_size = j.at("batch_size").get<size_t>();
  if (j.contains("lr")) t.lr = j.at("lr").get<double>();
  if (j.contains("beta1")) t.beta1 = j.at("beta1").get<double>();
  if (j.contains("beta2")) t.beta2 = j.at("beta2").get<double>();
  if (j.contains("eps")) t.eps = j.at("eps").get<double>();
  if (j.contains("variant")) {
    std::string v = j.at("variant").get<std::string>();
    if (v.size() != 1) throw_usage("config: variant must be a single letter a..f");
    t.variant = v[0];
  }
  if (j.contains("seed")) t.seed = j.at("seed").get<uint64_t>();
  if (j.contains("deterministic")) t.deterministic = j.at("deterministic").get<bool>();
  if (j.contains("lambda1")) t.weights.lambda1 = j.at("lambda1").get<double>();
  if (j.contains("lambda2")) t.weights.lambda2 = j.at("lambda2").get<double>();
  if (j.contains("huber_xi")) t.huber.xi = j.at("huber_xi").get<double>();
  if (j.contains("kernel1")) t.kernel1 = kernel_from_json(j.at("kernel1"));
  if (j.contains("kernel2")) t.kernel2 = kernel_from_json(j.at("kernel2"));
  t.validate();
  return t;
}

inline nlohmann::json full_config_to_json(const FullConfig& c) {
  nlohmann::json grid = nlohmann::json::array();
  for (const auto& g : c.eval.grid)
    grid.push_back({{"kind", noise_kind_name(g.kind)}, {"level", g.level}});
  return {{"data",
           {{"subjects", c.data.subjects},
            {"sentences", c.data.sentences},
            {"frames", c.data.frames},
            {"vertices", c.data.vertices},
            {"blendshapes", c.data.blendshapes},
            {"window", c.data.window},
            {"audio_dim", c.data.audio_dim},
            {"fps", c.data.fps},
            {"noise_floor", c.data.noise_floor},
            {"seed", c.data.seed}}},
          {"model",
           {{"latent_dim", c.latent_dim},
            {"base_filters", c.base_filters},
            {"pca_rank", c.pca_rank},
            {"decoder_hidden", c.decoder_hidden},
            {"attention_order", attention_order_name(c.attention_order)}}},
          {"train", train_config_to_json(c.train)},
          {"eval",
           {{"cond_subject", c.eval.cond_subject},
            {"noise_seeds", c.eval.noise_seeds},
            {"seed", c.eval.seed},
            {"per_vertex_csv", c.eval.per_vertex_csv},
            {"grid", grid}}}};
}

namespace detail {

// Every key in j must also exist in the reference produced by serializing
// defaults; config typos fail loudly instead of being ignored.
inline void reject_unknown_keys(const nlohmann::json& j, const nlohmann::json& ref,
                                const std::string& prefix) {
  if (!j.is_object()) return;
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!ref.is_object() || !ref.contains(key))
      throw_usage("config: unknown key \"" + path + "\"");
    if (value.is_object()) reject_unknown_keys(value, ref.at(key), path);
  }
}

}  // namespace detail

inline FullConfig full_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown_keys(j, full_config_to_json(FullConfig{}), "");
  FullConfig c;
  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (d.contains("subjects")) c.data.subjects = d.at("subjects").get<size_t>();
    if (d.contains("sentences")) c.data.sentences = d.at("sentences").get<size_t>();
    if (d.contains("frames")) c.data.frames = d.at("frames").get<size_t>();
    if (d.contains("vertices")) c.data.vertices = d.at("vertices").get<size_t>();
    if (d.contains("blendshapes")) c.data.blendshapes = d.at("blendshapes").get<size_t>();
    if (d.contains("window")) c.data.window = d.at("window").get<size_t>();
    if (d.contains("audio_dim")) c.data.audio_dim = d.at("audio_dim").get<size_t>();
    if (d.contains("fps")) c.data.fps = d.at("fps").get<double>();
    if (d.contains("noise_floor")) c.data.noise_floor = d.at("noise_floor").get<double>();
    if (d.contains("seed")) c.data.seed = d.at("seed").get<uint64_t>();
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    if (m.contains("latent_dim")) c.latent_dim = m.at("latent_dim").get<size_t>();
    if (m.contains("base_filters")) c.base_filters = m.at("base_filters").get<size_t>();
    if (m.contains("pca_rank")) c.pca_rank = m.at("pca_rank").get<size_t>();
    if (m.contains("decoder_hidden")) c.decoder_hidden = m.at("decoder_hidden").get<size_t>();
    if (m.contains("attention_order"))
      c.attention_order = attention_order_from(m.at("attention_order").get<std::string>());
  }
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    if (e.contains("cond_subject")) c.eval.cond_subject = e.at("cond_subject").get<size_t>();
    if (e.contains("noise_seeds")) c.eval.noise_seeds = e.at("noise_seeds").get<size_t>();
    if (e.contains("seed")) c.eval.seed = e.at("seed").get<uint64_t>();
    if (e.contains("per_vertex_csv")) c.eval.per_vertex_csv = e.at("per_vertex_csv").get<bool>();
    if (e.contains("grid")) {
      c.eval.grid.clear();
      for (const auto& g : e.at("grid")) {
        NoiseSpec spec;
        spec.kind = noise_kind_from(g.at("kind").get<std::string>());
        spec.level = g.at("level").get<double>();
        c.eval.grid.push_back(spec);
      }
    }
  }
  c.data.validate();
  c.train.validate();
  return c;
}

// Applies one "dotted.path=value" override onto the JSON form. The value
// text is parsed as JSON when it is valid JSON (numbers, bools, arrays),
// otherwise taken as a bare string.
inline void apply_override(nlohmann::json& j, const std::string& assignment) {
  const size_t eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw_usage("--set expects key.path=value, got \"" + assignment + "\"");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  nlohmann::json* node = &j;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(start, dot - start);
    if (key.empty()) throw_usage("--set: empty key segment in \"" + path + "\"");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

// config file (optional) + --set overrides -> validated FullConfig.
inline FullConfig resolve_config(const std::string& config_path,
                                 const std::vector<std::string>& overrides) {
  nlohmann::json j = nlohmann::json::object();
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw_usage("cannot open config file " + config_path);
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw_data("config parse error in " + config_path + ": " + e.what());
    }
    if (!j.is_object()) throw_data("config file " + config_path + " must hold a JSON object");
  }
  for (const auto& ov : overrides) apply_override(j, ov);
  return full_config_from_json(j);
}

// The effective config is echoed next to every artifact an operation
// writes, so a directory is self-describing.
inline void write_effective_config(const FullConfig& c, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::ofstream out(fs::path(dir) / "config.json", std::ios::binary);
  if (!out) throw_data("cannot write config.json in " + dir);
  out << full_config_to_json(c).dump(2) << "\n";
}

}  // namespace gdpnet
