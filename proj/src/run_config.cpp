// SPDX-License-Identifier: Apache-2.0

#include "csmoe/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "csmoe/errors.hpp"

namespace csmoe {

void TrainConfig::validate() const {
  model.validate();
  weights.validate();
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
  if (!(final_lr_scale >= 0.0 && final_lr_scale <= 1.0)) throw ConfigError("final_lr_scale must lie in [0, 1]");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_decode_len < 1) throw ConfigError("max_decode_len must be >= 1");
}

void ExperimentConfig::validate() const {
  train.validate();
  data.validate();
  if (corpus.train < 1 || corpus.test < 1 || corpus.dev < 0) throw ConfigError("corpus sizes must be positive");
  if (data.cn_vocab != train.model.cn_vocab || data.en_vocab != train.model.en_vocab) {
    throw ConfigError("data and model vocabulary sizes differ");
  }
  if (data.feature_dim != train.model.encoder.d_model) {
    throw ConfigError("data.feature_dim must equal encoder.d_model");
  }
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& v) {
  T out{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("'" + v + "' is not a valid number");
  return out;
}

bool parse_bool(const std::string& v) {
  if (v == "true") return true;
  if (v == "false") return false;
  throw ConfigError("'" + v + "' is not true/false");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

std::map<std::string, Setter> setters() {
  std::map<std::string, Setter> s;
  auto i = [&s](const std::string& key, auto field) {
    s[key] = [field](ExperimentConfig& c, const std::string& v) { field(c) = parse_number<int>(v); };
  };
  auto d = [&s](const std::string& key, auto field) {
    s[key] = [field](ExperimentConfig& c, const std::string& v) { field(c) = parse_number<double>(v); };
  };
  auto b = [&s](const std::string& key, auto field) {
    s[key] = [field](ExperimentConfig& c, const std::string& v) { field(c) = parse_bool(v); };
  };
  using C = ExperimentConfig;
  i("model.cn_vocab", [](C& c) -> int& { return c.train.model.cn_vocab; });
  i("model.en_vocab", [](C& c) -> int& { return c.train.model.en_vocab; });
  b("model.use_moe_adapter", [](C& c) -> bool& { return c.train.model.use_moe_adapter; });
  b("model.use_cla", [](C& c) -> bool& { return c.train.model.use_cla; });
  b("model.use_bat", [](C& c) -> bool& { return c.train.model.use_bat; });
  i("encoder.num_layers", [](C& c) -> int& { return c.train.model.encoder.num_layers; });
  i("encoder.d_model", [](C& c) -> int& { return c.train.model.encoder.d_model; });
  i("encoder.d_ff", [](C& c) -> int& { return c.train.model.encoder.d_ff; });
  i("encoder.num_heads", [](C& c) -> int& { return c.train.model.encoder.num_heads; });
  i("encoder.d_adapter", [](C& c) -> int& { return c.train.model.encoder.d_adapter; });
  d("encoder.eps", [](C& c) -> double& { return c.train.model.encoder.eps; });
  i("decoder.num_layers", [](C& c) -> int& { return c.train.model.decoder.num_layers; });
  i("decoder.d_model", [](C& c) -> int& { return c.train.model.decoder.d_model; });
  i("decoder.d_ff", [](C& c) -> int& { return c.train.model.decoder.d_ff; });
  i("decoder.num_heads", [](C& c) -> int& { return c.train.model.decoder.num_heads; });
  i("boundary.d_a", [](C& c) -> int& { return c.train.model.boundary.d_a; });
  i("boundary.d_r", [](C& c) -> int& { return c.train.model.boundary.d_r; });
  d("loss.ce", [](C& c) -> double& { return c.train.weights.ce; });
  d("loss.ctc", [](C& c) -> double& { return c.train.weights.ctc; });
  d("loss.cla", [](C& c) -> double& { return c.train.weights.cla; });
  d("loss.boundary", [](C& c) -> double& { return c.train.weights.boundary; });
  d("train.learning_rate", [](C& c) -> double& { return c.train.learning_rate; });
  d("train.momentum", [](C& c) -> double& { return c.train.momentum; });
  d("train.clip_norm", [](C& c) -> double& { return c.train.clip_norm; });
  d("train.final_lr_scale", [](C& c) -> double& { return c.train.final_lr_scale; });
  i("train.epochs", [](C& c) -> int& { return c.train.epochs; });
  s["train.max_steps"] = [](C& c, const std::string& v) { c.train.max_steps = parse_number<long>(v); };
  i("train.batch_size", [](C& c) -> int& { return c.train.batch_size; });
  s["train.seed"] = [](C& c, const std::string& v) { c.train.seed = parse_number<std::uint64_t>(v); };
  i("train.max_decode_len", [](C& c) -> int& { return c.train.max_decode_len; });
  i("data.cn_vocab", [](C& c) -> int& { return c.data.cn_vocab; });
  i("data.en_vocab", [](C& c) -> int& { return c.data.en_vocab; });
  i("data.min_frames_per_token", [](C& c) -> int& { return c.data.min_frames_per_token; });
  i("data.max_frames_per_token", [](C& c) -> int& { return c.data.max_frames_per_token; });
  i("data.max_switches", [](C& c) -> int& { return c.data.max_switches; });
  i("data.min_tokens", [](C& c) -> int& { return c.data.min_tokens; });
  i("data.max_tokens", [](C& c) -> int& { return c.data.max_tokens; });
  i("data.feature_dim", [](C& c) -> int& { return c.data.feature_dim; });
  d("data.noise_std", [](C& c) -> double& { return c.data.noise_std; });
  d("data.language_offset", [](C& c) -> double& { return c.data.language_offset; });
  d("data.cross_lingual_similarity", [](C& c) -> double& { return c.data.cross_lingual_similarity; });
  s["data.seed"] = [](C& c, const std::string& v) { c.data.seed = parse_number<std::uint64_t>(v); };
  i("corpus.train", [](C& c) -> int& { return c.corpus.train; });
  i("corpus.dev", [](C& c) -> int& { return c.corpus.dev; });
  i("corpus.test", [](C& c) -> int& { return c.corpus.test; });
  return s;
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& text) {
  static const auto table = setters();
  ExperimentConfig config;
  std::istringstream in(text);
  std::string raw, section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (key.find('.') == std::string::npos) {
      if (section.empty()) throw ConfigError(where + "key '" + key + "' outside a section");
      key = section + "." + key;
    }
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
    try {
      it->second(config, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + key + ": " + e.what());
    }
  }
  config.validate();
  return config;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_experiment_config(text.str());
}

nlohmann::json to_json(const TrainConfig& c) {
  const ModelConfig& m = c.model;
  return {
      {"model",
       {{"cn_vocab", m.cn_vocab},
        {"en_vocab", m.en_vocab},
        {"use_moe_adapter", m.use_moe_adapter},
        {"use_cla", m.use_cla},
        {"use_bat", m.use_bat}}},
      {"encoder",
       {{"num_layers", m.encoder.num_layers},
        {"d_model", m.encoder.d_model},
        {"d_ff", m.encoder.d_ff},
        {"num_heads", m.encoder.num_heads},
        {"d_adapter", m.encoder.d_adapter},
        {"eps", m.encoder.eps}}},
      {"decoder",
       {{"num_layers", m.decoder.num_layers},
        {"d_model", m.decoder.d_model},
        {"d_ff", m.decoder.d_ff},
        {"num_heads", m.decoder.num_heads}}},
      {"boundary", {{"d_a", m.boundary.d_a}, {"d_r", m.boundary.d_r}}},
      {"loss",
       {{"ce", c.weights.ce}, {"ctc", c.weights.ctc}, {"cla", c.weights.cla}, {"boundary", c.weights.boundary}}},
      {"train",
       {{"learning_rate", c.learning_rate},
        {"momentum", c.momentum},
        {"clip_norm", c.clip_norm},
        {"final_lr_scale", c.final_lr_scale},
        {"epochs", c.epochs},
        {"max_steps", c.max_steps},
        {"batch_size", c.batch_size},
        {"seed", c.seed},
        {"max_decode_len", c.max_decode_len}}},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  try {
    TrainConfig c;
    ModelConfig& m = c.model;
    const auto& jm = j.at("model");
    jm.at("cn_vocab").get_to(m.cn_vocab);
    jm.at("en_vocab").get_to(m.en_vocab);
    jm.at("use_moe_adapter").get_to(m.use_moe_adapter);
    jm.at("use_cla").get_to(m.use_cla);
    jm.at("use_bat").get_to(m.use_bat);
    const auto& je = j.at("encoder");
    je.at("num_layers").get_to(m.encoder.num_layers);
    je.at("d_model").get_to(m.encoder.d_model);
    je.at("d_ff").get_to(m.encoder.d_ff);
    je.at("num_heads").get_to(m.encoder.num_heads);
    je.at("d_adapter").get_to(m.encoder.d_adapter);
    je.at("eps").get_to(m.encoder.eps);
    const auto& jd = j.at("decoder");
    jd.at("num_layers").get_to(m.decoder.num_layers);
    jd.at("d_model").get_to(m.decoder.d_model);
    jd.at("d_ff").get_to(m.decoder.d_ff);
    jd.at("num_heads").get_to(m.decoder.num_heads);
    j.at("boundary").at("d_a").get_to(m.boundary.d_a);
    j.at("boundary").at("d_r").get_to(m.boundary.d_r);
    const auto& jl = j.at("loss");
    jl.at("ce").get_to(c.weights.ce);
    jl.at("ctc").get_to(c.weights.ctc);
    jl.at("cla").get_to(c.weights.cla);
    jl.at("boundary").get_to(c.weights.boundary);
    const auto& jt = j.at("train");
    jt.at("learning_rate").get_to(c.learning_rate);
    jt.at("momentum").get_to(c.momentum);
    jt.at("clip_norm").get_to(c.clip_norm);
    jt.at("final_lr_scale").get_to(c.final_lr_scale);
    jt.at("epochs").get_to(c.epochs);
    jt.at("max_steps").get_to(c.max_steps);
    jt.at("batch_size").get_to(c.batch_size);
    jt.at("seed").get_to(c.seed);
    jt.at("max_decode_len").get_to(c.max_decode_len);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
}

}  // namespace csmoe
