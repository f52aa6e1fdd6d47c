// SPDX-License-Identifier: Apache-2.0

#include "csmoe/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "csmoe/errors.hpp"
#include "json.hpp"

namespace csmoe {

using nlohmann::json;

void SynthConfig::validate() const {
  if (cn_vocab < 2 || en_vocab < 2) throw ConfigError("each language needs at least two units");
  if (min_frames_per_token < 2) throw ConfigError("frames per token must be >= 2");
  if (max_frames_per_token < min_frames_per_token) throw ConfigError("frames-per-token range is empty");
  if (max_switches < 0 || max_switches > 6) throw ConfigError("max_switches must lie in [0, 6]");
  if (min_tokens < 1 || max_tokens < min_tokens) throw ConfigError("token-count range is invalid");
  if (feature_dim < 2) throw ConfigError("feature_dim must be >= 2");
  if (!(noise_std >= 0.0)) throw ConfigError("noise_std must be non-negative");
  if (!(language_offset > 0.0)) throw ConfigError("language_offset must be positive");
  if (cross_lingual_similarity < 0.0 || cross_lingual_similarity > 1.0) {
    throw ConfigError("cross_lingual_similarity must lie in [0, 1]");
  }
}

std::vector<Lang> Utterance::frame_langs() const {
  std::vector<Lang> out;
  if (durations.size() != langs.size()) return out;
  for (std::size_t i = 0; i < langs.size(); ++i) out.insert(out.end(), static_cast<std::size_t>(durations[i]), langs[i]);
  return out;
}

std::vector<int> Utterance::boundary_frames() const {
  const auto fl = frame_langs();
  std::vector<int> out;
  for (std::size_t t = 1; t < fl.size(); ++t)
    if (fl[t] != fl[t - 1]) out.push_back(static_cast<int>(t));
  return out;
}

Matrix unit_prototypes(const SynthConfig& config) {
  config.validate();
  std::seed_seq seq{config.seed, std::uint64_t{0x70726f746fULL}};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int d = config.feature_dim;
  const int n = std::max(config.cn_vocab, config.en_vocab);
  const double rho = config.cross_lingual_similarity;
  const double rest = std::sqrt(1.0 - rho * rho);
  Matrix protos(config.cn_vocab + config.en_vocab, d);
  // Axis 0 carries only the language offset.
  for (int k = 0; k < n; ++k) {
    std::vector<double> shared(static_cast<std::size_t>(d)), cn(static_cast<std::size_t>(d)),
        en(static_cast<std::size_t>(d));
    for (int j = 1; j < d; ++j) {
      shared[static_cast<std::size_t>(j)] = normal(rng);
      cn[static_cast<std::size_t>(j)] = normal(rng);
      en[static_cast<std::size_t>(j)] = normal(rng);
    }
    for (int j = 1; j < d; ++j) {
      const auto js = static_cast<std::size_t>(j);
      if (k < config.cn_vocab) protos(k, j) = rho * shared[js] + rest * cn[js];
      if (k < config.en_vocab) protos(config.cn_vocab + k, j) = rho * shared[js] + rest * en[js];
    }
  }
  return protos;
}

namespace {

Utterance make_utterance(const SynthConfig& config, const Matrix& protos, std::uint64_t index) {
  std::seed_seq seq{config.seed, index};
  std::mt19937_64 rng(seq);
  std::normal_distribution<double> noise(0.0, config.noise_std);
  const Vocab vocab = config.vocab();

  const int n_tokens = std::uniform_int_distribution<int>(config.min_tokens, config.max_tokens)(rng);
  int n_segments = std::uniform_int_distribution<int>(1, config.max_switches + 1)(rng);
  n_segments = std::min(n_segments, n_tokens);
  Lang lang = std::bernoulli_distribution(0.5)(rng) ? Lang::CN : Lang::EN;

  // Random composition of n_tokens into n_segments positive parts.
  std::vector<int> cuts;
  {
    std::vector<int> pool(static_cast<std::size_t>(n_tokens - 1));
    for (int i = 0; i < n_tokens - 1; ++i) pool[static_cast<std::size_t>(i)] = i + 1;
    std::shuffle(pool.begin(), pool.end(), rng);
    cuts.assign(pool.begin(), pool.begin() + (n_segments - 1));
    std::sort(cuts.begin(), cuts.end());
    cuts.push_back(n_tokens);
  }

  Utterance u;
  u.id = "synth-" + std::to_string(config.seed) + "-" + std::to_string(index);
  int prev_unit = -1;
  int begin = 0;
  for (int cut : cuts) {
    const int vsize = lang == Lang::CN ? config.cn_vocab : config.en_vocab;
    for (int i = begin; i < cut; ++i) {
      int k;
      do {
        k = std::uniform_int_distribution<int>(0, vsize - 1)(rng);
      } while (k == prev_unit);
      prev_unit = k;
      u.tokens.push_back(vocab.unit(lang, k));
      u.langs.push_back(lang);
      u.durations.push_back(
          std::uniform_int_distribution<int>(config.min_frames_per_token, config.max_frames_per_token)(rng));
    }
    begin = cut;
    prev_unit = -1;
    lang = lang == Lang::CN ? Lang::EN : Lang::CN;
  }

  int T = 0;
  for (int dur : u.durations) T += dur;
  u.features = Matrix(T, config.feature_dim);
  int t = 0;
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    const int row = u.tokens[i] - Vocab::kFirstUnit;
    const double offset = u.langs[i] == Lang::CN ? config.language_offset : -config.language_offset;
    for (int f = 0; f < u.durations[i]; ++f, ++t) {
      for (int j = 0; j < config.feature_dim; ++j) u.features(t, j) = protos(row, j) + noise(rng);
      u.features(t, 0) += offset;
    }
  }
  u.boundary_tags = BoundaryTargets{compress_runs(u.langs)};
  return u;
}

}  // namespace

Utterance generate_utterance(const SynthConfig& config, std::uint64_t index) {
  return make_utterance(config, unit_prototypes(config), index);
}

Dataset generate_dataset(const SynthConfig& config, int n, std::uint64_t first_index) {
  if (n < 1) throw ContractError("generate_dataset: n must be >= 1");
  const Matrix protos = unit_prototypes(config);
  Dataset out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(make_utterance(config, protos, first_index + static_cast<std::uint64_t>(i)));
  return out;
}

std::string utterance_to_json(const Utterance& u) {
  json j;
  j["id"] = u.id;
  json rows = json::array();
  for (int r = 0; r < u.features.rows(); ++r) {
    auto span = u.features.row_span(r);
    rows.push_back(std::vector<double>(span.begin(), span.end()));
  }
  j["features"] = std::move(rows);
  j["tokens"] = u.tokens;
  std::vector<std::string> langs;
  for (Lang l : u.langs) langs.emplace_back(lang_name(l));
  j["langs"] = langs;
  if (!u.durations.empty()) j["durations"] = u.durations;
  return j.dump();
}

Utterance utterance_from_json(const std::string& text, int line) {
  auto fail = [line](const std::string& why) -> ParseError {
    return ParseError("line " + std::to_string(line) + ": " + why, line);
  };
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw fail(std::string("malformed JSON (") + e.what() + ")");
  }
  try {
    Utterance u;
    u.id = j.at("id").get<std::string>();
    const auto& rows = j.at("features");
    if (!rows.is_array()) throw fail("features must be an array of rows");
    const int T = static_cast<int>(rows.size());
    const int d = T == 0 ? 0 : static_cast<int>(rows.at(0).size());
    u.features = Matrix(T, d);
    for (int r = 0; r < T; ++r) {
      const auto& row = rows.at(static_cast<std::size_t>(r));
      if (static_cast<int>(row.size()) != d) throw fail("ragged feature rows");
      for (int c = 0; c < d; ++c) u.features(r, c) = row.at(static_cast<std::size_t>(c)).get<double>();
    }
    u.tokens = j.at("tokens").get<std::vector<int>>();
    for (const auto& s : j.at("langs").get<std::vector<std::string>>()) u.langs.push_back(parse_lang(s));
    if (u.langs.size() != u.tokens.size()) throw fail("tokens and langs differ in length");
    if (j.contains("durations")) {
      u.durations = j.at("durations").get<std::vector<int>>();
      if (u.durations.size() != u.tokens.size()) throw fail("durations and tokens differ in length");
      int sum = 0;
      for (int dur : u.durations) sum += dur;
      if (sum != T) throw fail("durations do not sum to the frame count");
    }
    u.boundary_tags = BoundaryTargets{compress_runs(u.langs)};
    return u;
  } catch (const json::exception& e) {
    throw fail(std::string("bad utterance record (") + e.what() + ")");
  } catch (const TagError& e) {
    throw fail(e.what());
  }
}

void write_jsonl(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ContractError("cannot create " + path.string());
  for (const auto& u : data) out << utterance_to_json(u) << '\n';
  if (!out) throw ContractError("write failed for " + path.string());
}

Dataset read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ContractError("cannot open " + path.string());
  Dataset out;
  std::string text;
  int line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(utterance_from_json(text, line));
  }
  return out;
}

}  // namespace csmoe
