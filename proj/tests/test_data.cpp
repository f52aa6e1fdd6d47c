#include <filesystem>
#include <fstream>

#include "csmoe/cla.hpp"
#include "csmoe/ctc.hpp"
#include "csmoe/data.hpp"
#include "csmoe/errors.hpp"
#include "doctest.h"

using namespace csmoe;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("csmoe_test_data_" + name);
}

}  // namespace

TEST_CASE("generation is deterministic in (seed, index)") {
  SynthConfig c;
  c.seed = 7;
  const Dataset a = generate_dataset(c, 20), b = generate_dataset(c, 20);
  CHECK(a == b);
  CHECK(generate_utterance(c, 13) == a[13]);
  CHECK(generate_dataset(c, 5, 10)[2] == a[12]);
  c.seed = 8;
  CHECK_FALSE(generate_dataset(c, 20) == a);
}

TEST_CASE("no switches yields monolingual utterances") {
  SynthConfig c;
  c.max_switches = 0;
  for (const Utterance& u : generate_dataset(c, 100)) CHECK(u.boundary_tags.tags.size() == 1);
}

TEST_CASE("generated utterances satisfy the corpus invariants") {
  SynthConfig c;
  const Vocab vocab = c.vocab();
  for (const Utterance& u : generate_dataset(c, 300)) {
    int T = 0;
    for (int d : u.durations) T += d;
    CHECK(T == u.frames());
    CHECK(u.features.cols() == c.feature_dim);
    CHECK(u.tokens.size() == u.langs.size());
    CHECK(u.boundary_tags.tags == compress_runs(u.langs));
    CHECK(u.boundary_tags.tags.size() <= static_cast<std::size_t>(c.max_switches + 1));
    for (std::size_t i = 0; i < u.tokens.size(); ++i) CHECK(vocab.lang_of(u.tokens[i]) == u.langs[i]);
    const MaskedTargets m = mask_targets(u.tokens, u.langs);
    CHECK(u.frames() >= ctc_min_frames(u.tokens));
    CHECK(u.frames() >= ctc_min_frames(m.y_cn));
    CHECK(u.frames() >= ctc_min_frames(m.y_en));
    for (std::size_t i = 0; i < u.tokens.size(); ++i) {
      const bool cn = m.y_cn[i] == u.tokens[i], en = m.y_en[i] == u.tokens[i];
      CHECK(cn != en);
    }
  }
}

TEST_CASE("language offset separates the feature means") {
  SynthConfig c;
  double sum[2] = {0, 0};
  long count[2] = {0, 0};
  for (const Utterance& u : generate_dataset(c, 1000)) {
    const auto fl = u.frame_langs();
    for (int t = 0; t < u.frames(); ++t) {
      const int k = fl[static_cast<std::size_t>(t)] == Lang::CN ? 0 : 1;
      sum[k] += u.features(t, 0);
      ++count[k];
    }
  }
  const double gap = sum[0] / count[0] - sum[1] / count[1];
  CHECK(gap >= 3.0 * c.noise_std);
}

TEST_CASE("config validation") {
  SynthConfig c;
  c.min_frames_per_token = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = SynthConfig{};
  c.max_switches = 7;
  CHECK_THROWS_AS(generate_dataset(c, 1), ConfigError);
  CHECK_THROWS_AS(generate_dataset(SynthConfig{}, 0), ContractError);
}

TEST_CASE("JSONL round trip is bit-exact") {
  const Dataset data = generate_dataset(SynthConfig{}, 25);
  const auto path = temp_path("roundtrip.jsonl");
  write_jsonl(data, path);
  CHECK(read_jsonl(path) == data);
  std::filesystem::remove(path);
}

TEST_CASE("empty file reads as an empty dataset") {
  const auto path = temp_path("empty.jsonl");
  std::ofstream(path).close();
  CHECK(read_jsonl(path).empty());
  std::filesystem::remove(path);
}

TEST_CASE("truncated record reports its line") {
  const Dataset data = generate_dataset(SynthConfig{}, 3);
  const auto path = temp_path("truncated.jsonl");
  {
    std::ofstream out(path);
    out << utterance_to_json(data[0]) << "\n";
    const std::string second = utterance_to_json(data[1]);
    out << second.substr(0, second.size() / 2) << "\n";
  }
  try {
    read_jsonl(path);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::filesystem::remove(path);
}

TEST_CASE("records without durations still load") {
  Utterance u = generate_utterance(SynthConfig{}, 0);
  u.durations.clear();
  const Utterance back = utterance_from_json(utterance_to_json(u), 1);
  CHECK(back == u);
  CHECK(back.frame_langs().empty());
}
