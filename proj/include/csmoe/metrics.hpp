// SPDX-License-Identifier: Apache-2.0
//
// Levenshtein scoring for code-switched output: CER over language-A units,
// WER over language-B units, MER over the mixed stream, BER over run-length
// language tag sequences (errors / reference tag count).

#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csmoe/vocab.hpp"
#include "json.hpp"

namespace csmoe {

struct EditResult {
  int distance = 0;
  int insertions = 0;
  int substitutions = 0;
  int deletions = 0;
};

enum class EditOp { Match, Substitute, Insert, Delete };

// Unit-cost alignment; ties resolved substitution > insertion > deletion.
EditResult edit_distance(std::span<const int> ref, std::span<const int> hyp);
std::vector<EditOp> edit_alignment(std::span<const int> ref, std::span<const int> hyp);

struct ErrorCounts {
  long insertions = 0;
  long substitutions = 0;
  long deletions = 0;
  long ref_length = 0;

  long errors() const { return insertions + substitutions + deletions; }
  // Undefined (nullopt) for an empty reference.
  std::optional<double> rate() const;
  ErrorCounts& operator+=(const ErrorCounts& o);
  ErrorCounts& operator+=(const EditResult& e);
};

struct ScoreReport {
  ErrorCounts cer;
  ErrorCounts wer;
  ErrorCounts mer;
  ErrorCounts ber;
  long utterances = 0;

  ScoreReport& operator+=(const ScoreReport& o);
};

// A scored token stream: lexical units with their language.
struct TaggedTokens {
  std::vector<int> tokens;
  std::vector<Lang> langs;
};

// Drops reserved ids (boundary tags, <eos>, ...) and attaches the language
// of every remaining unit from the vocabulary partition.
TaggedTokens tag_by_vocabulary(std::span<const int> ids, const Vocab& vocab);
// <CN>/<EN> tags emitted in a decoded sequence, merged into runs.
std::vector<Lang> emitted_boundary_tags(std::span<const int> ids);

// Scores one utterance. Reserved ids in either stream are ignored for
// CER/WER/MER. BER compares run-length tag sequences inferred from the
// token languages unless `hyp_tags` supplies decoder-emitted tags.
ScoreReport score(const TaggedTokens& ref, const TaggedTokens& hyp,
                  const std::optional<std::vector<Lang>>& hyp_tags = std::nullopt);

// 100 * (before - after) / before
double relative_reduction(double before, double after);

nlohmann::json to_json(const ScoreReport& report);
std::string alignment_report(std::span<const int> ref, std::span<const int> hyp, const Vocab& vocab);

}  // namespace csmoe
