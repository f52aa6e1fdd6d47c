// SPDX-License-Identifier: Apache-2.0

#include "csmoe/metrics.hpp"

#include <algorithm>
#include <sstream>

#include "csmoe/boundary.hpp"
#include "csmoe/errors.hpp"

namespace csmoe {

namespace {

std::vector<int> distance_table(std::span<const int> ref, std::span<const int> hyp) {
  const std::size_t n = ref.size(), m = hyp.size();
  std::vector<int> dp((n + 1) * (m + 1));
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  for (std::size_t i = 0; i <= n; ++i) dp[at(i, 0)] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) dp[at(0, j)] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i)
    for (std::size_t j = 1; j <= m; ++j)
      dp[at(i, j)] = std::min({dp[at(i - 1, j - 1)] + (ref[i - 1] == hyp[j - 1] ? 0 : 1), dp[at(i, j - 1)] + 1,
                               dp[at(i - 1, j)] + 1});
  return dp;
}

}  // namespace

std::vector<EditOp> edit_alignment(std::span<const int> ref, std::span<const int> hyp) {
  const auto dp = distance_table(ref, hyp);
  const std::size_t m = hyp.size();
  auto at = [m](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  std::vector<EditOp> ops;
  std::size_t i = ref.size(), j = hyp.size();
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const bool same = ref[i - 1] == hyp[j - 1];
      if (dp[at(i, j)] == dp[at(i - 1, j - 1)] + (same ? 0 : 1)) {
        ops.push_back(same ? EditOp::Match : EditOp::Substitute);
        --i, --j;
        continue;
      }
    }
    if (j > 0 && dp[at(i, j)] == dp[at(i, j - 1)] + 1) {
      ops.push_back(EditOp::Insert);
      --j;
    } else {
      ops.push_back(EditOp::Delete);
      --i;
    }
  }
  std::reverse(ops.begin(), ops.end());
  return ops;
}

EditResult edit_distance(std::span<const int> ref, std::span<const int> hyp) {
  EditResult r;
  for (EditOp op : edit_alignment(ref, hyp)) {
    switch (op) {
      case EditOp::Match: break;
      case EditOp::Substitute: ++r.substitutions; break;
      case EditOp::Insert: ++r.insertions; break;
      case EditOp::Delete: ++r.deletions; break;
    }
  }
  r.distance = r.insertions + r.substitutions + r.deletions;
  return r;
}

std::optional<double> ErrorCounts::rate() const {
  if (ref_length == 0) return std::nullopt;
  return static_cast<double>(errors()) / static_cast<double>(ref_length);
}

ErrorCounts& ErrorCounts::operator+=(const ErrorCounts& o) {
  insertions += o.insertions;
  substitutions += o.substitutions;
  deletions += o.deletions;
  ref_length += o.ref_length;
  return *this;
}

ErrorCounts& ErrorCounts::operator+=(const EditResult& e) {
  insertions += e.insertions;
  substitutions += e.substitutions;
  deletions += e.deletions;
  return *this;
}

ScoreReport& ScoreReport::operator+=(const ScoreReport& o) {
  cer += o.cer;
  wer += o.wer;
  mer += o.mer;
  ber += o.ber;
  utterances += o.utterances;
  return *this;
}

TaggedTokens tag_by_vocabulary(std::span<const int> ids, const Vocab& vocab) {
  TaggedTokens out;
  for (int id : ids) {
    if (auto lang = vocab.lang_of(id)) {
      out.tokens.push_back(id);
      out.langs.push_back(*lang);
    }
  }
  return out;
}

std::vector<Lang> emitted_boundary_tags(std::span<const int> ids) {
  std::vector<Lang> tags;
  for (int id : ids) {
    if (id == Vocab::kCnTag) tags.push_back(Lang::CN);
    if (id == Vocab::kEnTag) tags.push_back(Lang::EN);
  }
  return compress_runs(tags);
}

namespace {

std::vector<int> lang_stream(const TaggedTokens& t, std::optional<Lang> only) {
  std::vector<int> out;
  for (std::size_t i = 0; i < t.tokens.size(); ++i) {
    if (t.tokens[i] < Vocab::kFirstUnit) continue;
    if (!only || t.langs[i] == *only) out.push_back(t.tokens[i]);
  }
  return out;
}

std::vector<int> tag_ids(const std::vector<Lang>& tags) {
  std::vector<int> ids;
  for (Lang l : tags) ids.push_back(Vocab::tag_token(l));
  return ids;
}

ErrorCounts count(std::span<const int> ref, std::span<const int> hyp) {
  ErrorCounts c;
  c += edit_distance(ref, hyp);
  c.ref_length = static_cast<long>(ref.size());
  return c;
}

}  // namespace

ScoreReport score(const TaggedTokens& ref, const TaggedTokens& hyp, const std::optional<std::vector<Lang>>& hyp_tags) {
  if (ref.tokens.size() != ref.langs.size() || hyp.tokens.size() != hyp.langs.size()) {
    throw ContractError("score: tokens and language tags differ in length");
  }
  ScoreReport r;
  r.utterances = 1;
  r.cer = count(lang_stream(ref, Lang::CN), lang_stream(hyp, Lang::CN));
  r.wer = count(lang_stream(ref, Lang::EN), lang_stream(hyp, Lang::EN));
  r.mer = count(lang_stream(ref, std::nullopt), lang_stream(hyp, std::nullopt));
  const auto ref_tags = tag_ids(compress_runs(ref.langs));
  const auto hyp_tag_ids = tag_ids(hyp_tags ? *hyp_tags : compress_runs(hyp.langs));
  r.ber = count(ref_tags, hyp_tag_ids);
  return r;
}

double relative_reduction(double before, double after) {
  if (before == 0.0) throw ContractError("relative_reduction: baseline rate is zero");
  return 100.0 * (before - after) / before;
}

nlohmann::json to_json(const ScoreReport& report) {
  auto entry = [](const ErrorCounts& c) {
    nlohmann::json j;
    const auto rate = c.rate();
    j["rate"] = rate ? nlohmann::json(*rate) : nlohmann::json(nullptr);
    j["insertions"] = c.insertions;
    j["substitutions"] = c.substitutions;
    j["deletions"] = c.deletions;
    j["ref_length"] = c.ref_length;
    return j;
  };
  nlohmann::json j;
  j["utterances"] = report.utterances;
  j["cer"] = entry(report.cer);
  j["wer"] = entry(report.wer);
  j["mer"] = entry(report.mer);
  j["ber"] = entry(report.ber);
  return j;
}

std::string alignment_report(std::span<const int> ref, std::span<const int> hyp, const Vocab& vocab) {
  std::vector<std::string> top, bottom, marks;
  std::size_t i = 0, j = 0;
  for (EditOp op : edit_alignment(ref, hyp)) {
    std::string r = "*", h = "*", m = " ";
    switch (op) {
      case EditOp::Match: r = vocab.name(ref[i++]); h = vocab.name(hyp[j++]); break;
      case EditOp::Substitute: r = vocab.name(ref[i++]); h = vocab.name(hyp[j++]); m = "S"; break;
      case EditOp::Insert: h = vocab.name(hyp[j++]); m = "I"; break;
      case EditOp::Delete: r = vocab.name(ref[i++]); m = "D"; break;
    }
    const std::size_t w = std::max(r.size(), h.size());
    r.resize(w, ' ');
    h.resize(w, ' ');
    m.resize(w, ' ');
    top.push_back(r);
    bottom.push_back(h);
    marks.push_back(m);
  }
  std::ostringstream os;
  auto line = [&os](const char* label, const std::vector<std::string>& cells) {
    os << label;
    for (const auto& c : cells) os << ' ' << c;
    os << '\n';
  };
  line("REF:", top);
  line("HYP:", bottom);
  line("OPS:", marks);
  return os.str();
}

}  // namespace csmoe
