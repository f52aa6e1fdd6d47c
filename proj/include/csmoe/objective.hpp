// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <vector>

#include "csmoe/autodiff.hpp"
#include "csmoe/config.hpp"
#include "csmoe/data.hpp"
#include "csmoe/params.hpp"

namespace csmoe {

// Fresh parameters for `config`: encoder (with or without adapters), main
// CTC head, CLA heads when use_cla, boundary predictor when use_bat, and the
// decoder.
ParamStore init_model_params(const ModelConfig& config, std::uint64_t seed);

struct LossReport {
  double l_ce = 0.0;
  double l_ctc = 0.0;
  double l_cla = 0.0;
  double l_b = 0.0;
  double total = 0.0;
};

// Counts how often each sub-graph was built.
struct ExecutionCounters {
  long encode = 0;
  long main_ctc = 0;
  long decoder_ce = 0;
  long cla = 0;
  long boundary = 0;

  ExecutionCounters& operator+=(const ExecutionCounters& o);
};

struct LossGraph {
  ad::Var total;
  LossReport report;
};

// Decoder target: the token sequence, with a <CN>/<EN> tag opening every
// language segment when use_bat is set.
std::vector<int> attention_target(const Utterance& u, bool with_boundary_tokens);

// lambda_ce*l_ce + lambda_ctc*l_ctc + lambda_c*l_cla + lambda_b*l_b, summed
// left to right. Zero-weighted or disabled components are not built.
ad::Var weighted_total(ad::Tape& tape, const LossWeights& w, ad::Var ce, ad::Var ctc, ad::Var cla, ad::Var b);

// Encodes once and builds every enabled component on the same tape.
LossGraph total_loss(ad::Tape& tape, const Utterance& utt, ParamStore& ps, const ModelConfig& config,
                     const LossWeights& weights, ExecutionCounters* counters = nullptr);

}  // namespace csmoe
