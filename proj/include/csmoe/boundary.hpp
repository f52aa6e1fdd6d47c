// SPDX-License-Identifier: Apache-2.0
//
// Boundary-aware predictor. Frame-level encoder output H (T x d) is pooled
// into d_r segment vectors by multi-head self-attention pooling:
//
//   A   = softmax_time(relu(H W1) W2)     T x d_r, each column sums to 1
//   H_B = A^T H                           d_r x d
//
// H_B is scored by a CTC head over the d_r segment positions and by the
// shared decoder against the run-length language tag sequence.

#pragma once

#include <random>
#include <span>
#include <vector>

#include "csmoe/autodiff.hpp"
#include "csmoe/config.hpp"
#include "csmoe/params.hpp"
#include "csmoe/vocab.hpp"

namespace csmoe {

struct BoundaryTargets {
  std::vector<Lang> tags;  // adjacent entries differ

  std::vector<int> ctc_ids() const;      // BoundaryVocab ids
  std::vector<int> decoder_ids() const;  // Vocab::kCnTag / kEnTag
  friend bool operator==(const BoundaryTargets&, const BoundaryTargets&) = default;
};

// Run-length compression of a language sequence.
std::vector<Lang> compress_runs(std::span<const Lang> langs);

// Throws ContractError on empty input and CapacityError when the number of
// segments exceeds d_r.
BoundaryTargets boundary_targets(std::span<const Lang> langs, int d_r);

ad::Var attention_pool_weights(ad::Var h_mix, ad::Var w1, ad::Var w2);
ad::Var segment_pool(ad::Var a, ad::Var h_mix);

struct BoundaryLoss {
  ad::Var total;  // ce + ctc
  ad::Var ctc;
  ad::Var ce;
};

ad::Var combine_boundary(ad::Var ce, ad::Var ctc);

// Boundary CTC over the d_r rows of h_b (head "bat.ctc") plus the shared
// decoder's teacher-forced CE on <sos> tags <eos>.
BoundaryLoss boundary_loss(ad::Tape& tape, ad::Var h_b, const BoundaryTargets& targets, ParamStore& ps,
                           const DecoderConfig& decoder);

void init_boundary_params(ParamStore& ps, int d_model, const BoundaryConfig& config, std::mt19937_64& rng);

}  // namespace csmoe
