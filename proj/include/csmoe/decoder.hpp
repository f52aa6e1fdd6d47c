// SPDX-License-Identifier: Apache-2.0
//
// Transformer decoder shared by the ASR branch (memory = encoder frames) and
// the boundary branch (memory = pooled segments). Pre-norm layers of causal
// self-attention, cross-attention and feed-forward. Sinusoidal positions are
// added to the target embeddings and to the memory (frames or segments).

#pragma once

#include <random>
#include <span>
#include <vector>

#include "csmoe/autodiff.hpp"
#include "csmoe/config.hpp"
#include "csmoe/params.hpp"

namespace csmoe {

// Logits (|prefix| x vocab). Row i depends only on prefix[0..i] and memory.
ad::Var decoder_forward(ad::Tape& tape, ad::Var memory, std::span<const int> prefix, ParamStore& ps,
                        const DecoderConfig& config);

// Mean over positions of -log softmax(logits)[target].
ad::Var ce_loss(ad::Var logits, std::span<const int> target);

// <sos> + target and target + <eos>.
std::vector<int> decoder_input(std::span<const int> target);
std::vector<int> decoder_output(std::span<const int> target);

// Position-by-position evaluation with cached keys and values; step(token)
// returns the logits row decoder_forward would give for the last position of
// the prefix fed so far.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Matrix& memory, const ParamStore& ps, const DecoderConfig& config);
  Matrix step(int token);
  int length() const { return length_; }

 private:
  struct Layer {
    Matrix self_k, self_v;    // grows by one row per step
    Matrix cross_k, cross_v;  // projected memory
  };
  Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, int rows) const;

  const ParamStore& ps_;
  DecoderConfig config_;
  std::vector<Layer> layers_;
  int length_ = 0;
};

// Autoregressive argmax from <sos> until <eos> or max_len tokens. Blank,
// <sos> and <Unk> are never emitted; the returned sequence excludes <eos>.
std::vector<int> greedy_decode(const Matrix& memory, ParamStore& ps, const DecoderConfig& config, int max_len);

int decoder_vocab_size(const ParamStore& ps);

void init_decoder_params(ParamStore& ps, const DecoderConfig& config, int vocab_size, std::mt19937_64& rng);

}  // namespace csmoe
