// SPDX-License-Identifier: Apache-2.0
//
// Cross-layer language adaptation: monolingual targets obtained by masking
// the other language with <Unk>, the layer-mean of each language's adapter
// outputs, and the averaged CN/EN CTC objective over both.

#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "csmoe/autodiff.hpp"
#include "csmoe/encoder.hpp"
#include "csmoe/vocab.hpp"

namespace csmoe {

struct MaskedTargets {
  std::vector<int> y_cn;
  std::vector<int> y_en;
};

MaskedTargets mask_targets(std::span<const int> tokens, std::span<const Lang> langs);
// String tags; throws TagError for anything but "CN" / "EN".
MaskedTargets mask_targets(std::span<const int> tokens, std::span<const std::string> langs);

// Elementwise mean over layers of the cached CN or EN adapter outputs.
ad::Var cross_layer_adapter_mean(std::span<const LayerCache> caches, Lang lang);

struct ClaLoss {
  ad::Var total;  // (cn + en) / 2
  ad::Var cn;
  ad::Var en;
};

// Heads "cla.cn" / "cla.en" project d -> |V| followed by log-softmax.
ClaLoss cla_loss(ad::Tape& tape, std::span<const LayerCache> caches, const MaskedTargets& masked,
                 ParamStore& ps);

// (cn + en) / 2 on already computed component losses.
ad::Var combine_cla(ad::Var cn, ad::Var en);

void init_cla_params(ParamStore& ps, int d_model, int vocab_size, std::mt19937_64& rng);

}  // namespace csmoe
