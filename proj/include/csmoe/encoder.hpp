// SPDX-License-Identifier: Apache-2.0
//
// MoE-Adapter encoder. Layer l maps H^l to H^{l+1}:
//
//   A      = shared(H^l)                    pre-norm self-attention + FFN
//   H_cn   = A + W_d,cn relu(LN_cn(A) W_u,cn)
//   H_en   = A + W_d,en relu(LN_en(A) W_u,en)
//   g      = softmax(A W_g + b_g)           per frame, two coefficients
//   H^{l+1}= g[:,0] * H_cn + g[:,1] * H_en
//
// Sinusoidal positions are added to the features once, before layer 0.

#pragma once

#include <random>
#include <string>
#include <vector>

#include "csmoe/autodiff.hpp"
#include "csmoe/config.hpp"
#include "csmoe/params.hpp"

namespace csmoe {

struct LayerCache {
  ad::Var a;      // shared-layer output
  ad::Var h_cn;   // unset without adapters
  ad::Var h_en;   // unset without adapters
  ad::Var gate;   // T x 2, unset without adapters
  ad::Var h_out;  // input of the next layer
};

struct EncodeOutput {
  ad::Var h_mix;
  std::vector<LayerCache> caches;
};

std::string encoder_layer_prefix(int layer);

ad::Var shared_layer_forward(ad::Tape& tape, ad::Var x, ParamStore& ps, const std::string& prefix,
                             const EncoderConfig& config);
ad::Var adapter_forward(ad::Tape& tape, ad::Var a, ParamStore& ps, const std::string& prefix, double eps);

struct GateOutput {
  ad::Var h_out;
  ad::Var gate;
};
GateOutput gate_fuse(ad::Tape& tape, ad::Var h_cn, ad::Var h_en, ad::Var a, ParamStore& ps,
                     const std::string& prefix);

// Runs all layers. With use_moe_adapter=false every layer is the shared
// block alone (the hybrid baseline encoder).
EncodeOutput encode(ad::Tape& tape, const Matrix& features, ParamStore& ps, const EncoderConfig& config,
                    bool use_moe_adapter);

void init_encoder_params(ParamStore& ps, const EncoderConfig& config, bool use_moe_adapter, std::mt19937_64& rng);

}  // namespace csmoe
