// SPDX-License-Identifier: Apache-2.0
//
// Building blocks shared by the encoder and the decoder. Parameters are
// looked up by "<prefix>.<name>" in the store.

#pragma once

#include <random>
#include <string>

#include "csmoe/autodiff.hpp"
#include "csmoe/params.hpp"

namespace csmoe::nn {

// x W (+ b when "<prefix>.b" exists).
ad::Var linear(ad::Tape& tape, ad::Var x, ParamStore& ps, const std::string& prefix);
ad::Var layer_norm(ad::Tape& tape, ad::Var x, ParamStore& ps, const std::string& prefix, double eps);

// Scaled dot-product attention with `num_heads` heads. Queries come from
// `query_in`, keys and values from `memory`. Parameters: wq, wk, wv, wo.
ad::Var multi_head_attention(ad::Tape& tape, ad::Var query_in, ad::Var memory, ParamStore& ps,
                             const std::string& prefix, int num_heads, bool causal);

// relu(x W1 + b1) W2 + b2
ad::Var feed_forward(ad::Tape& tape, ad::Var x, ParamStore& ps, const std::string& prefix);

Matrix sinusoidal_positions(int length, int dim);

void add_linear(ParamStore& ps, const std::string& prefix, int in, int out, bool bias, std::mt19937_64& rng);
void add_layer_norm(ParamStore& ps, const std::string& prefix, int dim);
void add_attention(ParamStore& ps, const std::string& prefix, int dim, std::mt19937_64& rng);
void add_feed_forward(ParamStore& ps, const std::string& prefix, int dim, int hidden, std::mt19937_64& rng);

}  // namespace csmoe::nn
