// SPDX-License-Identifier: Apache-2.0

#include "csmoe/encoder.hpp"

#include "csmoe/errors.hpp"
#include "csmoe/nn.hpp"

namespace csmoe {

std::string encoder_layer_prefix(int layer) { return "enc.layer" + std::to_string(layer); }

ad::Var shared_layer_forward(ad::Tape& tape, ad::Var x, ParamStore& ps, const std::string& prefix,
                             const EncoderConfig& config) {
  if (x.cols() != config.d_model) {
    throw ConfigError(prefix + ": input width " + std::to_string(x.cols()) + " != d_model " +
                      std::to_string(config.d_model));
  }
  ad::Var h = nn::layer_norm(tape, x, ps, prefix + ".attn_ln", config.eps);
  x = ad::add(x, nn::multi_head_attention(tape, h, h, ps, prefix + ".attn", config.num_heads, false));
  h = nn::layer_norm(tape, x, ps, prefix + ".ff_ln", config.eps);
  return ad::add(x, nn::feed_forward(tape, h, ps, prefix + ".ff"));
}

ad::Var adapter_forward(ad::Tape& tape, ad::Var a, ParamStore& ps, const std::string& prefix, double eps) {
  ad::Var h = nn::layer_norm(tape, a, ps, prefix + ".ln", eps);
  h = ad::relu(ad::matmul(h, tape.param(ps.at(prefix + ".w_up"))));
  return ad::add(a, ad::matmul(h, tape.param(ps.at(prefix + ".w_down"))));
}

GateOutput gate_fuse(ad::Tape& tape, ad::Var h_cn, ad::Var h_en, ad::Var a, ParamStore& ps,
                     const std::string& prefix) {
  if (!h_cn.value().same_shape(h_en.value()) || !h_cn.value().same_shape(a.value())) {
    throw DimensionError(prefix + ": gate inputs disagree in shape");
  }
  ad::Var logits = nn::linear(tape, a, ps, prefix);
  ad::Var gate = ad::softmax_rows(logits);
  ad::Var mixed = ad::add(ad::scale_rows(h_cn, ad::slice_cols(gate, 0, 1)),
                          ad::scale_rows(h_en, ad::slice_cols(gate, 1, 1)));
  return {mixed, gate};
}

namespace {

template <class E>
[[noreturn]] void rethrow_with_layer(const E& e, int layer) {
  throw E("encoder layer " + std::to_string(layer) + ": " + e.what());
}

}  // namespace

EncodeOutput encode(ad::Tape& tape, const Matrix& features, ParamStore& ps, const EncoderConfig& config,
                    bool use_moe_adapter) {
  if (features.rows() < 1) throw ContractError("encode: empty feature sequence");
  if (features.cols() != config.d_model) {
    throw ConfigError("encode: feature width " + std::to_string(features.cols()) + " != d_model " +
                      std::to_string(config.d_model));
  }
  EncodeOutput out;
  out.caches.reserve(static_cast<std::size_t>(config.num_layers));
  ad::Var h = tape.constant(features + nn::sinusoidal_positions(features.rows(), features.cols()));
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string prefix = encoder_layer_prefix(l);
    try {
      LayerCache cache;
      cache.a = shared_layer_forward(tape, h, ps, prefix, config);
      if (use_moe_adapter) {
        cache.h_cn = adapter_forward(tape, cache.a, ps, prefix + ".adapter_cn", config.eps);
        cache.h_en = adapter_forward(tape, cache.a, ps, prefix + ".adapter_en", config.eps);
        GateOutput fused = gate_fuse(tape, cache.h_cn, cache.h_en, cache.a, ps, prefix + ".gate");
        cache.gate = fused.gate;
        cache.h_out = fused.h_out;
      } else {
        cache.h_out = cache.a;
      }
      h = cache.h_out;
      out.caches.push_back(cache);
    } catch (const DimensionError& e) {
      rethrow_with_layer(e, l);
    } catch (const ConfigError& e) {
      rethrow_with_layer(e, l);
    } catch (const NumericalError& e) {
      rethrow_with_layer(e, l);
    }
  }
  out.h_mix = h;
  return out;
}

void init_encoder_params(ParamStore& ps, const EncoderConfig& config, bool use_moe_adapter, std::mt19937_64& rng) {
  config.validate();
  const int d = config.d_model;
  for (int l = 0; l < config.num_layers; ++l) {
    const std::string p = encoder_layer_prefix(l);
    nn::add_layer_norm(ps, p + ".attn_ln", d);
    nn::add_attention(ps, p + ".attn", d, rng);
    nn::add_layer_norm(ps, p + ".ff_ln", d);
    nn::add_feed_forward(ps, p + ".ff", d, config.d_ff, rng);
    if (!use_moe_adapter) continue;
    for (const char* lang : {".adapter_cn", ".adapter_en"}) {
      nn::add_layer_norm(ps, p + lang + ".ln", d);
      ps.add_uniform(p + lang + ".w_up", d, config.d_adapter, rng);
      ps.add_uniform(p + lang + ".w_down", config.d_adapter, d, rng);
    }
    // Zero gate weights: both experts start with weight 1/2.
    ps.add_constant(p + ".gate.w", d, 2, 0.0);
    ps.add_constant(p + ".gate.b", 1, 2, 0.0);
  }
}

}  // namespace csmoe
