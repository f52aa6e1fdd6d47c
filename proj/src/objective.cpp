// SPDX-License-Identifier: Apache-2.0

#include "csmoe/objective.hpp"

#include <random>

#include "csmoe/boundary.hpp"
#include "csmoe/cla.hpp"
#include "csmoe/ctc.hpp"
#include "csmoe/decoder.hpp"
#include "csmoe/encoder.hpp"
#include "csmoe/errors.hpp"
#include "csmoe/nn.hpp"

namespace csmoe {

ParamStore init_model_params(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const Vocab vocab(config.cn_vocab, config.en_vocab);
  const int d = config.encoder.d_model;
  ParamStore ps;
  std::mt19937_64 rng(seed);
  init_encoder_params(ps, config.encoder, config.use_moe_adapter, rng);
  nn::add_linear(ps, "ctc", d, vocab.size(), true, rng);
  if (config.use_cla) init_cla_params(ps, d, vocab.size(), rng);
  if (config.use_bat) init_boundary_params(ps, d, config.boundary, rng);
  init_decoder_params(ps, config.decoder, vocab.size(), rng);
  return ps;
}

ExecutionCounters& ExecutionCounters::operator+=(const ExecutionCounters& o) {
  encode += o.encode;
  main_ctc += o.main_ctc;
  decoder_ce += o.decoder_ce;
  cla += o.cla;
  boundary += o.boundary;
  return *this;
}

std::vector<int> attention_target(const Utterance& u, bool with_boundary_tokens) {
  if (!with_boundary_tokens) return u.tokens;
  std::vector<int> out;
  out.reserve(u.tokens.size() + u.boundary_tags.tags.size());
  for (std::size_t i = 0; i < u.tokens.size(); ++i) {
    if (i == 0 || u.langs[i] != u.langs[i - 1]) out.push_back(Vocab::tag_token(u.langs[i]));
    out.push_back(u.tokens[i]);
  }
  return out;
}

ad::Var weighted_total(ad::Tape& tape, const LossWeights& w, ad::Var ce, ad::Var ctc, ad::Var cla, ad::Var b) {
  ad::Var total;
  auto accumulate = [&](double weight, ad::Var term) {
    if (weight == 0.0 || !term.valid()) return;
    ad::Var scaled = ad::scale(term, weight);
    total = total.valid() ? ad::add(total, scaled) : scaled;
  };
  accumulate(w.ce, ce);
  accumulate(w.ctc, ctc);
  accumulate(w.cla, cla);
  accumulate(w.boundary, b);
  return total.valid() ? total : tape.constant(Matrix::scalar(0.0));
}

namespace {

template <class E>
[[noreturn]] void rethrow_tagged(const E& e, const char* component) {
  throw E(std::string(component) + ": " + e.what());
}

[[noreturn]] void rethrow_tagged(const FeasibilityError& e, const char* component) {
  throw FeasibilityError(std::string(component) + ": " + e.what(), e.frames(), e.required());
}

template <class F>
auto tagged(const char* component, F&& f) {
  try {
    return f();
  } catch (const FeasibilityError& e) {
    rethrow_tagged(e, component);
  } catch (const DimensionError& e) {
    rethrow_tagged(e, component);
  } catch (const NumericalError& e) {
    rethrow_tagged(e, component);
  } catch (const CapacityError& e) {
    rethrow_tagged(e, component);
  } catch (const ConfigError& e) {
    rethrow_tagged(e, component);
  } catch (const ContractError& e) {
    rethrow_tagged(e, component);
  } catch (const TagError& e) {
    rethrow_tagged(e, component);
  }
}

}  // namespace

LossGraph total_loss(ad::Tape& tape, const Utterance& utt, ParamStore& ps, const ModelConfig& config,
                     const LossWeights& weights, ExecutionCounters* counters) {
  weights.validate();
  ExecutionCounters local;
  ExecutionCounters& count = counters ? *counters : local;

  EncodeOutput enc = tagged("encoder", [&] { return encode(tape, utt.features, ps, config.encoder, config.use_moe_adapter); });
  ++count.encode;

  ad::Var l_ce, l_ctc, l_cla, l_b;
  if (weights.ctc != 0.0) {
    l_ctc = tagged("ctc", [&] {
      ad::Var lp = ad::log_softmax_rows(nn::linear(tape, enc.h_mix, ps, "ctc"));
      return ctc_loss(lp, utt.tokens, Vocab::kBlank);
    });
    ++count.main_ctc;
  }
  if (weights.ce != 0.0) {
    l_ce = tagged("ce", [&] {
      const std::vector<int> target = attention_target(utt, config.use_bat);
      ad::Var logits = decoder_forward(tape, enc.h_mix, decoder_input(target), ps, config.decoder);
      return ce_loss(logits, decoder_output(target));
    });
    ++count.decoder_ce;
  }
  if (config.use_cla && weights.cla != 0.0) {
    l_cla = tagged("cla", [&] { return cla_loss(tape, enc.caches, mask_targets(utt.tokens, utt.langs), ps).total; });
    ++count.cla;
  }
  if (config.use_bat && weights.boundary != 0.0) {
    l_b = tagged("boundary", [&] {
      ad::Var a = attention_pool_weights(enc.h_mix, tape.param(ps.at("bat.w1")), tape.param(ps.at("bat.w2")));
      ad::Var h_b = segment_pool(a, enc.h_mix);
      return boundary_loss(tape, h_b, boundary_targets(utt.langs, config.boundary.d_r), ps, config.decoder).total;
    });
    ++count.boundary;
  }

  LossGraph out;
  out.total = weighted_total(tape, weights, l_ce, l_ctc, l_cla, l_b);
  out.report.l_ce = l_ce.valid() ? l_ce.scalar() : 0.0;
  out.report.l_ctc = l_ctc.valid() ? l_ctc.scalar() : 0.0;
  out.report.l_cla = l_cla.valid() ? l_cla.scalar() : 0.0;
  out.report.l_b = l_b.valid() ? l_b.scalar() : 0.0;
  out.report.total = out.total.scalar();
  return out;
}

}  // namespace csmoe
