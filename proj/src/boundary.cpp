// SPDX-License-Identifier: Apache-2.0

#include "csmoe/boundary.hpp"

#include "csmoe/ctc.hpp"
#include "csmoe/decoder.hpp"
#include "csmoe/errors.hpp"
#include "csmoe/nn.hpp"

namespace csmoe {

std::vector<int> BoundaryTargets::ctc_ids() const {
  std::vector<int> ids;
  ids.reserve(tags.size());
  for (Lang l : tags) ids.push_back(l == Lang::CN ? BoundaryVocab::kCn : BoundaryVocab::kEn);
  return ids;
}

std::vector<int> BoundaryTargets::decoder_ids() const {
  std::vector<int> ids;
  ids.reserve(tags.size());
  for (Lang l : tags) ids.push_back(Vocab::tag_token(l));
  return ids;
}

std::vector<Lang> compress_runs(std::span<const Lang> langs) {
  std::vector<Lang> runs;
  for (Lang l : langs)
    if (runs.empty() || runs.back() != l) runs.push_back(l);
  return runs;
}

BoundaryTargets boundary_targets(std::span<const Lang> langs, int d_r) {
  if (langs.empty()) throw ContractError("boundary_targets: empty language sequence");
  BoundaryTargets t{compress_runs(langs)};
  if (static_cast<int>(t.tags.size()) > d_r) {
    throw CapacityError("utterance has " + std::to_string(t.tags.size()) + " language segments but d_r is " +
                        std::to_string(d_r));
  }
  return t;
}

ad::Var attention_pool_weights(ad::Var h_mix, ad::Var w1, ad::Var w2) {
  return ad::softmax_cols(ad::matmul(ad::relu(ad::matmul(h_mix, w1)), w2));
}

ad::Var segment_pool(ad::Var a, ad::Var h_mix) {
  if (a.rows() != h_mix.rows()) {
    throw DimensionError("segment_pool: weights " + a.value().shape_string() + " vs frames " +
                         h_mix.value().shape_string());
  }
  return ad::matmul(ad::transpose(a), h_mix);
}

ad::Var combine_boundary(ad::Var ce, ad::Var ctc) { return ad::add(ce, ctc); }

BoundaryLoss boundary_loss(ad::Tape& tape, ad::Var h_b, const BoundaryTargets& targets, ParamStore& ps,
                           const DecoderConfig& decoder) {
  BoundaryLoss out;
  ad::Var lp = ad::log_softmax_rows(nn::linear(tape, h_b, ps, "bat.ctc"));
  const std::vector<int> ctc_target = targets.ctc_ids();
  out.ctc = ctc_loss(lp, ctc_target, BoundaryVocab::kBlank);
  const std::vector<int> tags = targets.decoder_ids();
  ad::Var logits = decoder_forward(tape, h_b, decoder_input(tags), ps, decoder);
  out.ce = ce_loss(logits, decoder_output(tags));
  out.total = combine_boundary(out.ce, out.ctc);
  return out;
}

void init_boundary_params(ParamStore& ps, int d_model, const BoundaryConfig& config, std::mt19937_64& rng) {
  config.validate();
  ps.add_uniform("bat.w1", d_model, config.d_a, rng);
  ps.add_uniform("bat.w2", config.d_a, config.d_r, rng);
  nn::add_linear(ps, "bat.ctc", d_model, BoundaryVocab::kSize, true, rng);
}

}  // namespace csmoe
