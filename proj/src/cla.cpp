// SPDX-License-Identifier: Apache-2.0

#include "csmoe/cla.hpp"

#include "csmoe/ctc.hpp"
#include "csmoe/errors.hpp"
#include "csmoe/nn.hpp"

namespace csmoe {

MaskedTargets mask_targets(std::span<const int> tokens, std::span<const Lang> langs) {
  if (tokens.size() != langs.size()) {
    throw ContractError("mask_targets: " + std::to_string(tokens.size()) + " tokens but " +
                        std::to_string(langs.size()) + " language tags");
  }
  MaskedTargets out;
  out.y_cn.reserve(tokens.size());
  out.y_en.reserve(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const bool cn = langs[i] == Lang::CN;
    out.y_cn.push_back(cn ? tokens[i] : Vocab::kUnk);
    out.y_en.push_back(cn ? Vocab::kUnk : tokens[i]);
  }
  return out;
}

MaskedTargets mask_targets(std::span<const int> tokens, std::span<const std::string> langs) {
  std::vector<Lang> parsed;
  parsed.reserve(langs.size());
  for (const auto& s : langs) parsed.push_back(parse_lang(s));
  return mask_targets(tokens, parsed);
}

ad::Var cross_layer_adapter_mean(std::span<const LayerCache> caches, Lang lang) {
  if (caches.empty()) throw ContractError("cross_layer_adapter_mean: no layers");
  auto pick = [lang](const LayerCache& c) {
    const ad::Var& v = lang == Lang::CN ? c.h_cn : c.h_en;
    if (!v.valid()) throw ContractError("cross_layer_adapter_mean: layer has no adapter outputs");
    return v;
  };
  if (caches.size() == 1) return pick(caches.front());
  ad::Var acc = pick(caches.front());
  for (std::size_t i = 1; i < caches.size(); ++i) acc = ad::add(acc, pick(caches[i]));
  return ad::scale(acc, 1.0 / static_cast<double>(caches.size()));
}

ad::Var combine_cla(ad::Var cn, ad::Var en) { return ad::scale(ad::add(cn, en), 0.5); }

ClaLoss cla_loss(ad::Tape& tape, std::span<const LayerCache> caches, const MaskedTargets& masked,
                 ParamStore& ps) {
  ClaLoss out;
  auto branch = [&](Lang lang, const std::vector<int>& target, const char* head) {
    ad::Var h = cross_layer_adapter_mean(caches, lang);
    ad::Var lp = ad::log_softmax_rows(nn::linear(tape, h, ps, head));
    try {
      return ctc_loss(lp, target, Vocab::kBlank);
    } catch (const FeasibilityError& e) {
      throw FeasibilityError(std::string(lang_name(lang)) + " CLA target: " + e.what(), e.frames(), e.required());
    }
  };
  out.cn = branch(Lang::CN, masked.y_cn, "cla.cn");
  out.en = branch(Lang::EN, masked.y_en, "cla.en");
  out.total = combine_cla(out.cn, out.en);
  return out;
}

void init_cla_params(ParamStore& ps, int d_model, int vocab_size, std::mt19937_64& rng) {
  nn::add_linear(ps, "cla.cn", d_model, vocab_size, true, rng);
  nn::add_linear(ps, "cla.en", d_model, vocab_size, true, rng);
}

}  // namespace csmoe
