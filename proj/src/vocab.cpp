// SPDX-License-Identifier: Apache-2.0

#include "csmoe/vocab.hpp"

#include <charconv>

#include "csmoe/errors.hpp"

namespace csmoe {

std::string_view lang_name(Lang lang) { return lang == Lang::CN ? "CN" : "EN"; }

Lang parse_lang(std::string_view s) {
  if (s == "CN") return Lang::CN;
  if (s == "EN") return Lang::EN;
  throw TagError("unknown language tag '" + std::string(s) + "'");
}

Vocab::Vocab(int cn_size, int en_size) : cn_size_(cn_size), en_size_(en_size) {
  if (cn_size < 1 || en_size < 1) throw ConfigError("vocabulary sizes must be positive");
}

int Vocab::cn_unit(int k) const {
  if (k < 0 || k >= cn_size_) throw ContractError("CN unit index out of range: " + std::to_string(k));
  return kFirstUnit + k;
}

int Vocab::en_unit(int k) const {
  if (k < 0 || k >= en_size_) throw ContractError("EN unit index out of range: " + std::to_string(k));
  return kFirstUnit + cn_size_ + k;
}

std::optional<Lang> Vocab::lang_of(int id) const {
  if (id >= kFirstUnit && id < kFirstUnit + cn_size_) return Lang::CN;
  if (id >= kFirstUnit + cn_size_ && id < size()) return Lang::EN;
  return std::nullopt;
}

std::string Vocab::name(int id) const {
  switch (id) {
    case kBlank: return "<blank>";
    case kUnk: return "<Unk>";
    case kSos: return "<sos>";
    case kEos: return "<eos>";
    case kCnTag: return "<CN>";
    case kEnTag: return "<EN>";
    default: break;
  }
  if (id >= kFirstUnit && id < kFirstUnit + cn_size_) return "cn" + std::to_string(id - kFirstUnit);
  if (id >= kFirstUnit + cn_size_ && id < size()) return "en" + std::to_string(id - kFirstUnit - cn_size_);
  throw ContractError("token id out of vocabulary: " + std::to_string(id));
}

int Vocab::id(std::string_view name) const {
  static constexpr std::string_view reserved[] = {"<blank>", "<Unk>", "<sos>", "<eos>", "<CN>", "<EN>"};
  for (int i = 0; i < kFirstUnit; ++i)
    if (name == reserved[i]) return i;
  auto parse_index = [&](std::string_view digits, int limit) -> int {
    int k = -1;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), k);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || k < 0 || k >= limit) return -1;
    return k;
  };
  if (name.size() > 2 && name.substr(0, 2) == "cn") {
    if (int k = parse_index(name.substr(2), cn_size_); k >= 0) return cn_unit(k);
  } else if (name.size() > 2 && name.substr(0, 2) == "en") {
    if (int k = parse_index(name.substr(2), en_size_); k >= 0) return en_unit(k);
  }
  throw ContractError("unknown token '" + std::string(name) + "'");
}

}  // namespace csmoe
