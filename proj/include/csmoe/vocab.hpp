// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace csmoe {

enum class Lang { CN, EN };

std::string_view lang_name(Lang lang);
// Throws TagError for anything other than "CN" / "EN".
Lang parse_lang(std::string_view s);

// Unified token inventory shared by the CTC heads and the decoder.
//
//   0 <blank>  1 <Unk>  2 <sos>  3 <eos>  4 <CN>  5 <EN>
//   6 .. 6+cn-1            language-A ("CN") units
//   6+cn .. 6+cn+en-1      language-B ("EN") units
class Vocab {
 public:
  static constexpr int kBlank = 0;
  static constexpr int kUnk = 1;
  static constexpr int kSos = 2;
  static constexpr int kEos = 3;
  static constexpr int kCnTag = 4;
  static constexpr int kEnTag = 5;
  static constexpr int kFirstUnit = 6;

  Vocab() = default;
  Vocab(int cn_size, int en_size);

  int size() const { return kFirstUnit + cn_size_ + en_size_; }
  int cn_size() const { return cn_size_; }
  int en_size() const { return en_size_; }
  int cn_unit(int k) const;
  int en_unit(int k) const;
  int unit(Lang lang, int k) const { return lang == Lang::CN ? cn_unit(k) : en_unit(k); }
  static int tag_token(Lang lang) { return lang == Lang::CN ? kCnTag : kEnTag; }

  bool is_unit(int id) const { return id >= kFirstUnit && id < size(); }
  bool is_tag(int id) const { return id == kCnTag || id == kEnTag; }
  // Language of a lexical unit; nullopt for reserved ids.
  std::optional<Lang> lang_of(int id) const;

  std::string name(int id) const;
  int id(std::string_view name) const;

  friend bool operator==(const Vocab&, const Vocab&) = default;

 private:
  int cn_size_ = 0;
  int en_size_ = 0;
};

// Separate four-symbol inventory of the boundary CTC head.
struct BoundaryVocab {
  static constexpr int kBlank = 0;
  static constexpr int kCn = 1;
  static constexpr int kEn = 2;
  static constexpr int kUnk = 3;
  static constexpr int kSize = 4;
};

}  // namespace csmoe
