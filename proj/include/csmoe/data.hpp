// SPDX-License-Identifier: Apache-2.0
//
// Synthetic code-switching corpus. Two artificial languages with disjoint
// unit inventories; every unit has a feature prototype and every language a
// mean offset along feature axis 0. A unit spanning n frames emits n frames
// of prototype + language offset + Gaussian noise.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "csmoe/boundary.hpp"
#include "csmoe/matrix.hpp"
#include "csmoe/vocab.hpp"

namespace csmoe {

struct SynthConfig {
  int cn_vocab = 20;
  int en_vocab = 20;
  int min_frames_per_token = 3;
  int max_frames_per_token = 8;
  int max_switches = 3;
  int min_tokens = 4;
  int max_tokens = 12;
  int feature_dim = 16;
  double noise_std = 0.3;
  // Half the distance between the two language means along axis 0.
  double language_offset = 0.6;
  // Correlation between the prototypes of unit k in the two languages.
  double cross_lingual_similarity = 0.5;
  std::uint64_t seed = 1;

  void validate() const;
  Vocab vocab() const { return Vocab(cn_vocab, en_vocab); }
};

struct Utterance {
  std::string id;
  Matrix features;              // T x d
  std::vector<int> tokens;      // unified vocabulary ids
  std::vector<Lang> langs;      // one per token
  std::vector<int> durations;   // frames per token; empty when unknown
  BoundaryTargets boundary_tags;

  int frames() const { return features.rows(); }
  // Per-frame language; empty when durations are unknown.
  std::vector<Lang> frame_langs() const;
  // Frames whose language differs from the previous frame.
  std::vector<int> boundary_frames() const;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

using Dataset = std::vector<Utterance>;

// Unit prototypes (row k: CN unit k, row cn_vocab + k: EN unit k).
Matrix unit_prototypes(const SynthConfig& config);

// Utterance i depends only on (config, i).
Utterance generate_utterance(const SynthConfig& config, std::uint64_t index);
Dataset generate_dataset(const SynthConfig& config, int n, std::uint64_t first_index = 0);

void write_jsonl(const Dataset& data, const std::filesystem::path& path);
Dataset read_jsonl(const std::filesystem::path& path);

std::string utterance_to_json(const Utterance& u);
// `line` is reported in ParseError.
Utterance utterance_from_json(const std::string& text, int line);

}  // namespace csmoe
