// SPDX-License-Identifier: Apache-2.0
//
// Training and experiment settings, readable from a key = value file:
//
//   # comment
//   [train]
//   learning_rate = 0.05
//   [encoder]
//   num_layers = 2
//
// Keys may also be written fully qualified (train.learning_rate = 0.05).
// Sections: model, encoder, decoder, boundary, loss, train, data, corpus.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "csmoe/config.hpp"
#include "csmoe/data.hpp"
#include "json.hpp"

namespace csmoe {

struct TrainConfig {
  ModelConfig model;
  LossWeights weights;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double clip_norm = 5.0;
  // The learning rate decays linearly to learning_rate * final_lr_scale at
  // the last step; 1 keeps it constant.
  double final_lr_scale = 1.0;
  int epochs = 1;
  long max_steps = 0;  // 0: run all epochs
  int batch_size = 8;
  std::uint64_t seed = 1;
  int max_decode_len = 48;

  void validate() const;
};

// Corpus sizes used by gen-data and ablate.
struct CorpusSizes {
  int train = 2000;
  int dev = 100;
  int test = 200;
};

struct ExperimentConfig {
  TrainConfig train;
  SynthConfig data;
  CorpusSizes corpus;

  void validate() const;
};

// Throws ConfigError (with the line number) on unknown keys or bad values.
ExperimentConfig parse_experiment_config(const std::string& text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);

nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j);

}  // namespace csmoe
