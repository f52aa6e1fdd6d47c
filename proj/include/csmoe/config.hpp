// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace csmoe {

struct EncoderConfig {
  int num_layers = 2;
  int d_model = 16;
  int d_ff = 32;
  int num_heads = 2;
  int d_adapter = 8;  // adapter bottleneck width
  double eps = 1e-5;

  void validate() const;
};

struct DecoderConfig {
  int num_layers = 2;
  int d_model = 16;
  int d_ff = 32;
  int num_heads = 2;

  void validate() const;
};

struct BoundaryConfig {
  int d_a = 16;  // attention hidden width
  int d_r = 8;   // attention heads == pooled segments

  void validate() const;
};

// Weights of the four training objectives. Defaults 0.7 / 0.3 / 0.1 / 0.1.
struct LossWeights {
  double ce = 0.7;
  double ctc = 0.3;
  double cla = 0.1;
  double boundary = 0.1;

  void validate() const;
};

// Architecture plus the ablation flags, which decide which parameter groups
// exist at all.
struct ModelConfig {
  int cn_vocab = 20;
  int en_vocab = 20;
  EncoderConfig encoder;
  DecoderConfig decoder;
  BoundaryConfig boundary;
  bool use_moe_adapter = true;
  bool use_cla = true;
  bool use_bat = true;

  // Throws ConfigError on inconsistent settings (e.g. CLA without adapters).
  void validate() const;
};

}  // namespace csmoe
