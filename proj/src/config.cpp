// SPDX-License-Identifier: Apache-2.0

#include "csmoe/config.hpp"

#include <string>

#include "csmoe/errors.hpp"

namespace csmoe {

void EncoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("encoder needs at least one layer");
  if (d_model < 1 || d_ff < 1 || d_adapter < 1) throw ConfigError("encoder widths must be positive");
  if (num_heads < 1 || d_model % num_heads != 0) {
    throw ConfigError("encoder d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
  if (!(eps > 0.0)) throw ConfigError("encoder eps must be positive");
}

void DecoderConfig::validate() const {
  if (num_layers < 1) throw ConfigError("decoder needs at least one layer");
  if (d_model < 1 || d_ff < 1) throw ConfigError("decoder widths must be positive");
  if (num_heads < 1 || d_model % num_heads != 0) {
    throw ConfigError("decoder d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
}

void BoundaryConfig::validate() const {
  if (d_a < 1) throw ConfigError("boundary d_a must be positive");
  if (d_r < 1) throw ConfigError("boundary d_r must be positive");
}

void LossWeights::validate() const {
  if (ce < 0 || ctc < 0 || cla < 0 || boundary < 0) throw ConfigError("loss weights must be non-negative");
}

void ModelConfig::validate() const {
  if (cn_vocab < 1 || en_vocab < 1) throw ConfigError("vocabulary sizes must be positive");
  encoder.validate();
  decoder.validate();
  boundary.validate();
  if (decoder.d_model != encoder.d_model) throw ConfigError("decoder d_model must equal encoder d_model");
  if (use_cla && !use_moe_adapter) throw ConfigError("use_cla requires use_moe_adapter");
}

}  // namespace csmoe
