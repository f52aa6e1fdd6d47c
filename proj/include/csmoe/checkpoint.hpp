// SPDX-License-Identifier: Apache-2.0
//
// Checkpoints are one JSON document: format version, training config, step
// count and every parameter with its shape. Doubles are written in their
// shortest round-trip form, so save -> load -> save is byte-identical.

#pragma once

#include <filesystem>
#include <string>

#include "csmoe/params.hpp"
#include "csmoe/run_config.hpp"

namespace csmoe {

struct Checkpoint {
  static constexpr int kFormatVersion = 1;

  TrainConfig config;
  long step = 0;
  ParamStore params;
};

std::string checkpoint_to_string(const Checkpoint& ckpt);
Checkpoint checkpoint_from_string(const std::string& text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace csmoe
