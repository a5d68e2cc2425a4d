// SPDX-License-Identifier: Apache-2.0
//
// Versioned binary checkpoint: magic "STRPM1", a config snapshot, and an
// ordered list of named single-precision little-endian arrays covering
// predictor and discriminator weights plus both optimizers' moments.

#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "strpm/train.hpp"

namespace strpm {

struct ArrayRecord {
  std::string name;
  std::vector<std::uint32_t> dims;
  std::vector<float> values;
};

struct CheckpointData {
  std::vector<std::pair<std::string, std::string>> config;
  long long adam_p_steps = 0;
  long long adam_d_steps = 0;
  std::vector<ArrayRecord> arrays;
};

CheckpointData snapshot(const System& sys);

void save_checkpoint_file(const CheckpointData& ckpt, const std::string& path);
// Errors: bad magic, truncated file, malformed records.
CheckpointData load_checkpoint_file(const std::string& path);

// Loads arrays into an existing system. Architectural config keys must
// match and the array sequence must agree in name and shape; the first
// offending key or array is named in the error.
void restore(System& sys, const CheckpointData& ckpt);

// Rebuilds the full system from the checkpoint's own config snapshot.
System system_from_checkpoint(const CheckpointData& ckpt);

}  // namespace strpm
