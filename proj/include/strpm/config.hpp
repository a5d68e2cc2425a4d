// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: model, discriminator and optimizer settings plus data
// and loop parameters, loadable from `key = value` files with CLI overrides.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "strpm/model.hpp"
#include "strpm/objectives.hpp"

namespace strpm {

// Command-line / configuration mistakes; mapped to exit code 1 by the CLI.
struct UsageError : std::runtime_error {
  explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

enum class LossMode { Mse, MseGan, MseGanLp };

LossMode parse_loss_mode(const std::string& s);
std::string loss_mode_name(LossMode m);

struct RunConfig {
  ModelConfig model;
  DiscConfig disc;
  AdamConfig adam;
  int frame_size = 32;
  int context = 4;
  int horizon = 4;
  int batch = 4;
  int steps = 500;
  LossMode loss_mode = LossMode::Mse;
  std::uint64_t seed = 1;
  int threads = 1;
  int timing_samples = 10;
  int ablate_steps = 300;

  void validate() const;
};

// Desk-scale defaults: 4 layers, 16 channels, 32x32 frames, tau = theta = 2.
RunConfig desk_profile();
// Full-scale configuration: 16 layers, 128 channels, kernel 5, tau = theta
// = 5, 512x512 RGB frames. Intended for parameter/FLOP reporting.
RunConfig paper_profile();
RunConfig profile_by_name(const std::string& name);

// Canonical ordered key=value form; parses back exactly.
std::vector<std::pair<std::string, std::string>> config_to_kv(const RunConfig& cfg);
// Applies one key; throws UsageError on unknown key or bad value.
void config_set(RunConfig& cfg, const std::string& key, const std::string& value);

// `key = value` per line, `#` comments, UTF-8. Unknown keys are errors.
void load_config_file(RunConfig& cfg, const std::string& path);

std::string format_double(double v);  // shortest round-trip-exact form

}  // namespace strpm
