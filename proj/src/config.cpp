// SPDX-License-Identifier: Apache-2.0

#include "strpm/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace strpm {

LossMode parse_loss_mode(const std::string& s) {
  if (s == "mse") return LossMode::Mse;
  if (s == "mse+gan") return LossMode::MseGan;
  if (s == "mse+gan+lp") return LossMode::MseGanLp;
  throw UsageError("unknown loss mode '" + s + "' (expected mse, mse+gan or mse+gan+lp)");
}

std::string loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::Mse: return "mse";
    case LossMode::MseGan: return "mse+gan";
    case LossMode::MseGanLp: return "mse+gan+lp";
  }
  return "mse";
}

void RunConfig::validate() const {
  model.validate();
  disc.validate();
  check(disc.in_channels == model.in_channels, "config: disc in_channels must match model in_channels");
  check(frame_size >= 8 && frame_size % model.downsample == 0,
        "config: frame_size must be >= 8 and divisible by downsample");
  check(frame_size % (1 << disc.n_layers) == 0,
        "config: frame_size must be divisible by 2^disc_layers");
  check(context >= 1, "config: context must be >= 1");
  check(horizon >= 1, "config: horizon must be >= 1");
  check(batch >= 1, "config: batch must be >= 1");
  check(steps >= 1, "config: steps must be >= 1");
  check(threads >= 1, "config: threads must be >= 1");
  check(timing_samples >= 1, "config: timing_samples must be >= 1");
  check(ablate_steps >= 1, "config: ablate_steps must be >= 1");
  check(adam.lr > 0.0 && adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 &&
            adam.beta2 < 1.0 && adam.eps > 0.0,
        "config: invalid Adam settings");
}

RunConfig desk_profile() {
  RunConfig cfg;
  // The desk-scale model trains comfortably at twice the stock Adam rate,
  // and the overfit acceptance budget (500 steps) needs it.
  cfg.adam.lr = 2e-3;
  return cfg;
}

RunConfig paper_profile() {
  RunConfig cfg;
  cfg.model.layers = 16;
  cfg.model.hidden = 128;
  cfg.model.kernel = 5;
  cfg.model.tau = 5;
  cfg.model.theta = 5;
  cfg.model.in_channels = 3;
  cfg.disc.in_channels = 3;
  cfg.disc.width = 128;
  cfg.frame_size = 512;
  cfg.batch = 1;
  return cfg;
}

RunConfig profile_by_name(const std::string& name) {
  if (name == "desk") return desk_profile();
  if (name == "paper") return paper_profile();
  throw UsageError("unknown profile '" + name + "' (expected desk or paper)");
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<std::pair<std::string, std::string>> config_to_kv(const RunConfig& cfg) {
  std::vector<std::pair<std::string, std::string>> kv;
  auto add_int = [&](const char* k, long long v) { kv.emplace_back(k, std::to_string(v)); };
  auto add_bool = [&](const char* k, bool v) { kv.emplace_back(k, v ? "true" : "false"); };
  auto add_dbl = [&](const char* k, double v) { kv.emplace_back(k, format_double(v)); };
  add_int("layers", cfg.model.layers);
  add_int("hidden", cfg.model.hidden);
  add_int("kernel", cfg.model.kernel);
  add_int("tau", cfg.model.tau);
  add_int("theta", cfg.model.theta);
  add_int("downsample", cfg.model.downsample);
  add_int("in_channels", cfg.model.in_channels);
  add_bool("residual", cfg.model.residual);
  add_bool("shared_encoder", cfg.model.shared_encoder);
  add_dbl("lambda1", cfg.model.lambda1);
  add_dbl("lambda2", cfg.model.lambda2);
  add_int("disc_layers", cfg.disc.n_layers);
  add_int("disc_width", cfg.disc.width);
  add_int("disc_tap", cfg.disc.k_tap);
  add_dbl("lr", cfg.adam.lr);
  add_dbl("beta1", cfg.adam.beta1);
  add_dbl("beta2", cfg.adam.beta2);
  add_dbl("adam_eps", cfg.adam.eps);
  add_int("frame_size", cfg.frame_size);
  add_int("context", cfg.context);
  add_int("horizon", cfg.horizon);
  add_int("batch", cfg.batch);
  add_int("steps", cfg.steps);
  kv.emplace_back("loss", loss_mode_name(cfg.loss_mode));
  add_int("seed", static_cast<long long>(cfg.seed));
  add_int("threads", cfg.threads);
  add_int("timing_samples", cfg.timing_samples);
  add_int("ablate_steps", cfg.ablate_steps);
  return kv;
}

namespace {

long long parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const long long r = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': expected integer, got '" + v + "'");
  }
}

double parse_dbl(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    const double r = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(r)) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw UsageError("config key '" + key + "': expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw UsageError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

void config_set(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "layers") cfg.model.layers = static_cast<int>(parse_int(key, value));
  else if (key == "hidden") cfg.model.hidden = static_cast<int>(parse_int(key, value));
  else if (key == "kernel") cfg.model.kernel = static_cast<int>(parse_int(key, value));
  else if (key == "tau") cfg.model.tau = static_cast<int>(parse_int(key, value));
  else if (key == "theta") cfg.model.theta = static_cast<int>(parse_int(key, value));
  else if (key == "downsample") cfg.model.downsample = static_cast<int>(parse_int(key, value));
  else if (key == "in_channels") {
    cfg.model.in_channels = static_cast<int>(parse_int(key, value));
    cfg.disc.in_channels = cfg.model.in_channels;
  } else if (key == "residual") cfg.model.residual = parse_bool(key, value);
  else if (key == "shared_encoder") cfg.model.shared_encoder = parse_bool(key, value);
  else if (key == "lambda1") cfg.model.lambda1 = parse_dbl(key, value);
  else if (key == "lambda2") cfg.model.lambda2 = parse_dbl(key, value);
  else if (key == "disc_layers") cfg.disc.n_layers = static_cast<int>(parse_int(key, value));
  else if (key == "disc_width") cfg.disc.width = static_cast<int>(parse_int(key, value));
  else if (key == "disc_tap") cfg.disc.k_tap = static_cast<int>(parse_int(key, value));
  else if (key == "lr") cfg.adam.lr = parse_dbl(key, value);
  else if (key == "beta1") cfg.adam.beta1 = parse_dbl(key, value);
  else if (key == "beta2") cfg.adam.beta2 = parse_dbl(key, value);
  else if (key == "adam_eps") cfg.adam.eps = parse_dbl(key, value);
  else if (key == "frame_size") cfg.frame_size = static_cast<int>(parse_int(key, value));
  else if (key == "context") cfg.context = static_cast<int>(parse_int(key, value));
  else if (key == "horizon") cfg.horizon = static_cast<int>(parse_int(key, value));
  else if (key == "batch") cfg.batch = static_cast<int>(parse_int(key, value));
  else if (key == "steps") cfg.steps = static_cast<int>(parse_int(key, value));
  else if (key == "loss") cfg.loss_mode = parse_loss_mode(value);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(parse_int(key, value));
  else if (key == "threads") cfg.threads = static_cast<int>(parse_int(key, value));
  else if (key == "timing_samples") cfg.timing_samples = static_cast<int>(parse_int(key, value));
  else if (key == "ablate_steps") cfg.ablate_steps = static_cast<int>(parse_int(key, value));
  else throw UsageError("unknown config key '" + key + "'");
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) throw UsageError("cannot open config file " + path);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError(path + ":" + std::to_string(lineno) + ": expected 'key = value'");
    config_set(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

}  // namespace strpm
