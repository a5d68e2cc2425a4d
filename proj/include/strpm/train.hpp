// SPDX-License-Identifier: Apache-2.0
//
// Adam optimization, the alternating predictor/discriminator training loop,
// evaluation metrics, the structural ablation harness and feature dumps.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "strpm/config.hpp"
#include "strpm/data.hpp"
#include "strpm/model.hpp"
#include "strpm/objectives.hpp"

namespace strpm {

// Standard Adam with bias correction; moments kept in double precision.
class Adam {
 public:
  Adam() = default;
  Adam(const AdamConfig& cfg, const std::vector<NamedParam>& params);

  // Applies one update from the accumulated gradients. A missing gradient
  // buffer counts as zero; a non-finite gradient aborts naming the parameter.
  void step(std::vector<NamedParam>& params);

  const AdamConfig& config() const { return cfg_; }
  long long step_count() const { return steps_; }
  const std::vector<std::vector<double>>& m() const { return m_; }
  const std::vector<std::vector<double>>& v() const { return v_; }
  void load_state(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
                  long long steps);

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long long steps_ = 0;
};

// Predictor, discriminator and their optimizers built from one RunConfig.
// The discriminator is seeded at seed+1 so the two initializations are
// parameter-disjoint but jointly reproducible.
struct System {
  RunConfig cfg;
  StrpmModel model;
  Discriminator disc;
  Adam adam_p, adam_d;

  explicit System(const RunConfig& cfg);
};

struct LossRow {
  long long step = 0;
  double mse = 0.0, lp = 0.0, gan_p = 0.0, gan_d = 0.0;
};

// Teacher-forced next-frame training. Every step draws one window batch,
// updates the predictor on mse + lambda1*lp + lambda2*gan_p (terms beyond
// the mode zeroed and skipped), then runs one discriminator update when the
// adversarial loss is active. Appends CSV rows "step,mse,lp,gan_p,gan_d"
// to log_path when non-empty, and returns the rows.
std::vector<LossRow> train(System& sys, const std::vector<std::vector<Tensor>>& dataset, int steps,
                           LossMode mode, const std::string& log_path = "");

// 10*log10(1/MSE) for frames in [0,1]; capped at 100 dB when MSE < 1e-10.
double psnr(const Tensor& pred, const Tensor& truth);

// Discriminator-feature distance between two frames; lower is better.
double perceptual_proxy(const Discriminator& d, const Tensor& pred, const Tensor& truth);

struct EvalReport {
  std::vector<double> psnr;   // per horizon step, mean over windows
  std::vector<double> proxy;  // per horizon step, mean over windows
  long long params = 0;       // predictor parameter count
  long long flops = 0;        // one predictor step on one frame
  double sec_per_sample = 0.0;
  int windows = 0;
};

// Autoregressive rollout on every context+horizon window of the dataset;
// metric reductions run in window-index order regardless of threads.
EvalReport evaluate(const System& sys, const std::vector<std::vector<Tensor>>& dataset, int context,
                    int horizon, int timing_samples, int threads = 1);

// Structural ablation variants; unknown names are errors.
extern const std::vector<std::string> kAblationVariants;
ModelConfig variant_config(const ModelConfig& base, const std::string& variant);

struct AblationRow {
  std::string variant;
  double psnr = 0.0, proxy = 0.0;
  long long params = 0, flops = 0;
};

// Trains every variant with the same seed/steps under MSE-only loss and
// evaluates it on the dataset. Base config must allow theta = 5.
std::vector<AblationRow> ablate(const RunConfig& base, const std::vector<std::vector<Tensor>>& dataset,
                                const std::vector<std::string>& variants, int steps);

struct FeatureCapture {
  Tensor t_input, s_input;  // temporal/spatial features entering the layer
  Tensor stif, strf;
};

// Teacher-forced feed of frames 1..step capturing one layer's features.
FeatureCapture capture_features(const StrpmModel& model, const std::vector<Tensor>& frames, int layer,
                                int step);

// Writes channel-mean heatmaps (min-max normalized PGMs) of the captured
// features plus a sidecar recording each map's pre-normalization range.
void dump_features(const StrpmModel& model, const std::vector<Tensor>& frames, int layer, int step,
                   const std::string& out_dir);

}  // namespace strpm
