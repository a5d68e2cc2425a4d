// SPDX-License-Identifier: Apache-2.0
//
// Frame discriminator and the training losses: adversarial losses for both
// players, the learned perceptual loss over discriminator features, and the
// combined predictor objective.

#pragma once

#include <cstdint>
#include <vector>

#include "strpm/model.hpp"
#include "strpm/tensor.hpp"

namespace strpm {

struct DiscConfig {
  int in_channels = 1;
  int width = 16;    // channels of every conv stage
  int n_layers = 4;  // stride-2 conv stages
  int k_tap = 4;     // 1-based stage whose activation is the feature tap

  void validate() const;
};

struct DiscOut {
  Tensor prob;      // (n,1,1,1), strictly in (0,1)
  Tensor features;  // activation of stage k_tap
};

// Stride-2 convolution stack (kernel 4, padding 1) with tanh activations,
// global average pooling and a linear head with sigmoid output.
class Discriminator {
 public:
  Discriminator(const DiscConfig& cfg, std::uint64_t seed);

  const DiscConfig& config() const { return cfg_; }
  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }

  DiscOut forward(const Tensor& frame) const;

 private:
  DiscConfig cfg_;
  std::vector<ConvLayer> convs_;
  ConvLayer head_;
  std::vector<NamedParam> params_;
};

struct LossWeights {
  double lambda1 = 0.01;
  double lambda2 = 0.001;
};

// Probabilities are clamped to [kProbEps, 1-kProbEps] before any log.
inline constexpr double kProbEps = 1e-7;

// -sum_t [log D(v_t) + log(1 - D(v_hat_t))], per-frame terms averaged over
// the batch. Predicted frames are detached: no gradient reaches the
// predictor through this loss.
Tensor gan_loss_d(const Discriminator& d, const std::vector<Tensor>& real,
                  const std::vector<Tensor>& fake);

// -sum_t log D(v_hat_t); gradients flow into the predictor.
Tensor gan_loss_p(const Discriminator& d, const std::vector<Tensor>& fake);

// sum_t mse(features(v_t), features(v_hat_t)).
Tensor lp_loss(const Discriminator& d, const std::vector<Tensor>& real,
               const std::vector<Tensor>& fake);

// mse + lambda1*lp + lambda2*gan; all terms must be finite scalars.
Tensor predictor_loss(const Tensor& mse_term, const Tensor& lp_term, const Tensor& gan_term,
                      const LossWeights& w);

}  // namespace strpm
