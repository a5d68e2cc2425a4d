// SPDX-License-Identifier: Apache-2.0

#include "strpm/objectives.hpp"

#include <cmath>
#include <random>

namespace strpm {

namespace {

// Same deterministic init scheme as the predictor.
struct InitRng {
  std::mt19937_64 gen;
  explicit InitRng(std::uint64_t seed) : gen(seed) {}
  double uniform01() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double symmetric(double a) { return a * (2.0 * uniform01() - 1.0); }
};

ConvLayer make_conv(std::vector<NamedParam>& reg, InitRng& rng, const std::string& name, int out_c,
                    int in_c, int k, int stride, int padding) {
  ConvLayer l;
  l.p.weight = Tensor::zeros({out_c, in_c, k, k});
  const double bound = std::sqrt(1.0 / static_cast<double>(in_c * k * k));
  for (long long i = 0; i < l.p.weight.numel(); ++i) l.p.weight.data()[i] = rng.symmetric(bound);
  l.p.weight.set_requires_grad(true);
  l.p.bias = Tensor::zeros({1, 1, 1, out_c}).set_requires_grad(true);
  l.p.stride = stride;
  l.p.padding = padding;
  reg.push_back({name + ".weight", l.p.weight});
  reg.push_back({name + ".bias", l.p.bias});
  return l;
}

}  // namespace

void DiscConfig::validate() const {
  check(in_channels >= 1, "disc config: in_channels must be >= 1");
  check(width >= 1, "disc config: width must be >= 1");
  check(n_layers >= 1, "disc config: n_layers must be >= 1");
  check(k_tap >= 1 && k_tap <= n_layers, "disc config: k_tap must be in [1, n_layers]");
}

Discriminator::Discriminator(const DiscConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  InitRng rng(seed);
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const int ci = i == 0 ? cfg_.in_channels : cfg_.width;
    convs_.push_back(make_conv(params_, rng, "disc.conv" + std::to_string(i), cfg_.width, ci, 4, 2, 1));
  }
  head_ = make_conv(params_, rng, "disc.head", 1, cfg_.width, 1, 1, 0);
}

DiscOut Discriminator::forward(const Tensor& frame) const {
  check(frame.shape().c == cfg_.in_channels, "disc forward: frame has " + std::to_string(frame.shape().c) +
                                                 " channels, expected " + std::to_string(cfg_.in_channels));
  DiscOut out;
  Tensor x = frame;
  for (size_t i = 0; i < convs_.size(); ++i) {
    x = tanh(convs_[i](x));
    if (static_cast<int>(i) + 1 == cfg_.k_tap) out.features = x;
  }
  out.prob = sigmoid(head_(spatial_mean(x)));
  return out;
}

namespace {

Tensor accumulate(Tensor acc, const Tensor& term) { return acc.defined() ? add(acc, term) : term; }

Tensor mean_log_prob(const Tensor& prob, bool one_minus) {
  Tensor p = clamp(prob, kProbEps, 1.0 - kProbEps);
  if (one_minus) p = affine(p, -1.0, 1.0);
  return mean_all(log(p));
}

}  // namespace

Tensor gan_loss_d(const Discriminator& d, const std::vector<Tensor>& real,
                  const std::vector<Tensor>& fake) {
  check(!real.empty() && real.size() == fake.size(),
        "gan_loss_d: real/fake frame counts differ or are empty");
  Tensor acc;
  for (size_t t = 0; t < real.size(); ++t) {
    acc = accumulate(acc, mean_log_prob(d.forward(real[t]).prob, false));
    acc = accumulate(acc, mean_log_prob(d.forward(fake[t].detach()).prob, true));
  }
  return scale(acc, -1.0);
}

Tensor gan_loss_p(const Discriminator& d, const std::vector<Tensor>& fake) {
  check(!fake.empty(), "gan_loss_p: empty frame list");
  Tensor acc;
  for (const Tensor& f : fake) acc = accumulate(acc, mean_log_prob(d.forward(f).prob, false));
  return scale(acc, -1.0);
}

Tensor lp_loss(const Discriminator& d, const std::vector<Tensor>& real,
               const std::vector<Tensor>& fake) {
  check(!real.empty() && real.size() == fake.size(),
        "lp_loss: real/fake frame counts differ or are empty");
  Tensor acc;
  for (size_t t = 0; t < real.size(); ++t)
    acc = accumulate(acc, mse(d.forward(real[t]).features, d.forward(fake[t]).features));
  return acc;
}

Tensor predictor_loss(const Tensor& mse_term, const Tensor& lp_term, const Tensor& gan_term,
                      const LossWeights& w) {
  check(mse_term.numel() == 1 && lp_term.numel() == 1 && gan_term.numel() == 1,
        "predictor_loss: all terms must be scalar");
  check(std::isfinite(mse_term.scalar()) && std::isfinite(lp_term.scalar()) &&
            std::isfinite(gan_term.scalar()),
        "predictor_loss: non-finite loss term");
  return add(mse_term, add(scale(lp_term, w.lambda1), scale(gan_term, w.lambda2)));
}

}  // namespace strpm
