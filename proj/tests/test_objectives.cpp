// SPDX-License-Identifier: Apache-2.0
//
// Discriminator and loss tests, including the closed-form adversarial loss
// values and the predictor/discriminator detachment contract.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "strpm/objectives.hpp"
#include "strpm/tensor.hpp"
#include "test_util.hpp"

using namespace strpm;
using namespace strpm_test;

namespace {

DiscConfig tiny_disc(int layers = 2, int width = 4) {
  DiscConfig cfg;
  cfg.in_channels = 1;
  cfg.width = width;
  cfg.n_layers = layers;
  cfg.k_tap = layers;
  return cfg;
}

// Single-layer critic on 2x2 frames: logit = head_w * tanh(sum(pixels) + bias).
Discriminator crafted_disc(double head_weight, double conv_bias) {
  Discriminator d(tiny_disc(1, 1), 1);
  zero_params(d.params());
  fill_param(d.params(), "disc.conv0.weight", 1.0);
  fill_param(d.params(), "disc.conv0.bias", conv_bias);
  fill_param(d.params(), "disc.head.weight", head_weight);
  return d;
}

}  // namespace

TEST_CASE("disc_forward basics") {
  Discriminator d(tiny_disc(4, 16), 3);

  SUBCASE("zero weights give probability exactly one half") {
    zero_params(d.params());
    const DiscOut out = d.forward(random_tensor({2, 1, 32, 32}, 4, 0.0, 1.0));
    for (long long i = 0; i < out.prob.numel(); ++i) CHECK(out.prob.data()[i] == 0.5);
  }

  SUBCASE("probability strictly in (0,1) and tap width matches config") {
    const DiscOut out = d.forward(random_tensor({3, 1, 32, 32}, 5, 0.0, 1.0));
    CHECK(out.prob.shape() == Shape{3, 1, 1, 1});
    for (long long i = 0; i < out.prob.numel(); ++i) {
      CHECK(out.prob.data()[i] > 0.0);
      CHECK(out.prob.data()[i] < 1.0);
    }
    CHECK(out.features.shape().c == 16);
  }

  SUBCASE("tap layer is configurable") {
    DiscConfig cfg = tiny_disc(3, 8);
    cfg.k_tap = 2;
    Discriminator d2(cfg, 6);
    const DiscOut out = d2.forward(random_tensor({1, 1, 32, 32}, 7, 0.0, 1.0));
    CHECK(out.features.shape() == Shape{1, 8, 8, 8});  // 32 -> 16 -> 8 after two stages
  }

  SUBCASE("channel mismatch is an error") {
    CHECK_THROWS(d.forward(random_tensor({1, 3, 32, 32}, 8)));
  }
}

TEST_CASE("gan_loss_d closed forms") {
  // Zero weights make D identically 0.5.
  Discriminator half(tiny_disc(), 9);
  zero_params(half.params());
  std::vector<Tensor> real, fake;
  for (int t = 0; t < 3; ++t) {
    real.push_back(random_tensor({1, 1, 8, 8}, 10 + t, 0.0, 1.0));
    fake.push_back(random_tensor({1, 1, 8, 8}, 20 + t, 0.0, 1.0));
  }
  CHECK(gan_loss_d(half, real, fake).scalar() == doctest::Approx(3.0 * 2.0 * std::log(2.0)).epsilon(1e-9));
  CHECK(gan_loss_d(half, {real[0]}, {fake[0]}).scalar() ==
        doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
  CHECK(gan_loss_d(half, {real[0]}, {fake[0]}).scalar() == doctest::Approx(1.386294).epsilon(1e-6));

  SUBCASE("near-perfect discriminator drives the loss to ~0") {
    // Saturated critic: real frames (all ones) -> prob ~ 1, fake (all zeros)
    // -> prob ~ 0; the clamp keeps every log finite.
    Discriminator d = crafted_disc(80.0, -2.0);
    const std::vector<Tensor> ones3(3, Tensor::full({1, 1, 2, 2}, 1.0));
    const std::vector<Tensor> zeros3(3, Tensor::zeros({1, 1, 2, 2}));
    const double loss = gan_loss_d(d, ones3, zeros3).scalar();
    CHECK(loss >= 0.0);
    CHECK(loss < 2 * 3 * 1.1e-7);
  }

  SUBCASE("count mismatch is an error") {
    CHECK_THROWS(gan_loss_d(half, real, {fake[0]}));
    CHECK_THROWS(gan_loss_d(half, {}, {}));
  }

  SUBCASE("non-negative on random inputs") {
    Discriminator d(tiny_disc(), 31);
    CHECK(gan_loss_d(d, real, fake).scalar() >= 0.0);
  }
}

TEST_CASE("gan_loss_p closed forms and monotonicity") {
  Discriminator half(tiny_disc(), 33);
  zero_params(half.params());
  std::vector<Tensor> fake;
  for (int t = 0; t < 3; ++t) fake.push_back(random_tensor({1, 1, 8, 8}, 40 + t, 0.0, 1.0));
  CHECK(gan_loss_p(half, fake).scalar() == doctest::Approx(3.0 * std::log(2.0)).epsilon(1e-9));
  CHECK(gan_loss_p(half, fake).scalar() == doctest::Approx(2.079442).epsilon(1e-6));

  SUBCASE("confident discriminator gives ~0") {
    Discriminator d = crafted_disc(80.0, -2.0);
    const std::vector<Tensor> ones1(1, Tensor::full({1, 1, 2, 2}, 1.0));
    CHECK(gan_loss_p(d, ones1).scalar() < 1.1e-7);
  }

  SUBCASE("loss decreases as D(fake) increases") {
    // Head bias pins the probability: sigma(logit(p)) = p.
    auto at_prob = [&](double p) {
      Discriminator d(tiny_disc(), 35);
      zero_params(d.params());
      fill_param(d.params(), "disc.head.bias", std::log(p / (1.0 - p)));
      return gan_loss_p(d, fake).scalar();
    };
    CHECK(at_prob(0.6) < at_prob(0.3));
    CHECK(at_prob(0.3) == doctest::Approx(-3.0 * std::log(0.3)).epsilon(1e-9));
  }
}

TEST_CASE("lp_loss") {
  Discriminator d(tiny_disc(), 43);
  std::vector<Tensor> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(random_tensor({1, 1, 8, 8}, 50 + t, 0.0, 1.0));

  SUBCASE("identical frames give zero") {
    CHECK(lp_loss(d, frames, frames).scalar() == 0.0);
  }

  SUBCASE("symmetric in its arguments") {
    std::vector<Tensor> other;
    for (int t = 0; t < 3; ++t) other.push_back(random_tensor({1, 1, 8, 8}, 60 + t, 0.0, 1.0));
    CHECK(lp_loss(d, frames, other).scalar() == doctest::Approx(lp_loss(d, other, frames).scalar()));
    CHECK(lp_loss(d, frames, other).scalar() > 0.0);
  }

  SUBCASE("constant feature offset gives c squared") {
    // tanh is odd: pre-activations -1 and +1 produce features 2*tanh(1)
    // apart, so the single-feature MSE is (2*tanh(1))^2.
    Discriminator crafted = crafted_disc(1.0, 0.0);
    const Tensor lo = Tensor::full({1, 1, 2, 2}, -0.25);  // sum = -1
    const Tensor hi = Tensor::full({1, 1, 2, 2}, 0.25);   // sum = +1
    const double c = 2.0 * std::tanh(1.0);
    CHECK(lp_loss(crafted, {lo}, {hi}).scalar() == doctest::Approx(c * c).epsilon(1e-12));
  }

  SUBCASE("count mismatch is an error") {
    CHECK_THROWS(lp_loss(d, frames, {frames[0]}));
  }
}

TEST_CASE("predictor_loss composition") {
  auto scalar = [](double v) { return Tensor::full({1, 1, 1, 1}, v); };
  const LossWeights paper{0.01, 0.001};
  const double got = predictor_loss(scalar(1.0), scalar(2.0), scalar(3.0), paper).scalar();
  CHECK(got == 1.0 + (0.01 * 2.0 + 0.001 * 3.0));
  CHECK(got == doctest::Approx(1.023).epsilon(1e-12));

  CHECK(predictor_loss(scalar(0.0), scalar(0.0), scalar(0.0), paper).scalar() == 0.0);

  const LossWeights mse_only{0.0, 0.0};
  CHECK(predictor_loss(scalar(1.5), scalar(7.0), scalar(9.0), mse_only).scalar() == 1.5);

  CHECK_THROWS(predictor_loss(scalar(std::nan("")), scalar(0.0), scalar(0.0), paper));
  CHECK_THROWS(predictor_loss(scalar(1.0), random_tensor({1, 2, 1, 1}, 1), scalar(0.0), paper));
}

TEST_CASE("gan_loss_d is detached from the predictor") {
  ModelConfig mcfg;
  mcfg.layers = 2;
  mcfg.hidden = 4;
  mcfg.kernel = 3;
  mcfg.tau = 2;
  mcfg.theta = 2;
  mcfg.downsample = 4;
  StrpmModel model(mcfg, 71);
  Discriminator disc(tiny_disc(2, 4), 72);

  for (NamedParam& p : model.params()) p.tensor.zero_grad();
  for (NamedParam& p : disc.params()) p.tensor.zero_grad();
  Tape tape;
  {
    Tape::Scope scope(tape);
    NetworkState st = model.initial_state(1, 8, 8);
    std::vector<Tensor> fakes, reals;
    for (int t = 0; t < 2; ++t) {
      const Tensor frame = random_tensor({1, 1, 8, 8}, 80 + t, 0.0, 1.0);
      fakes.push_back(model.step(frame, st).raw);
      reals.push_back(random_tensor({1, 1, 8, 8}, 90 + t, 0.0, 1.0));
    }
    tape.backward(gan_loss_d(disc, reals, fakes));
  }
  for (const NamedParam& p : model.params())
    for (double g : p.tensor.grad()) CHECK(g == 0.0);
  bool disc_touched = false;
  for (const NamedParam& p : disc.params())
    for (double g : p.tensor.grad()) disc_touched = disc_touched || g != 0.0;
  CHECK(disc_touched);
}

TEST_CASE("losses pass gradient checks through a tiny discriminator") {
  Discriminator d(tiny_disc(2, 4), 101);
  const Tensor real = random_tensor({1, 1, 8, 8}, 102, 0.0, 1.0);
  const Tensor fake0 = random_tensor({1, 1, 8, 8}, 103, 0.0, 1.0);

  CHECK(grad_check([&](const Tensor& x) { return gan_loss_p(d, {x}); }, fake0, 1e-5) < 1e-3);
  CHECK(grad_check([&](const Tensor& x) { return lp_loss(d, {real}, {x}); }, fake0, 1e-5) < 1e-3);

  // d(gan_loss_d)/d(disc weights): analytic pass, then in-place central
  // differences over the first conv weight.
  Tensor* w = find_param(d.params(), "disc.conv0.weight");
  REQUIRE(w != nullptr);
  for (NamedParam& p : d.params()) p.tensor.zero_grad();
  {
    Tape tape;
    Tape::Scope scope(tape);
    tape.backward(gan_loss_d(d, {real}, {fake0}));
  }
  const std::vector<double> analytic = w->grad();
  const double eps = 1e-5;
  double max_err = 0.0;
  for (long long i = 0; i < w->numel(); ++i) {
    const double saved = w->data()[i];
    w->data()[i] = saved + eps;
    const double fp = gan_loss_d(d, {real}, {fake0}).scalar();
    w->data()[i] = saved - eps;
    const double fm = gan_loss_d(d, {real}, {fake0}).scalar();
    w->data()[i] = saved;
    const double cd = (fp - fm) / (2.0 * eps);
    const double a = analytic[static_cast<size_t>(i)];
    max_err = std::max(max_err, std::abs(a - cd) / std::max({std::abs(a), std::abs(cd), 1e-8}));
  }
  CHECK(max_err < 1e-3);
}
