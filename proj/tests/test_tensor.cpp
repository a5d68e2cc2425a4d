// SPDX-License-Identifier: Apache-2.0
//
// Tensor core and autodiff tests. Convolutions are checked against
// independent nested-loop reference implementations kept in this file.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "strpm/tensor.hpp"

using namespace strpm;

namespace {

Tensor random_tensor(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 gen(seed);
  Tensor t = Tensor::zeros(s);
  for (long long i = 0; i < t.numel(); ++i) {
    const double u = static_cast<double>(gen() >> 11) * 0x1.0p-53;
    t.data()[i] = lo + (hi - lo) * u;
  }
  return t;
}

// Reference cross-correlation, independent of the library implementation.
Tensor conv2d_ref(const Tensor& x, const ConvParams& p) {
  const Shape xs = x.shape(), ws = p.weight.shape();
  const int ho = (xs.h + 2 * p.padding - ws.h) / p.stride + 1;
  const int wo = (xs.w + 2 * p.padding - ws.w) / p.stride + 1;
  Tensor out = Tensor::zeros({xs.n, ws.n, ho, wo});
  for (int n = 0; n < xs.n; ++n)
    for (int oc = 0; oc < ws.n; ++oc)
      for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox) {
          double acc = p.bias.defined() ? p.bias.data()[oc] : 0.0;
          for (int ic = 0; ic < ws.c; ++ic)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int iy = oy * p.stride - p.padding + ky;
                const int ix = ox * p.stride - p.padding + kx;
                if (iy < 0 || iy >= xs.h || ix < 0 || ix >= xs.w) continue;
                acc += x.at(n, ic, iy, ix) * p.weight.at(oc, ic, ky, kx);
              }
          out.at(n, oc, oy, ox) = acc;
        }
  return out;
}

// Reference scatter-accumulate transposed convolution.
Tensor conv_transpose2d_ref(const Tensor& x, const ConvParams& p) {
  const Shape xs = x.shape(), ws = p.weight.shape();
  const int ho = (xs.h - 1) * p.stride - 2 * p.padding + ws.h;
  const int wo = (xs.w - 1) * p.stride - 2 * p.padding + ws.w;
  Tensor out = Tensor::zeros({xs.n, ws.c, ho, wo});
  for (int n = 0; n < xs.n; ++n)
    for (int oc = 0; oc < ws.c; ++oc) {
      if (p.bias.defined())
        for (int y = 0; y < ho; ++y)
          for (int xx = 0; xx < wo; ++xx) out.at(n, oc, y, xx) = p.bias.data()[oc];
      for (int ic = 0; ic < ws.n; ++ic)
        for (int y = 0; y < xs.h; ++y)
          for (int xx = 0; xx < xs.w; ++xx)
            for (int ky = 0; ky < ws.h; ++ky)
              for (int kx = 0; kx < ws.w; ++kx) {
                const int oy = y * p.stride - p.padding + ky;
                const int ox = xx * p.stride - p.padding + kx;
                if (oy < 0 || oy >= ho || ox < 0 || ox >= wo) continue;
                out.at(n, oc, oy, ox) += x.at(n, ic, y, xx) * p.weight.at(ic, oc, ky, kx);
              }
    }
  return out;
}

double sum_product(const Tensor& a, const Tensor& b) {
  double acc = 0.0;
  for (long long i = 0; i < a.numel(); ++i) acc += a.data()[i] * b.data()[i];
  return acc;
}

}  // namespace

TEST_CASE("make_tensor basics") {
  Tensor z = Tensor::zeros({1, 1, 2, 2});
  CHECK(z.numel() == 4);
  for (long long i = 0; i < 4; ++i) CHECK(z.data()[i] == 0.0);

  Tensor d = Tensor::from_data({1, 2, 1, 1}, {3.0, 4.0});
  CHECK(d.at(0, 0, 0, 0) == 3.0);
  CHECK(d.at(0, 1, 0, 0) == 4.0);

  CHECK_THROWS(Tensor::from_data({1, 1, 2, 2}, {1.0, 2.0, 3.0}));
  CHECK_THROWS(Tensor::zeros({0, 1, 2, 2}));
}

TEST_CASE("conv2d matches the reference and the hand example") {
  // 3x3 all-ones kernel over [[1..9]] with same padding: center = 45.
  ConvParams p;
  p.weight = Tensor::from_data({1, 1, 3, 3}, std::vector<double>(9, 1.0));
  p.bias = Tensor::zeros({1, 1, 1, 1});
  p.stride = 1;
  p.padding = 1;
  const Tensor x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  const Tensor y = conv2d(x, p);
  CHECK(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.at(0, 0, 1, 1) == doctest::Approx(45.0).epsilon(1e-12));
  const Tensor ref = conv2d_ref(x, p);
  for (long long i = 0; i < y.numel(); ++i) CHECK(y.data()[i] == doctest::Approx(ref.data()[i]));

  SUBCASE("zero kernel gives zero output") {
    ConvParams z = p;
    z.weight = Tensor::zeros({1, 1, 3, 3});
    const Tensor out = conv2d(random_tensor({2, 1, 5, 5}, 3), z);
    for (long long i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);
  }

  SUBCASE("1x1 identity kernel") {
    ConvParams id;
    id.weight = Tensor::from_data({1, 1, 1, 1}, {1.0});
    id.bias = Tensor::zeros({1, 1, 1, 1});
    const Tensor in = random_tensor({1, 1, 4, 4}, 5);
    const Tensor out = conv2d(in, id);
    for (long long i = 0; i < in.numel(); ++i) CHECK(out.data()[i] == in.data()[i]);
  }

  SUBCASE("random configurations against the oracle") {
    std::uint64_t seed = 100;
    for (const auto& [ci, co, k, stride, pad] :
         {std::tuple{3, 2, 3, 1, 1}, std::tuple{2, 4, 2, 2, 0}, std::tuple{1, 1, 5, 1, 2},
          std::tuple{4, 3, 3, 2, 1}}) {
      ConvParams q;
      q.weight = random_tensor({co, ci, k, k}, seed++);
      q.bias = random_tensor({1, 1, 1, co}, seed++);
      q.stride = stride;
      q.padding = pad;
      const Tensor in = random_tensor({2, ci, 6, 6}, seed++);
      const Tensor got = conv2d(in, q);
      const Tensor want = conv2d_ref(in, q);
      REQUIRE(got.shape() == want.shape());
      for (long long i = 0; i < got.numel(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
    }
  }

  SUBCASE("errors") {
    CHECK_THROWS(conv2d(random_tensor({1, 2, 4, 4}, 1), p));  // channel mismatch
    ConvParams big;
    big.weight = Tensor::zeros({1, 1, 7, 7});
    CHECK_THROWS(conv2d(random_tensor({1, 1, 4, 4}, 2), big));  // output < 1
  }
}

TEST_CASE("conv_transpose2d scatters, matches the reference, and is the conv adjoint") {
  ConvParams p;
  p.weight = Tensor::from_data({1, 1, 2, 2}, {1, 1, 1, 1});
  p.stride = 2;
  p.padding = 0;
  const Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor y = conv_transpose2d(x, p);
  REQUIRE(y.shape() == Shape{1, 1, 4, 4});
  // Each input value fills a disjoint 2x2 block.
  for (int by = 0; by < 2; ++by)
    for (int bx = 0; bx < 2; ++bx) {
      const double v = x.at(0, 0, by, bx);
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx) CHECK(y.at(0, 0, 2 * by + dy, 2 * bx + dx) == v);
    }

  SUBCASE("zero weights give zero output") {
    ConvParams z = p;
    z.weight = Tensor::zeros({1, 1, 2, 2});
    const Tensor out = conv_transpose2d(random_tensor({1, 1, 3, 3}, 4), z);
    for (long long i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == 0.0);
  }

  SUBCASE("random configurations against the oracle") {
    std::uint64_t seed = 200;
    for (const auto& [a, b, k, stride, pad] :
         {std::tuple{2, 3, 3, 1, 1}, std::tuple{3, 2, 2, 2, 0}, std::tuple{1, 4, 4, 2, 1}}) {
      ConvParams q;
      q.weight = random_tensor({a, b, k, k}, seed++);
      q.bias = random_tensor({1, 1, 1, b}, seed++);
      q.stride = stride;
      q.padding = pad;
      const Tensor in = random_tensor({2, a, 5, 5}, seed++);
      const Tensor got = conv_transpose2d(in, q);
      const Tensor want = conv_transpose2d_ref(in, q);
      REQUIRE(got.shape() == want.shape());
      for (long long i = 0; i < got.numel(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
    }
  }

  SUBCASE("adjoint identity with shared weights") {
    std::uint64_t seed = 300;
    for (const auto& [co, ci, k, stride, pad] : {std::tuple{3, 2, 3, 1, 1}, std::tuple{2, 3, 2, 2, 0}}) {
      ConvParams q;
      q.weight = random_tensor({co, ci, k, k}, seed++);
      q.stride = stride;
      q.padding = pad;
      const Tensor xin = random_tensor({2, ci, 6, 6}, seed++);
      const Tensor fwd = conv2d(xin, q);
      const Tensor yin = random_tensor(fwd.shape(), seed++);
      const double lhs = sum_product(fwd, yin);
      const double rhs = sum_product(xin, conv_transpose2d(yin, q));
      CHECK(std::abs(lhs - rhs) < 1e-10);
    }
  }
}

TEST_CASE("activations") {
  const Tensor zero = Tensor::zeros({1, 1, 1, 1});
  CHECK(sigmoid(zero).scalar() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(tanh(zero).scalar() == 0.0);
  const Tensor ln3 = Tensor::full({1, 1, 1, 1}, std::log(3.0));
  CHECK(sigmoid(ln3).scalar() == doctest::Approx(0.75).epsilon(1e-12));

  // Strict open ranges on random inputs, including large magnitudes.
  const Tensor x = random_tensor({2, 4, 6, 6}, 9, -40.0, 40.0);
  const Tensor s = sigmoid(x), t = tanh(x);
  for (long long i = 0; i < x.numel(); ++i) {
    CHECK(s.data()[i] > 0.0);
    CHECK(s.data()[i] < 1.0);
    CHECK(t.data()[i] > -1.0);
    CHECK(t.data()[i] < 1.0);
  }
}

TEST_CASE("elementwise ops and concat") {
  const Tensor x = random_tensor({1, 2, 3, 3}, 11);
  const Tensor ones = Tensor::full(x.shape(), 1.0);
  const Tensor zeros = Tensor::zeros(x.shape());
  const Tensor h = hadamard(x, ones);
  const Tensor a = add(x, zeros);
  for (long long i = 0; i < x.numel(); ++i) {
    CHECK(h.data()[i] == x.data()[i]);
    CHECK(a.data()[i] == x.data()[i]);
  }
  const Tensor prod = hadamard(Tensor::from_data({1, 1, 1, 2}, {2, 3}), Tensor::from_data({1, 1, 1, 2}, {4, 5}));
  CHECK(prod.data()[0] == 8.0);
  CHECK(prod.data()[1] == 15.0);
  CHECK_THROWS(add(x, Tensor::zeros({1, 2, 3, 4})));

  const Tensor c1 = random_tensor({1, 2, 4, 4}, 12);
  const Tensor c2 = random_tensor({1, 3, 4, 4}, 13);
  const Tensor cat = concat_channels({c1, c2});
  CHECK(cat.shape() == Shape{1, 5, 4, 4});
  for (int y = 0; y < 4; ++y)
    for (int xx = 0; xx < 4; ++xx) {
      CHECK(cat.at(0, 0, y, xx) == c1.at(0, 0, y, xx));
      CHECK(cat.at(0, 2, y, xx) == c2.at(0, 0, y, xx));
    }
  const Tensor single = concat_channels({c1});
  for (long long i = 0; i < c1.numel(); ++i) CHECK(single.data()[i] == c1.data()[i]);
  CHECK_THROWS(concat_channels({}));
  CHECK_THROWS(concat_channels({c1, random_tensor({1, 1, 3, 3}, 14)}));
}

TEST_CASE("mse values") {
  const Tensor x = random_tensor({1, 1, 2, 2}, 15);
  CHECK(mse(x, x).scalar() == 0.0);
  CHECK(mse(Tensor::from_data({1, 1, 1, 1}, {0.0}), Tensor::from_data({1, 1, 1, 1}, {1.0})).scalar() == 1.0);
  const Tensor a = Tensor::from_data({1, 1, 1, 2}, {1, 2});
  const Tensor b = Tensor::from_data({1, 1, 1, 2}, {3, 5});
  CHECK(mse(a, b).scalar() == doctest::Approx(6.5).epsilon(1e-15));
}

TEST_CASE("backward closed forms") {
  SUBCASE("mse against zeros gives 2x/N") {
    Tensor x = random_tensor({1, 2, 3, 3}, 21);
    x.set_requires_grad(true);
    Tape tape;
    {
      Tape::Scope scope(tape);
      Tensor loss = mse(x, Tensor::zeros(x.shape()));
      tape.backward(loss);
    }
    const double n = static_cast<double>(x.numel());
    for (long long i = 0; i < x.numel(); ++i)
      CHECK(x.grad()[i] == doctest::Approx(2.0 * x.data()[i] / n).epsilon(1e-12));
  }
  SUBCASE("sum of scale(x,3) gives 3 everywhere") {
    Tensor x = random_tensor({1, 1, 2, 2}, 22);
    x.set_requires_grad(true);
    Tape tape;
    {
      Tape::Scope scope(tape);
      tape.backward(sum_all(scale(x, 3.0)));
    }
    for (long long i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 3.0);
  }
  SUBCASE("tensor used twice accumulates") {
    Tensor x = random_tensor({1, 1, 2, 2}, 23);
    x.set_requires_grad(true);
    Tape tape;
    {
      Tape::Scope scope(tape);
      tape.backward(sum_all(add(x, x)));
    }
    for (long long i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0);
  }
  SUBCASE("backward errors") {
    Tensor x = random_tensor({1, 1, 2, 2}, 24);
    x.set_requires_grad(true);
    Tape tape;
    Tape::Scope scope(tape);
    Tensor vec = add(x, x);
    CHECK_THROWS(tape.backward(vec));  // not scalar
    Tensor off_tape = Tensor::full({1, 1, 1, 1}, 2.0);
    CHECK_THROWS(tape.backward(off_tape));  // never recorded
  }
}

TEST_CASE("grad_check on primitives and shared subexpressions") {
  CHECK(grad_check([](const Tensor& t) { return sum_all(t); }, random_tensor({2, 2, 3, 3}, 31), 1e-5) <
        1e-10);

  ConvParams p;
  p.weight = random_tensor({3, 2, 3, 3}, 32, -0.5, 0.5);
  p.bias = random_tensor({1, 1, 1, 3}, 33, -0.2, 0.2);
  p.stride = 1;
  p.padding = 1;
  const Tensor zeros_out = Tensor::zeros({2, 3, 6, 6});
  CHECK(grad_check([&](const Tensor& t) { return mse(conv2d(t, p), zeros_out); },
                   random_tensor({2, 2, 6, 6}, 34, -0.5, 0.5), 1e-5) < 1e-4);

  const Tensor zl = Tensor::zeros({2, 4, 6, 6});
  CHECK(grad_check([&](const Tensor& t) { return mse(sigmoid(t), zl); },
                   random_tensor({2, 4, 6, 6}, 35), 1e-5) < 1e-4);

  // Shared subexpression: h = tanh(x) used through two paths.
  CHECK(grad_check(
            [&](const Tensor& t) {
              Tensor h = tanh(t);
              return add(sum_all(hadamard(h, h)), mse(h, zl));
            },
            random_tensor({2, 4, 6, 6}, 36), 1e-5) < 1e-4);

  CHECK_THROWS(grad_check([](const Tensor& t) { return add(t, t); }, random_tensor({1, 1, 2, 2}, 37), 1e-5));
}

TEST_CASE("detach blocks gradients and ops are deterministic") {
  Tensor x = random_tensor({1, 1, 3, 3}, 41);
  x.set_requires_grad(true);
  Tape tape;
  {
    Tape::Scope scope(tape);
    Tensor y = tanh(x);
    Tensor loss = sum_all(y.detach());
    CHECK_THROWS(tape.backward(loss));  // detached result is off the tape
  }

  const Tensor a = random_tensor({2, 3, 5, 5}, 42);
  ConvParams p;
  p.weight = random_tensor({4, 3, 3, 3}, 43);
  p.bias = random_tensor({1, 1, 1, 4}, 44);
  p.padding = 1;
  const Tensor r1 = conv2d(a, p), r2 = conv2d(a, p);
  for (long long i = 0; i < r1.numel(); ++i) CHECK(r1.data()[i] == r2.data()[i]);
}
