// SPDX-License-Identifier: Apache-2.0
//
// Dense 4-D tensor arithmetic with reverse-mode automatic differentiation.
// Tensors are (batch, channel, height, width), row-major, double precision.
// Ops record backward rules onto the thread-local active Tape; without an
// active tape they run forward-only.

#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace strpm {

[[noreturn]] void fail(const std::string& msg);

inline void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

struct Shape {
  int n = 0, c = 0, h = 0, w = 0;
  long long numel() const { return 1LL * n * c * h * w; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tape;

class Tensor {
 public:
  struct Impl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until touched by backward
    bool requires_grad = false;
    int node = -1;  // index into `tape` when op-recorded
    Tape* tape = nullptr;
    void ensure_grad() {
      if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
  };

  Tensor() = default;

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor from_data(Shape s, std::vector<double> data);

  bool defined() const { return impl != nullptr; }
  const Shape& shape() const { return impl->shape; }
  long long numel() const { return impl->shape.numel(); }

  double* data() { return impl->value.data(); }
  const double* data() const { return impl->value.data(); }
  double& at(int n, int c, int y, int x);
  double at(int n, int c, int y, int x) const;
  double scalar() const;

  bool requires_grad() const { return impl && impl->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl->requires_grad = v;
    return *this;
  }
  const std::vector<double>& grad() const { return impl->grad; }
  void zero_grad() {
    if (impl) impl->grad.assign(impl->value.size(), 0.0);
  }

  // Deep value copy; keeps requires_grad, drops any tape association.
  Tensor clone() const;
  // Deep value copy severed from the graph (no grad flows through it).
  Tensor detach() const;

  bool all_finite() const;

  std::shared_ptr<Impl> impl;
};

// Shared convolution parameters. weight dims are (a, b, kh, kw):
// conv2d maps b -> a channels, conv_transpose2d maps a -> b channels,
// so one weight array serves as its own adjoint pair.
// bias length is a for conv2d, b for conv_transpose2d; empty means none.
struct ConvParams {
  Tensor weight;
  Tensor bias;
  int stride = 1;
  int padding = 0;
};

// Records backward rules of one forward pass; rebuilt per pass.
// Confined to a single thread; activate with Tape::Scope.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  class Scope {
   public:
    explicit Scope(Tape& t);
    ~Scope();

   private:
    Tape* prev_;
  };

  static Tape* active();

  int record(std::function<void()> backward_rule);
  size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays recorded rules in reverse,
  // visiting each node at most once. Gradients accumulate into every
  // requires_grad tensor reachable from `loss`.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> nodes_;
};

// Cross-correlation (no kernel flip) of x with p.weight plus broadcast bias.
// Output spatial size = floor((in + 2*padding - k)/stride) + 1, must be >= 1.
Tensor conv2d(const Tensor& x, const ConvParams& p);

// Transposed convolution (scatter-accumulate adjoint of conv2d).
// Output spatial size = (in - 1)*stride - 2*padding + k.
Tensor conv_transpose2d(const Tensor& x, const ConvParams& p);

Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

Tensor add(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
// y = mul*x + shift, element-wise.
Tensor affine(const Tensor& x, double mul, double shift);

Tensor concat_channels(const std::vector<Tensor>& xs);

// Mean of squared element-wise differences; scalar result.
Tensor mse(const Tensor& a, const Tensor& b);

Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);
// Mean over the spatial dims; result shape (n, c, 1, 1).
Tensor spatial_mean(const Tensor& x);

// Element-wise natural log; input must be strictly positive.
Tensor log(const Tensor& x);

// Element-wise clamp to [lo, hi]; gradient passes only in the open interior.
Tensor clamp(const Tensor& x, double lo, double hi);

// Max over elements of |analytic - central_difference| /
// max(|analytic|, |cd|, 1e-8), for scalar-valued f evaluated at x.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps);

}  // namespace strpm
