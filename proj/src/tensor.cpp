// SPDX-License-Identifier: Apache-2.0

#include "strpm/tensor.hpp"

#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace strpm {

void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string Shape::str() const {
  std::ostringstream os;
  os << "(" << n << "," << c << "," << h << "," << w << ")";
  return os.str();
}

namespace {

std::shared_ptr<Tensor::Impl> make_impl(Shape s, double fill) {
  check(s.n > 0 && s.c > 0 && s.h > 0 && s.w > 0, "tensor shape components must be positive, got " + s.str());
  auto impl = std::make_shared<Tensor::Impl>();
  impl->shape = s;
  impl->value.assign(static_cast<size_t>(s.numel()), fill);
  return impl;
}

thread_local Tape* g_active_tape = nullptr;

}  // namespace

Tensor Tensor::zeros(Shape s) {
  Tensor t;
  t.impl = make_impl(s, 0.0);
  return t;
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t;
  t.impl = make_impl(s, v);
  return t;
}

Tensor Tensor::from_data(Shape s, std::vector<double> data) {
  Tensor t;
  t.impl = make_impl(s, 0.0);
  check(static_cast<long long>(data.size()) == s.numel(),
        "tensor data length " + std::to_string(data.size()) + " does not match shape " + s.str());
  t.impl->value = std::move(data);
  return t;
}

double& Tensor::at(int n, int c, int y, int x) {
  const Shape& s = impl->shape;
  return impl->value[((static_cast<size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

double Tensor::at(int n, int c, int y, int x) const {
  const Shape& s = impl->shape;
  return impl->value[((static_cast<size_t>(n) * s.c + c) * s.h + y) * s.w + x];
}

double Tensor::scalar() const {
  check(numel() == 1, "scalar() on tensor of shape " + shape().str());
  return impl->value[0];
}

Tensor Tensor::clone() const {
  Tensor t;
  t.impl = std::make_shared<Impl>();
  t.impl->shape = impl->shape;
  t.impl->value = impl->value;
  t.impl->requires_grad = impl->requires_grad;
  return t;
}

Tensor Tensor::detach() const {
  Tensor t;
  t.impl = std::make_shared<Impl>();
  t.impl->shape = impl->shape;
  t.impl->value = impl->value;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : impl->value)
    if (!std::isfinite(v)) return false;
  return true;
}

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int Tape::record(std::function<void()> backward_rule) {
  nodes_.push_back(std::move(backward_rule));
  return static_cast<int>(nodes_.size()) - 1;
}

void Tape::backward(const Tensor& loss) {
  check(loss.defined() && loss.numel() == 1, "backward: loss must be a scalar tensor");
  check(loss.impl->tape == this && loss.impl->node >= 0, "backward: loss is not recorded on this tape");
  loss.impl->ensure_grad();
  loss.impl->grad[0] = 1.0;
  for (int i = loss.impl->node; i >= 0; --i) nodes_[static_cast<size_t>(i)]();
}

namespace {

using ImplPtr = std::shared_ptr<Tensor::Impl>;

// Registers `rule` when a tape is active and any input carries gradient.
void mark_output(Tensor& out, bool any_input_grad, std::function<void()> rule) {
  Tape* t = Tape::active();
  if (!t || !any_input_grad) return;
  out.impl->requires_grad = true;
  out.impl->tape = t;
  out.impl->node = t->record(std::move(rule));
}

bool has_grad_output(const ImplPtr& o) { return !o->grad.empty(); }

}  // namespace

Tensor conv2d(const Tensor& x, const ConvParams& p) {
  const Shape& xs = x.shape();
  const Shape& ws = p.weight.shape();
  const int co = ws.n, ci = ws.c, kh = ws.h, kw = ws.w;
  const int stride = p.stride, pad = p.padding;
  check(stride >= 1 && pad >= 0, "conv2d: stride must be >= 1 and padding >= 0");
  check(xs.c == ci, "conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " + std::to_string(ci));
  const int ho = (xs.h + 2 * pad - kh) / stride + 1;
  const int wo = (xs.w + 2 * pad - kw) / stride + 1;
  check(xs.h + 2 * pad >= kh && xs.w + 2 * pad >= kw && ho >= 1 && wo >= 1,
        "conv2d: output spatial size < 1 for input " + xs.str());
  const bool with_bias = p.bias.defined();
  if (with_bias)
    check(p.bias.numel() == co, "conv2d: bias length " + std::to_string(p.bias.numel()) +
                                    " does not match output channels " + std::to_string(co));

  Tensor out = Tensor::zeros({xs.n, co, ho, wo});
  const double* xd = x.data();
  const double* wd = p.weight.data();
  double* od = out.data();
  for (int n = 0; n < xs.n; ++n) {
    for (int oc = 0; oc < co; ++oc) {
      const double b = with_bias ? p.bias.data()[oc] : 0.0;
      for (int oy = 0; oy < ho; ++oy) {
        const int iy0 = oy * stride - pad;
        for (int ox = 0; ox < wo; ++ox) {
          const int ix0 = ox * stride - pad;
          const int kx0 = ix0 < 0 ? -ix0 : 0;
          const int kx1 = ix0 + kw > xs.w ? xs.w - ix0 : kw;
          double acc = b;
          for (int ic = 0; ic < ci; ++ic) {
            for (int ky = 0; ky < kh; ++ky) {
              const int iy = iy0 + ky;
              if (iy < 0 || iy >= xs.h) continue;
              const double* xrow = xd + ((static_cast<size_t>(n) * ci + ic) * xs.h + iy) * xs.w + ix0;
              const double* wrow = wd + ((static_cast<size_t>(oc) * ci + ic) * kh + ky) * kw;
              for (int kx = kx0; kx < kx1; ++kx) acc += xrow[kx] * wrow[kx];
            }
          }
          od[((static_cast<size_t>(n) * co + oc) * ho + oy) * wo + ox] = acc;
        }
      }
    }
  }

  const bool need_x = x.requires_grad();
  const bool need_w = p.weight.requires_grad();
  const bool need_b = with_bias && p.bias.requires_grad();
  ImplPtr xi = x.impl, wi = p.weight.impl, oi = out.impl;
  ImplPtr bi = with_bias ? p.bias.impl : nullptr;
  mark_output(out, need_x || need_w || need_b, [=]() {
    if (!has_grad_output(oi)) return;
    if (need_x) xi->ensure_grad();
    if (need_w) wi->ensure_grad();
    if (need_b) bi->ensure_grad();
    const double* gd = oi->grad.data();
    const double* xd2 = xi->value.data();
    const double* wd2 = wi->value.data();
    const Shape xs2 = xi->shape;
    for (int n = 0; n < xs2.n; ++n) {
      for (int oc = 0; oc < co; ++oc) {
        for (int oy = 0; oy < ho; ++oy) {
          const int iy0 = oy * stride - pad;
          for (int ox = 0; ox < wo; ++ox) {
            const double g = gd[((static_cast<size_t>(n) * co + oc) * ho + oy) * wo + ox];
            if (g == 0.0) continue;
            if (need_b) bi->grad[oc] += g;
            if (!need_x && !need_w) continue;
            const int ix0 = ox * stride - pad;
            const int kx0 = ix0 < 0 ? -ix0 : 0;
            const int kx1 = ix0 + kw > xs2.w ? xs2.w - ix0 : kw;
            for (int ic = 0; ic < ci; ++ic) {
              for (int ky = 0; ky < kh; ++ky) {
                const int iy = iy0 + ky;
                if (iy < 0 || iy >= xs2.h) continue;
                const size_t xoff = ((static_cast<size_t>(n) * ci + ic) * xs2.h + iy) * xs2.w + ix0;
                const size_t woff = ((static_cast<size_t>(oc) * ci + ic) * kh + ky) * kw;
                if (need_x) {
                  double* dxrow = xi->grad.data() + xoff;
                  const double* wrow = wd2 + woff;
                  for (int kx = kx0; kx < kx1; ++kx) dxrow[kx] += g * wrow[kx];
                }
                if (need_w) {
                  const double* xrow = xd2 + xoff;
                  double* dwrow = wi->grad.data() + woff;
                  for (int kx = kx0; kx < kx1; ++kx) dwrow[kx] += g * xrow[kx];
                }
              }
            }
          }
        }
      }
    }
  });
  return out;
}

Tensor conv_transpose2d(const Tensor& x, const ConvParams& p) {
  const Shape& xs = x.shape();
  const Shape& ws = p.weight.shape();
  const int ci = ws.n, co = ws.c, kh = ws.h, kw = ws.w;  // maps dim0 -> dim1 channels
  const int stride = p.stride, pad = p.padding;
  check(stride >= 1 && pad >= 0, "conv_transpose2d: stride must be >= 1 and padding >= 0");
  check(xs.c == ci, "conv_transpose2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                        std::to_string(ci));
  const int ho = (xs.h - 1) * stride - 2 * pad + kh;
  const int wo = (xs.w - 1) * stride - 2 * pad + kw;
  check(ho >= 1 && wo >= 1, "conv_transpose2d: output spatial size < 1 for input " + xs.str());
  const bool with_bias = p.bias.defined();
  if (with_bias)
    check(p.bias.numel() == co, "conv_transpose2d: bias length " + std::to_string(p.bias.numel()) +
                                    " does not match output channels " + std::to_string(co));

  Tensor out = Tensor::zeros({xs.n, co, ho, wo});
  double* od = out.data();
  if (with_bias) {
    const double* bd = p.bias.data();
    for (int n = 0; n < xs.n; ++n)
      for (int oc = 0; oc < co; ++oc) {
        double* orow = od + (static_cast<size_t>(n) * co + oc) * ho * wo;
        for (long long i = 0; i < 1LL * ho * wo; ++i) orow[i] = bd[oc];
      }
  }
  const double* xd = x.data();
  const double* wd = p.weight.data();
  for (int n = 0; n < xs.n; ++n) {
    for (int ic = 0; ic < ci; ++ic) {
      for (int oc = 0; oc < co; ++oc) {
        const double* wbase = wd + (static_cast<size_t>(ic) * co + oc) * kh * kw;
        for (int y = 0; y < xs.h; ++y) {
          for (int xq = 0; xq < xs.w; ++xq) {
            const double v = xd[((static_cast<size_t>(n) * ci + ic) * xs.h + y) * xs.w + xq];
            if (v == 0.0) continue;
            const int oy0 = y * stride - pad;
            const int ox0 = xq * stride - pad;
            const int kx0 = ox0 < 0 ? -ox0 : 0;
            const int kx1 = ox0 + kw > wo ? wo - ox0 : kw;
            for (int ky = 0; ky < kh; ++ky) {
              const int oy = oy0 + ky;
              if (oy < 0 || oy >= ho) continue;
              double* orow = od + ((static_cast<size_t>(n) * co + oc) * ho + oy) * wo + ox0;
              const double* wrow = wbase + static_cast<size_t>(ky) * kw;
              for (int kx = kx0; kx < kx1; ++kx) orow[kx] += v * wrow[kx];
            }
          }
        }
      }
    }
  }

  const bool need_x = x.requires_grad();
  const bool need_w = p.weight.requires_grad();
  const bool need_b = with_bias && p.bias.requires_grad();
  ImplPtr xi = x.impl, wi = p.weight.impl, oi = out.impl;
  ImplPtr bi = with_bias ? p.bias.impl : nullptr;
  mark_output(out, need_x || need_w || need_b, [=]() {
    if (!has_grad_output(oi)) return;
    if (need_x) xi->ensure_grad();
    if (need_w) wi->ensure_grad();
    if (need_b) bi->ensure_grad();
    const double* gd = oi->grad.data();
    const Shape xs2 = xi->shape;
    if (need_b) {
      for (int n = 0; n < xs2.n; ++n)
        for (int oc = 0; oc < co; ++oc) {
          const double* grow = gd + (static_cast<size_t>(n) * co + oc) * ho * wo;
          double acc = 0.0;
          for (long long i = 0; i < 1LL * ho * wo; ++i) acc += grow[i];
          bi->grad[oc] += acc;
        }
    }
    if (!need_x && !need_w) return;
    const double* xd2 = xi->value.data();
    const double* wd2 = wi->value.data();
    for (int n = 0; n < xs2.n; ++n) {
      for (int ic = 0; ic < ci; ++ic) {
        for (int oc = 0; oc < co; ++oc) {
          const size_t wbase = (static_cast<size_t>(ic) * co + oc) * kh * kw;
          for (int y = 0; y < xs2.h; ++y) {
            for (int xq = 0; xq < xs2.w; ++xq) {
              const size_t xoff = ((static_cast<size_t>(n) * ci + ic) * xs2.h + y) * xs2.w + xq;
              const int oy0 = y * stride - pad;
              const int ox0 = xq * stride - pad;
              const int kx0 = ox0 < 0 ? -ox0 : 0;
              const int kx1 = ox0 + kw > wo ? wo - ox0 : kw;
              double dx_acc = 0.0;
              for (int ky = 0; ky < kh; ++ky) {
                const int oy = oy0 + ky;
                if (oy < 0 || oy >= ho) continue;
                const double* grow = gd + ((static_cast<size_t>(n) * co + oc) * ho + oy) * wo + ox0;
                const double* wrow = wd2 + wbase + static_cast<size_t>(ky) * kw;
                if (need_x)
                  for (int kx = kx0; kx < kx1; ++kx) dx_acc += grow[kx] * wrow[kx];
                if (need_w) {
                  const double xv = xd2[xoff];
                  if (xv != 0.0) {
                    double* dwrow = wi->grad.data() + wbase + static_cast<size_t>(ky) * kw;
                    for (int kx = kx0; kx < kx1; ++kx) dwrow[kx] += xv * grow[kx];
                  }
                }
              }
              if (need_x) xi->grad[xoff] += dx_acc;
            }
          }
        }
      }
    }
  });
  return out;
}

namespace {

// Saturated activations are nudged to the nearest representable value
// inside the open interval so the (0,1) / (-1,1) ranges stay strict for
// every finite input.
const double kJustBelowOne = std::nextafter(1.0, 0.0);
const double kJustAboveZero = std::numeric_limits<double>::denorm_min();

}  // namespace

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data();
  double* od = out.data();
  const long long n = x.numel();
  for (long long i = 0; i < n; ++i) {
    const double y = 1.0 / (1.0 + std::exp(-xd[i]));
    od[i] = y >= 1.0 ? kJustBelowOne : (y <= 0.0 ? kJustAboveZero : y);
  }
  ImplPtr xi = x.impl, oi = out.impl;
  mark_output(out, x.requires_grad(), [=]() {
    if (!has_grad_output(oi)) return;
    xi->ensure_grad();
    for (long long i = 0; i < n; ++i) {
      const double y = oi->value[i];
      xi->grad[i] += oi->grad[i] * y * (1.0 - y);
    }
  });
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const double* xd = x.data();
  double* od = out.data();
  const long long n = x.numel();
  for (long long i = 0; i < n; ++i) {
    const double y = std::tanh(xd[i]);
    od[i] = y >= 1.0 ? kJustBelowOne : (y <= -1.0 ? -kJustBelowOne : y);
  }
  ImplPtr xi = x.impl, oi = out.impl;
  mark_output(out, x.requires_grad(), [=]() {
    if (!has_grad_output(oi)) return;
    xi->ensure_grad();
    for (long long i = 0; i < n; ++i) {
      const double y = oi->value[i];
      xi->grad[i] += oi->grad[i] * (1.0 - y * y);
    }
  });
  return out;
}

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  check(a.shape() == b.shape(),
        std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const long long n = a.numel();
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  for (long long i = 0; i < n; ++i) od[i] = ad[i] + bd[i];
  const bool na = a.requires_grad(), nb = b.requires_grad();
  ImplPtr ai = a.impl, bi = b.impl, oi = out.impl;
  mark_output(out, na || nb, [=]() {
    if (!has_grad_output(oi)) return;
    if (na) {
      ai->ensure_grad();
      for (long long i = 0; i < n; ++i) ai->grad[i] += oi->grad[i];
    }
    if (nb) {
      bi->ensure_grad();
      for (long long i = 0; i < n; ++i) bi->grad[i] += oi->grad[i];
    }
  });
  return out;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "hadamard");
  Tensor out = Tensor::zeros(a.shape());
  const long long n = a.numel();
  const double* ad = a.data();
  const double* bd = b.data();
  double* od = out.data();
  for (long long i = 0; i < n; ++i) od[i] = ad[i] * bd[i];
  const bool na = a.requires_grad(), nb = b.requires_grad();
  ImplPtr ai = a.impl, bi = b.impl, oi = out.impl;
  mark_output(out, na || nb, [=]() {
    if (!has_grad_output(oi)) return;
    if (na) {
      ai->ensure_grad();
      for (long long i = 0; i < n; ++i) ai->grad[i] += oi->grad[i] * bi->value[i];
    }
    if (nb) {
      bi->ensure_grad();
      for (long long i = 0; i < n; ++i) bi->grad[i] += oi->grad[i] * ai->value[i];
    }
  });
  return out;
}

Tensor affine(const Tensor& x, double mul, double shift) {
  Tensor out = Tensor::zeros(x.shape());
  const long long n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (long long i = 0; i < n; ++i) od[i] = mul * xd[i] + shift;
  ImplPtr xi = x.impl, oi = out.impl;
  mark_output(out, x.requires_grad(), [=]() {
    if (!has_grad_output(oi)) return;
    xi->ensure_grad();
    for (long long i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] * mul;
  });
  return out;
}

Tensor scale(const Tensor& a, double s) { return affine(a, s, 0.0); }

Tensor concat_channels(const std::vector<Tensor>& xs) {
  check(!xs.empty(), "concat_channels: empty input list");
  const Shape& s0 = xs[0].shape();
  int ctot = 0;
  bool any_grad = false;
  for (const Tensor& x : xs) {
    const Shape& s = x.shape();
    check(s.n == s0.n && s.h == s0.h && s.w == s0.w,
          "concat_channels: batch/spatial mismatch " + s.str() + " vs " + s0.str());
    ctot += s.c;
    any_grad = any_grad || x.requires_grad();
  }
  Tensor out = Tensor::zeros({s0.n, ctot, s0.h, s0.w});
  const long long plane = 1LL * s0.h * s0.w;
  double* od = out.data();
  for (int n = 0; n < s0.n; ++n) {
    long long coff = 0;
    for (const Tensor& x : xs) {
      const int cx = x.shape().c;
      const double* xd = x.data() + static_cast<size_t>(n) * cx * plane;
      double* dst = od + (static_cast<size_t>(n) * ctot) * plane + coff * plane;
      for (long long i = 0; i < cx * plane; ++i) dst[i] = xd[i];
      coff += cx;
    }
  }
  std::vector<ImplPtr> inputs;
  inputs.reserve(xs.size());
  for (const Tensor& x : xs) inputs.push_back(x.impl);
  ImplPtr oi = out.impl;
  mark_output(out, any_grad, [=]() {
    if (!has_grad_output(oi)) return;
    for (int n = 0; n < s0.n; ++n) {
      long long coff = 0;
      for (const ImplPtr& xi : inputs) {
        const int cx = xi->shape.c;
        if (xi->requires_grad) {
          xi->ensure_grad();
          double* gx = xi->grad.data() + static_cast<size_t>(n) * cx * plane;
          const double* go = oi->grad.data() + (static_cast<size_t>(n) * ctot + coff) * plane;
          for (long long i = 0; i < cx * plane; ++i) gx[i] += go[i];
        }
        coff += cx;
      }
    }
  });
  return out;
}

Tensor mse(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mse");
  const long long n = a.numel();
  const double* ad = a.data();
  const double* bd = b.data();
  double acc = 0.0;
  for (long long i = 0; i < n; ++i) {
    const double d = ad[i] - bd[i];
    acc += d * d;
  }
  Tensor out = Tensor::full({1, 1, 1, 1}, acc / static_cast<double>(n));
  const bool na = a.requires_grad(), nb = b.requires_grad();
  ImplPtr ai = a.impl, bi = b.impl, oi = out.impl;
  mark_output(out, na || nb, [=]() {
    if (!has_grad_output(oi)) return;
    const double g = oi->grad[0] * 2.0 / static_cast<double>(n);
    if (na) ai->ensure_grad();
    if (nb) bi->ensure_grad();
    for (long long i = 0; i < n; ++i) {
      const double d = g * (ai->value[i] - bi->value[i]);
      if (na) ai->grad[i] += d;
      if (nb) bi->grad[i] -= d;
    }
  });
  return out;
}

Tensor sum_all(const Tensor& x) {
  const long long n = x.numel();
  const double* xd = x.data();
  double acc = 0.0;
  for (long long i = 0; i < n; ++i) acc += xd[i];
  Tensor out = Tensor::full({1, 1, 1, 1}, acc);
  ImplPtr xi = x.impl, oi = out.impl;
  mark_output(out, x.requires_grad(), [=]() {
    if (!has_grad_output(oi)) return;
    xi->ensure_grad();
    const double g = oi->grad[0];
    for (long long i = 0; i < n; ++i) xi->grad[i] += g;
  });
  return out;
}

Tensor mean_all(const Tensor& x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

Tensor spatial_mean(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor out = Tensor::zeros({s.n, s.c, 1, 1});
  const long long plane = 1LL * s.h * s.w;
  const double* xd = x.data();
  double* od = out.data();
  for (long long p = 0; p < 1LL * s.n * s.c; ++p) {
    double acc = 0.0;
    const double* row = xd + p * plane;
    for (long long i = 0; i < plane; ++i) acc += row[i];
    od[p] = acc / static_cast<double>(plane);
  }
  ImplPtr xi = x.impl, oi = out.impl;
  mark_output(out, x.requires_grad(), [=]() {
    if (!has_grad_output(oi)) return;
    xi->ensure_grad();
    for (long long p = 0; p < 1LL * s.n * s.c; ++p) {
      const double g = oi->grad[p] / static_cast<double>(plane);
      double* grow = xi->grad.data() + p * plane;
      for (long long i = 0; i < plane; ++i) grow[i] += g;
    }
  });
  return out;
}

Tensor log(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const long long n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (long long i = 0; i < n; ++i) {
    check(xd[i] > 0.0, "log: non-positive input " + std::to_string(xd[i]));
    od[i] = std::log(xd[i]);
  }
  ImplPtr xi = x.impl, oi = out.impl;
  mark_output(out, x.requires_grad(), [=]() {
    if (!has_grad_output(oi)) return;
    xi->ensure_grad();
    for (long long i = 0; i < n; ++i) xi->grad[i] += oi->grad[i] / xi->value[i];
  });
  return out;
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  check(lo <= hi, "clamp: lo must not exceed hi");
  Tensor out = Tensor::zeros(x.shape());
  const long long n = x.numel();
  const double* xd = x.data();
  double* od = out.data();
  for (long long i = 0; i < n; ++i) od[i] = xd[i] < lo ? lo : (xd[i] > hi ? hi : xd[i]);
  ImplPtr xi = x.impl, oi = out.impl;
  mark_output(out, x.requires_grad(), [=]() {
    if (!has_grad_output(oi)) return;
    xi->ensure_grad();
    for (long long i = 0; i < n; ++i)
      if (xi->value[i] > lo && xi->value[i] < hi) xi->grad[i] += oi->grad[i];
  });
  return out;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double eps) {
  check(eps > 0.0, "grad_check: eps must be positive");
  Tensor probe = x.clone();
  probe.set_requires_grad(true);
  Tape tape;
  Tensor loss;
  {
    Tape::Scope scope(tape);
    loss = f(probe);
  }
  check(loss.defined() && loss.numel() == 1, "grad_check: f must be scalar-valued");
  tape.backward(loss);
  std::vector<double> analytic = probe.grad();
  if (analytic.empty()) analytic.assign(static_cast<size_t>(x.numel()), 0.0);

  Tensor nudged = x.clone();
  nudged.set_requires_grad(false);
  double max_err = 0.0;
  for (long long i = 0; i < x.numel(); ++i) {
    const double saved = nudged.data()[i];
    nudged.data()[i] = saved + eps;
    const double fp = f(nudged).scalar();
    nudged.data()[i] = saved - eps;
    const double fm = f(nudged).scalar();
    nudged.data()[i] = saved;
    const double cd = (fp - fm) / (2.0 * eps);
    const double a = analytic[static_cast<size_t>(i)];
    const double denom = std::max(std::max(std::abs(a), std::abs(cd)), 1e-8);
    max_err = std::max(max_err, std::abs(a - cd) / denom);
  }
  return max_err;
}

}  // namespace strpm
