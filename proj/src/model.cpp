// SPDX-License-Identifier: Apache-2.0

#include "strpm/model.hpp"

#include <cmath>
#include <random>

namespace strpm {

namespace {

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_int(int v) {
  int s = 0;
  while ((1 << s) < v) ++s;
  return s;
}

// Deterministic uniform draws; identical across platforms for a fixed seed.
struct InitRng {
  std::mt19937_64 gen;
  explicit InitRng(std::uint64_t seed) : gen(seed) {}
  double uniform01() { return static_cast<double>(gen() >> 11) * 0x1.0p-53; }
  double symmetric(double a) { return a * (2.0 * uniform01() - 1.0); }
};

Tensor init_weight(Shape s, int fan_in, InitRng& rng) {
  Tensor w = Tensor::zeros(s);
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  double* d = w.data();
  for (long long i = 0; i < w.numel(); ++i) d[i] = rng.symmetric(bound);
  w.set_requires_grad(true);
  return w;
}

ConvLayer make_conv(std::vector<NamedParam>& reg, InitRng& rng, const std::string& name, int out_c,
                    int in_c, int k, int stride, int padding) {
  ConvLayer l;
  l.p.weight = init_weight({out_c, in_c, k, k}, in_c * k * k, rng);
  l.p.bias = Tensor::zeros({1, 1, 1, out_c}).set_requires_grad(true);
  l.p.stride = stride;
  l.p.padding = padding;
  reg.push_back({name + ".weight", l.p.weight});
  reg.push_back({name + ".bias", l.p.bias});
  return l;
}

DeconvLayer make_deconv(std::vector<NamedParam>& reg, InitRng& rng, const std::string& name,
                        int in_c, int out_c, int k, int stride, int padding) {
  DeconvLayer l;
  l.p.weight = init_weight({in_c, out_c, k, k}, in_c * k * k, rng);
  l.p.bias = Tensor::zeros({1, 1, 1, out_c}).set_requires_grad(true);
  l.p.stride = stride;
  l.p.padding = padding;
  reg.push_back({name + ".weight", l.p.weight});
  reg.push_back({name + ".bias", l.p.bias});
  return l;
}

Encoder make_encoder(std::vector<NamedParam>& reg, InitRng& rng, const std::string& name,
                     const ModelConfig& cfg) {
  Encoder e;
  const int stages = log2_int(cfg.downsample);
  for (int i = 0; i < stages; ++i) {
    const int ci = i == 0 ? cfg.in_channels : cfg.hidden;
    e.convs.push_back(make_conv(reg, rng, name + ".conv" + std::to_string(i), cfg.hidden, ci, 4, 2, 1));
  }
  return e;
}

Decoder make_decoder(std::vector<NamedParam>& reg, InitRng& rng, const std::string& name,
                     const ModelConfig& cfg) {
  Decoder d;
  const int stages = log2_int(cfg.downsample);
  for (int i = 0; i < stages; ++i) {
    const int co = i == stages - 1 ? cfg.in_channels : cfg.hidden;
    d.convs.push_back(make_deconv(reg, rng, name + ".conv" + std::to_string(i), cfg.hidden, co, 4, 2, 1));
  }
  return d;
}

AttentionMerge make_attention(std::vector<NamedParam>& reg, InitRng& rng, const std::string& name,
                              int n_states, int hidden) {
  AttentionMerge a;
  a.merge1 = make_conv(reg, rng, name + ".merge0", hidden, n_states * hidden, 1, 1, 0);
  a.merge2 = make_conv(reg, rng, name + ".merge1", hidden, hidden, 1, 1, 0);
  return a;
}

RpmCell make_cell(std::vector<NamedParam>& reg, InitRng& rng, const std::string& name,
                  const ModelConfig& cfg) {
  RpmCell c;
  const int h = cfg.hidden, k = cfg.kernel, pad = (cfg.kernel - 1) / 2;
  c.w_t = make_conv(reg, rng, name + ".w_t", h, h, k, 1, pad);
  c.w_s = make_conv(reg, rng, name + ".w_s", h, h, k, 1, pad);
  c.w_o = make_conv(reg, rng, name + ".w_o", h, h, k, 1, pad);
  c.w_h = make_conv(reg, rng, name + ".w_h", h, h, k, 1, pad);
  c.w_m = make_conv(reg, rng, name + ".w_m", h, h, k, 1, pad);
  c.w_os = make_conv(reg, rng, name + ".w_os", h, h, k, 1, pad);
  c.w_ot = make_conv(reg, rng, name + ".w_ot", h, h, k, 1, pad);
  c.fuse_residual = make_conv(reg, rng, name + ".fuse_res", h, 2 * h, 1, 1, 0);
  c.fuse_input = make_conv(reg, rng, name + ".fuse_in", h, 2 * h, 1, 1, 0);
  c.att_t = make_attention(reg, rng, name + ".att_t", cfg.tau, h);
  c.att_s = make_attention(reg, rng, name + ".att_s", cfg.theta, h);
  return c;
}

}  // namespace

void ModelConfig::validate() const {
  check(layers >= 1, "config: layers must be >= 1");
  check(hidden >= 1, "config: hidden channels must be >= 1");
  check(kernel >= 1 && kernel % 2 == 1, "config: cell kernel must be a positive odd integer");
  check(tau >= 1, "config: tau must be >= 1");
  check(theta >= 1, "config: theta must be >= 1");
  check(theta <= layers, "config: theta (" + std::to_string(theta) + ") must not exceed layers (" +
                             std::to_string(layers) + ")");
  check(power_of_two(downsample) && downsample >= 2, "config: downsample must be a power of two >= 2");
  check(in_channels >= 1, "config: in_channels must be >= 1");
  check(std::isfinite(lambda1) && lambda1 >= 0.0 && std::isfinite(lambda2) && lambda2 >= 0.0,
        "config: lambda1/lambda2 must be finite and non-negative");
}

Tensor Encoder::forward(const Tensor& frame) const {
  Tensor x = frame;
  for (size_t i = 0; i < convs.size(); ++i) {
    if (i > 0) x = tanh(x);
    x = convs[i](x);
  }
  return x;
}

Tensor Decoder::forward(const Tensor& feat) const {
  Tensor x = feat;
  for (size_t i = 0; i < convs.size(); ++i) {
    if (i > 0) x = tanh(x);
    x = convs[i](x);
  }
  return x;
}

Tensor AttentionMerge::forward(const std::vector<Tensor>& states) const {
  check(!states.empty(), "attention merge: empty state list");
  for (const Tensor& s : states)
    check(s.shape() == states[0].shape(), "attention merge: state shape mismatch " + s.shape().str() +
                                              " vs " + states[0].shape().str());
  return merge2(tanh(merge1(concat_channels(states))));
}

RpmCell::Out RpmCell::step(const Tensor& t_in, const Tensor& s_in, const Tensor& o_in,
                           const LayerState& state, const Tensor& s_below, bool residual,
                           LayerCapture* capture) const {
  const Shape& fs = t_in.shape();
  check(s_in.shape() == fs && o_in.shape() == fs && state.hidden.shape() == fs && s_below.shape() == fs,
        "rpm step: input/state shape mismatch");

  const Tensor tf = w_t(t_in);
  const Tensor sf = w_s(s_in);
  const Tensor of = w_o(o_in);
  const Tensor hf = w_h(state.hidden);
  const Tensor mf = w_m(s_below);

  const Tensor t_pre = add(tf, hf);
  const Tensor r_t = sigmoid(t_pre);
  const Tensor temporal = hadamard(r_t, add(tanh(t_pre), att_t.forward(state.temporal)));

  std::vector<Tensor> spatial_states = state.spatial_stack;
  spatial_states.push_back(s_below);
  const Tensor s_pre = add(sf, mf);
  const Tensor r_s = sigmoid(s_pre);
  const Tensor spatial = hadamard(r_s, add(tanh(s_pre), att_s.forward(spatial_states)));

  const Tensor r_o = sigmoid(add(add(of, hf), add(w_os(spatial), w_ot(temporal))));
  const Tensor strf = hadamard(r_o, tanh(fuse_residual(concat_channels({temporal, spatial}))));

  Tensor stif;
  if (residual || capture) stif = fuse_input(concat_channels({t_in, s_in}));
  const Tensor hidden = residual ? add(stif, strf) : strf;

  if (capture) {
    capture->stif = stif;
    capture->strf = strf;
    capture->r_t = r_t;
    capture->r_s = r_s;
    capture->r_o = r_o;
    capture->t_out = temporal;
    capture->s_out = spatial;
  }
  return {hidden, temporal, spatial};
}

StrpmModel::StrpmModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  InitRng rng(seed);
  enc_t_ = make_encoder(params_, rng, "enc_t", cfg_);
  if (!cfg_.shared_encoder) {
    enc_s_ = make_encoder(params_, rng, "enc_s", cfg_);
    enc_o_ = make_encoder(params_, rng, "enc_o", cfg_);
  }
  dec_t_ = make_decoder(params_, rng, "dec_t", cfg_);
  dec_s_ = make_decoder(params_, rng, "dec_s", cfg_);
  dec_o_ = make_decoder(params_, rng, "dec_o", cfg_);
  compose_ = make_conv(params_, rng, "compose", cfg_.in_channels, 2 * cfg_.in_channels, 1, 1, 0);
  for (int k = 0; k < cfg_.layers; ++k)
    cells_.push_back(make_cell(params_, rng, "cell" + std::to_string(k), cfg_));
}

std::array<Tensor, 3> StrpmModel::encode(const Tensor& frame) const {
  const Shape& s = frame.shape();
  check(s.c == cfg_.in_channels, "encode: frame has " + std::to_string(s.c) + " channels, expected " +
                                     std::to_string(cfg_.in_channels));
  check(s.h % cfg_.downsample == 0 && s.w % cfg_.downsample == 0,
        "encode: frame dims " + s.str() + " not divisible by downsample factor " +
            std::to_string(cfg_.downsample));
  if (cfg_.shared_encoder) {
    Tensor e = enc_t_.forward(frame);
    return {e, e, e};
  }
  return {enc_t_.forward(frame), enc_s_.forward(frame), enc_o_.forward(frame)};
}

NetworkState StrpmModel::initial_state(int batch, int frame_h, int frame_w) const {
  check(batch >= 1, "initial_state: batch must be >= 1");
  check(frame_h % cfg_.downsample == 0 && frame_w % cfg_.downsample == 0,
        "initial_state: frame dims not divisible by downsample factor");
  const Shape fs{batch, cfg_.hidden, frame_h / cfg_.downsample, frame_w / cfg_.downsample};
  NetworkState st;
  st.layers.resize(static_cast<size_t>(cfg_.layers));
  const Tensor zero = Tensor::zeros(fs);
  for (LayerState& ls : st.layers) {
    ls.hidden = zero;
    ls.temporal.assign(static_cast<size_t>(cfg_.tau), zero);
  }
  st.prev_top_spatial = zero;
  return st;
}

Tensor StrpmModel::compose_frame(const Tensor& t_d, const Tensor& s_d, const Tensor& o_d) const {
  check(t_d.shape() == s_d.shape() && s_d.shape() == o_d.shape(),
        "compose_frame: decoded feature shape mismatch");
  return hadamard(o_d, tanh(compose_(concat_channels({t_d, s_d}))));
}

Prediction StrpmModel::step(const Tensor& frame, NetworkState& state,
                            std::vector<LayerCapture>* capture) const {
  const int K = cfg_.layers;
  check(static_cast<int>(state.layers.size()) == K,
        "step: state has " + std::to_string(state.layers.size()) + " layers, model has " + std::to_string(K));
  auto [t_e, s_e, o_e] = encode(frame);
  check(state.layers[0].hidden.shape() == t_e.shape(),
        "step: state shape " + state.layers[0].hidden.shape().str() + " does not match encoded features " +
            t_e.shape().str());
  if (capture) capture->assign(static_cast<size_t>(K), LayerCapture{});

  const Tensor zero_feat = Tensor::zeros(t_e.shape());
  std::vector<Tensor> new_spatial(static_cast<size_t>(K));
  Tensor t_cur = t_e, s_cur = s_e, o_cur = o_e;
  Tensor top_temporal;
  for (int k = 0; k < K; ++k) {
    LayerState& ls = state.layers[static_cast<size_t>(k)];
    const Tensor& s_below = k == 0 ? state.prev_top_spatial : new_spatial[static_cast<size_t>(k - 1)];
    // Spatial stack: states k+1-theta .. k-1 in 1-based layer numbering;
    // entries below layer 1 are zeros.
    ls.spatial_stack.clear();
    for (int sup = (k + 1) - cfg_.theta; sup <= k - 1; ++sup)
      ls.spatial_stack.push_back(sup >= 1 ? new_spatial[static_cast<size_t>(sup - 1)] : zero_feat);

    LayerCapture* cap = capture ? &(*capture)[static_cast<size_t>(k)] : nullptr;
    if (cap) {
      cap->t_input = t_cur;
      cap->s_input = s_cur;
    }
    RpmCell::Out out =
        cells_[static_cast<size_t>(k)].step(t_cur, s_cur, o_cur, ls, s_below, cfg_.residual, cap);
    new_spatial[static_cast<size_t>(k)] = out.spatial;
    ls.temporal.erase(ls.temporal.begin());
    ls.temporal.push_back(out.temporal);
    ls.hidden = out.hidden;
    if (k < K - 1) {
      t_cur = out.hidden;
      s_cur = out.hidden;
      o_cur = out.hidden;
    } else {
      top_temporal = out.temporal;
    }
  }
  state.prev_top_spatial = new_spatial[static_cast<size_t>(K - 1)];
  state.step += 1;

  const Tensor t_d = dec_t_.forward(top_temporal);
  const Tensor s_d = dec_s_.forward(new_spatial[static_cast<size_t>(K - 1)]);
  const Tensor o_d = dec_o_.forward(state.layers[static_cast<size_t>(K - 1)].hidden);
  Prediction p;
  p.raw = compose_frame(t_d, s_d, o_d);
  p.clamped = clamp(p.raw, 0.0, 1.0);
  return p;
}

RolloutResult StrpmModel::rollout(const std::vector<Tensor>& context, int horizon) const {
  check(!context.empty(), "rollout: context must contain at least one frame");
  check(horizon >= 1, "rollout: horizon must be >= 1");
  const Shape& fs = context[0].shape();
  NetworkState state = initial_state(fs.n, fs.h, fs.w);
  Prediction last;
  for (const Tensor& frame : context) last = step(frame, state);
  RolloutResult r;
  r.raw.push_back(last.raw);
  r.clamped.push_back(last.clamped);
  for (int i = 1; i < horizon; ++i) {
    last = step(r.clamped.back(), state);
    r.raw.push_back(last.raw);
    r.clamped.push_back(last.clamped);
  }
  return r;
}

long long count_params(const std::vector<NamedParam>& params, const std::string& prefix) {
  long long total = 0;
  for (const NamedParam& p : params)
    if (prefix.empty() || p.name.rfind(prefix, 0) == 0) total += p.tensor.numel();
  return total;
}

long long count_params(const StrpmModel& model) { return count_params(model.params()); }

namespace {

long long conv_flops(int out_c, int in_c, int k, long long out_h, long long out_w) {
  const long long out_elems = out_h * out_w * out_c;
  return 2LL * out_elems * in_c * k * k + out_elems;
}

long long deconv_flops(int in_c, int out_c, int k, long long in_h, long long in_w, long long out_h,
                       long long out_w) {
  return 2LL * in_h * in_w * in_c * out_c * k * k + out_h * out_w * out_c;
}

}  // namespace

long long count_flops(const ModelConfig& cfg, int frame_h, int frame_w) {
  cfg.validate();
  check(frame_h % cfg.downsample == 0 && frame_w % cfg.downsample == 0,
        "count_flops: frame dims not divisible by downsample factor");
  const int stages = log2_int(cfg.downsample);
  const int h = cfg.hidden;
  long long flops = 0;

  // Encoders: stride-2 convs with tanh between stages.
  long long enc = 0;
  {
    long long sh = frame_h, sw = frame_w;
    for (int i = 0; i < stages; ++i) {
      const int ci = i == 0 ? cfg.in_channels : h;
      if (i > 0) enc += sh * sw * h;  // tanh on the previous stage output
      sh /= 2;
      sw /= 2;
      enc += conv_flops(h, ci, 4, sh, sw);
    }
  }
  flops += (cfg.shared_encoder ? 1 : 3) * enc;

  // RPM stack at feature resolution.
  const long long fh = frame_h / cfg.downsample, fw = frame_w / cfg.downsample;
  const long long E = fh * fw * h;  // elements of one state tensor
  long long cell = 0;
  cell += 5 * conv_flops(h, h, cfg.kernel, fh, fw);            // TF, SF, OF, HF, MF
  cell += 4 * E;                                               // t_pre add, gate sigmoid, tanh, gated product
  cell += conv_flops(h, cfg.tau * h, 1, fh, fw) + E + conv_flops(h, h, 1, fh, fw);  // temporal attention
  cell += E;                                                   // add attention output
  cell += 4 * E;                                               // spatial path mirror of the temporal path
  cell += conv_flops(h, cfg.theta * h, 1, fh, fw) + E + conv_flops(h, h, 1, fh, fw);  // spatial attention
  cell += E;
  cell += 2 * conv_flops(h, h, cfg.kernel, fh, fw);            // w_os, w_ot
  cell += 3 * E + E;                                           // output gate sums + sigmoid
  cell += conv_flops(h, 2 * h, 1, fh, fw) + E + E;             // residual fuse, tanh, gated product
  if (cfg.residual) cell += conv_flops(h, 2 * h, 1, fh, fw) + E;  // input fuse + skip add
  flops += cfg.layers * cell;

  // Decoders: mirrored transposed convs with tanh between stages.
  long long dec = 0;
  {
    long long sh = fh, sw = fw;
    for (int i = 0; i < stages; ++i) {
      const int co = i == stages - 1 ? cfg.in_channels : h;
      if (i > 0) dec += sh * sw * h;
      dec += deconv_flops(h, co, 4, sh, sw, sh * 2, sw * 2);
      sh *= 2;
      sw *= 2;
    }
  }
  flops += 3 * dec;

  // Frame composition: 1x1 conv over [T_D, S_D], tanh, hadamard with O_D.
  const long long frame_elems = 1LL * frame_h * frame_w * cfg.in_channels;
  flops += conv_flops(cfg.in_channels, 2 * cfg.in_channels, 1, frame_h, frame_w) + 2 * frame_elems;
  return flops;
}

}  // namespace strpm
