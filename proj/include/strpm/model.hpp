// SPDX-License-Identifier: Apache-2.0
//
// The STRPM predictor: parameter-disjoint temporal/spatial/output encoders
// and decoders, a stack of residual predictive memory (RPM) cells with
// temporal/spatial attention merges, frame composition, and autoregressive
// rollout.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "strpm/tensor.hpp"

namespace strpm {

struct ModelConfig {
  int layers = 4;        // stacked RPM cells (K)
  int hidden = 16;       // state channels
  int kernel = 5;        // cell convolution kernel, odd; same padding
  int tau = 2;           // previous temporal states merged by attention
  int theta = 2;         // lower-layer spatial states merged by attention
  int downsample = 4;    // encoder spatial reduction, power of two >= 2
  int in_channels = 1;   // frame channels
  bool residual = true;          // add the input-feature skip into the hidden state
  bool shared_encoder = false;   // one encoder feeds all three cell inputs
  double lambda1 = 0.01;         // perceptual loss weight
  double lambda2 = 0.001;        // adversarial loss weight

  void validate() const;
};

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct ConvLayer {
  ConvParams p;
  Tensor operator()(const Tensor& x) const { return conv2d(x, p); }
};

struct DeconvLayer {
  ConvParams p;
  Tensor operator()(const Tensor& x) const { return conv_transpose2d(x, p); }
};

// Stride-2 convolution stack (kernel 4, padding 1), tanh between stages.
struct Encoder {
  std::vector<ConvLayer> convs;
  Tensor forward(const Tensor& frame) const;
};

// Mirror of Encoder built from transposed convolutions.
struct Decoder {
  std::vector<DeconvLayer> convs;
  Tensor forward(const Tensor& feat) const;
};

// Merges m same-shape states into one: channel concat, 1x1 conv to hidden
// channels, tanh, 1x1 conv to hidden channels.
struct AttentionMerge {
  ConvLayer merge1, merge2;
  Tensor forward(const std::vector<Tensor>& states) const;
};

// Per-layer recurrent state. `temporal` always holds exactly tau entries,
// oldest first, zero-padded before step tau. `spatial_stack` holds the
// theta-1 older lower-layer spatial states of the current step and is
// refreshed by StrpmModel::step before each cell runs.
struct LayerState {
  Tensor hidden;
  std::vector<Tensor> temporal;
  std::vector<Tensor> spatial_stack;
};

struct NetworkState {
  std::vector<LayerState> layers;
  Tensor prev_top_spatial;  // top layer's spatial state from the previous step
  int step = 0;             // completed steps
};

// Optional per-layer introspection filled by StrpmModel::step.
struct LayerCapture {
  Tensor t_input, s_input;  // temporal/spatial features entering the layer
  Tensor stif, strf;        // input-feature skip and gated residual term
  Tensor r_t, r_s, r_o;     // gate activations
  Tensor t_out, s_out;      // the layer's new temporal/spatial states
};

struct RpmCell {
  ConvLayer w_t, w_s, w_o, w_h, w_m;  // input projections (cell kernel)
  ConvLayer w_os, w_ot;               // output-gate projections (cell kernel)
  ConvLayer fuse_residual;            // 1x1 over [T, S]
  ConvLayer fuse_input;               // 1x1 over [T_E, S_E]
  AttentionMerge att_t, att_s;

  struct Out {
    Tensor hidden, temporal, spatial;
  };

  // One cell update. `s_below` is the spatial state of the layer below at
  // the current step (the zigzag state for layer 1); the spatial attention
  // runs over state.spatial_stack ++ [s_below]. With residual disabled the
  // hidden state is the gated residual term alone.
  Out step(const Tensor& t_in, const Tensor& s_in, const Tensor& o_in, const LayerState& state,
           const Tensor& s_below, bool residual, LayerCapture* capture = nullptr) const;
};

struct Prediction {
  Tensor raw;      // unclamped composition output; feeds losses
  Tensor clamped;  // [0,1] copy; feeds metrics, export, and feedback
};

struct RolloutResult {
  std::vector<Tensor> raw, clamped;
};

class StrpmModel {
 public:
  StrpmModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::vector<NamedParam>& params() { return params_; }
  const std::vector<NamedParam>& params() const { return params_; }

  // (T_E, S_E, O_E); with a shared encoder all three are the same tensor.
  std::array<Tensor, 3> encode(const Tensor& frame) const;

  NetworkState initial_state(int batch, int frame_h, int frame_w) const;

  // One time step: encode, run the K-layer stack bottom-up, decode the top
  // layer's (T, S, H) and compose the next frame. Advances `state`.
  Prediction step(const Tensor& frame, NetworkState& state,
                  std::vector<LayerCapture>* capture = nullptr) const;

  // v = o_d * tanh(conv1x1([t_d, s_d])), unclamped.
  Tensor compose_frame(const Tensor& t_d, const Tensor& s_d, const Tensor& o_d) const;

  // Warm up on the context frames, then predict `horizon` frames feeding
  // each clamped prediction back as the next input.
  RolloutResult rollout(const std::vector<Tensor>& context, int horizon) const;

  const RpmCell& cell(int k) const { return cells_[static_cast<size_t>(k)]; }

 private:
  ModelConfig cfg_;
  Encoder enc_t_, enc_s_, enc_o_;
  Decoder dec_t_, dec_s_, dec_o_;
  ConvLayer compose_;
  std::vector<RpmCell> cells_;
  std::vector<NamedParam> params_;
};

// Total elements over a parameter list; `prefix` filters by name prefix.
long long count_params(const std::vector<NamedParam>& params, const std::string& prefix = "");
long long count_params(const StrpmModel& model);

// FLOPs of one predictor step on a single (1, in_channels, h, w) frame.
// Accounting: a convolution costs 2 * (out elements * in_c * kh * kw)
// multiply-accumulate FLOPs plus one add per output element when biased
// (transposed convolutions count 2 * in elements * out_c * kh * kw);
// every element-wise add, multiply, tanh and sigmoid costs 1 per element;
// channel concatenation is free. Clamping for metrics is not counted.
long long count_flops(const ModelConfig& cfg, int frame_h, int frame_w);

}  // namespace strpm
