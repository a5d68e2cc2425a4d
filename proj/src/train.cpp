// SPDX-License-Identifier: Apache-2.0

#include "strpm/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <thread>

namespace strpm {

Adam::Adam(const AdamConfig& cfg, const std::vector<NamedParam>& params) : cfg_(cfg) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const NamedParam& p : params) {
    m_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
    v_.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0);
  }
}

void Adam::step(std::vector<NamedParam>& params) {
  check(params.size() == m_.size(), "adam: parameter list size changed");
  ++steps_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
  for (size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i].tensor;
    const std::vector<double>& g = p.grad();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    const size_t n = static_cast<size_t>(p.numel());
    for (size_t j = 0; j < n; ++j) {
      const double gj = j < g.size() ? g[j] : 0.0;
      check(std::isfinite(gj), "adam: non-finite gradient in parameter " + params[i].name);
      m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
      v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      p.data()[j] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
    }
  }
}

void Adam::load_state(std::vector<std::vector<double>> m, std::vector<std::vector<double>> v,
                      long long steps) {
  check(m.size() == m_.size() && v.size() == v_.size(), "adam: moment list size mismatch");
  for (size_t i = 0; i < m.size(); ++i)
    check(m[i].size() == m_[i].size() && v[i].size() == v_[i].size(),
          "adam: moment shape mismatch at index " + std::to_string(i));
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = steps;
}

namespace {

DiscConfig disc_config_of(const RunConfig& cfg) {
  DiscConfig d = cfg.disc;
  d.in_channels = cfg.model.in_channels;
  return d;
}

}  // namespace

System::System(const RunConfig& run_cfg)
    : cfg(run_cfg),
      model(run_cfg.model, run_cfg.seed),
      disc(disc_config_of(run_cfg), run_cfg.seed + 1),
      adam_p(run_cfg.adam, model.params()),
      adam_d(run_cfg.adam, disc.params()) {
  cfg.validate();
}

namespace {

void zero_grads(std::vector<NamedParam>& params) {
  for (NamedParam& p : params) p.tensor.zero_grad();
}

void append_log(const std::string& path, const std::vector<LossRow>& rows, bool write_header) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  check(out.good(), "train: cannot open loss log " + path);
  if (write_header) out << "step,mse,lp,gan_p,gan_d\n";
  for (const LossRow& r : rows)
    out << r.step << "," << format_double(r.mse) << "," << format_double(r.lp) << ","
        << format_double(r.gan_p) << "," << format_double(r.gan_d) << "\n";
}

}  // namespace

std::vector<LossRow> train(System& sys, const std::vector<std::vector<Tensor>>& dataset, int steps,
                           LossMode mode, const std::string& log_path) {
  check(steps >= 1, "train: steps must be >= 1");
  const RunConfig& cfg = sys.cfg;
  const LossWeights weights{cfg.model.lambda1, cfg.model.lambda2};
  // Training horizon is one frame: each window is context frames plus the
  // next-frame target.
  BatchIterator iter(dataset, cfg.batch, cfg.context, 1, cfg.seed + 2);

  bool write_header = false;
  if (!log_path.empty()) {
    std::error_code ec;
    write_header = !std::filesystem::exists(log_path, ec) || std::filesystem::file_size(log_path, ec) == 0;
  }

  std::vector<LossRow> rows;
  rows.reserve(static_cast<size_t>(steps));
  const bool gan_active = mode != LossMode::Mse;
  const bool lp_active = mode == LossMode::MseGanLp;
  for (int s = 1; s <= steps; ++s) {
    const std::vector<Tensor> window = iter.next();
    const int t_total = static_cast<int>(window.size());  // context + 1

    LossRow row;
    row.step = s;
    {
      zero_grads(sys.model.params());
      if (gan_active) zero_grads(sys.disc.params());
      Tape tape;
      Tape::Scope scope(tape);
      NetworkState state =
          sys.model.initial_state(window[0].shape().n, window[0].shape().h, window[0].shape().w);
      std::vector<Tensor> fakes, reals;
      Prediction pred;
      for (int t = 0; t + 1 < t_total; ++t) {
        pred = sys.model.step(window[static_cast<size_t>(t)], state);
        fakes.push_back(pred.raw);
        reals.push_back(window[static_cast<size_t>(t + 1)]);
      }
      const Tensor mse_term = mse(pred.raw, window.back());
      Tensor loss = mse_term;
      Tensor lp_term, gan_term;
      if (lp_active) lp_term = lp_loss(sys.disc, reals, fakes);
      if (gan_active) gan_term = gan_loss_p(sys.disc, fakes);
      if (gan_active) {
        const Tensor zero = Tensor::zeros({1, 1, 1, 1});
        loss = predictor_loss(mse_term, lp_active ? lp_term : zero, gan_term, weights);
      }
      check(std::isfinite(loss.scalar()), "train: non-finite predictor loss at step " + std::to_string(s));
      tape.backward(loss);
      sys.adam_p.step(sys.model.params());
      row.mse = mse_term.scalar();
      row.lp = lp_active ? lp_term.scalar() : 0.0;
      row.gan_p = gan_active ? gan_term.scalar() : 0.0;

      if (gan_active) {
        zero_grads(sys.disc.params());
        Tape d_tape;
        Tape::Scope d_scope(d_tape);
        const Tensor d_loss = gan_loss_d(sys.disc, reals, fakes);
        check(std::isfinite(d_loss.scalar()),
              "train: non-finite discriminator loss at step " + std::to_string(s));
        d_tape.backward(d_loss);
        sys.adam_d.step(sys.disc.params());
        row.gan_d = d_loss.scalar();
      }
    }
    rows.push_back(row);
  }
  if (!log_path.empty()) append_log(log_path, rows, write_header);
  return rows;
}

double psnr(const Tensor& pred, const Tensor& truth) {
  check(pred.shape() == truth.shape(),
        "psnr: shape mismatch " + pred.shape().str() + " vs " + truth.shape().str());
  const long long n = pred.numel();
  const double* a = pred.data();
  const double* b = truth.data();
  double acc = 0.0;
  for (long long i = 0; i < n; ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  const double m = acc / static_cast<double>(n);
  if (m < 1e-10) return 100.0;
  return 10.0 * std::log10(1.0 / m);
}

double perceptual_proxy(const Discriminator& d, const Tensor& pred, const Tensor& truth) {
  return mse(d.forward(pred).features, d.forward(truth).features).scalar();
}

EvalReport evaluate(const System& sys, const std::vector<std::vector<Tensor>>& dataset, int context,
                    int horizon, int timing_samples, int threads) {
  check(horizon >= 1, "evaluate: horizon must be >= 1");
  check(threads >= 1, "evaluate: threads must be >= 1");
  const std::vector<Window> windows = enumerate_windows(dataset, context, horizon);
  const int n_windows = static_cast<int>(windows.size());

  // Per-window metrics ordered by window index; threads fill disjoint slots.
  std::vector<std::vector<double>> w_psnr(static_cast<size_t>(n_windows)),
      w_proxy(static_cast<size_t>(n_windows));
  auto run_window = [&](int wi) {
    const Window& w = windows[static_cast<size_t>(wi)];
    const std::vector<Tensor>& seq = dataset[static_cast<size_t>(w.seq)];
    std::vector<Tensor> ctx(seq.begin() + w.start, seq.begin() + w.start + context);
    const RolloutResult r = sys.model.rollout(ctx, horizon);
    std::vector<double>& ps = w_psnr[static_cast<size_t>(wi)];
    std::vector<double>& px = w_proxy[static_cast<size_t>(wi)];
    for (int h = 0; h < horizon; ++h) {
      const Tensor& truth = seq[static_cast<size_t>(w.start + context + h)];
      ps.push_back(psnr(r.clamped[static_cast<size_t>(h)], truth));
      px.push_back(perceptual_proxy(sys.disc, r.clamped[static_cast<size_t>(h)], truth));
    }
  };
  if (threads <= 1 || n_windows <= 1) {
    for (int wi = 0; wi < n_windows; ++wi) run_window(wi);
  } else {
    const int n_threads = std::min(threads, n_windows);
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads; ++t)
      pool.emplace_back([&, t]() {
        for (int wi = t; wi < n_windows; wi += n_threads) run_window(wi);
      });
    for (std::thread& th : pool) th.join();
  }

  EvalReport rep;
  rep.windows = n_windows;
  rep.psnr.assign(static_cast<size_t>(horizon), 0.0);
  rep.proxy.assign(static_cast<size_t>(horizon), 0.0);
  for (int wi = 0; wi < n_windows; ++wi)
    for (int h = 0; h < horizon; ++h) {
      rep.psnr[static_cast<size_t>(h)] += w_psnr[static_cast<size_t>(wi)][static_cast<size_t>(h)];
      rep.proxy[static_cast<size_t>(h)] += w_proxy[static_cast<size_t>(wi)][static_cast<size_t>(h)];
    }
  for (int h = 0; h < horizon; ++h) {
    rep.psnr[static_cast<size_t>(h)] /= n_windows;
    rep.proxy[static_cast<size_t>(h)] /= n_windows;
  }
  rep.params = count_params(sys.model);
  const int fh = dataset[0][0].shape().h, fw = dataset[0][0].shape().w;
  rep.flops = count_flops(sys.model.config(), fh, fw);

  const int t_samples = std::min(timing_samples, n_windows);
  const auto t0 = std::chrono::steady_clock::now();
  for (int wi = 0; wi < t_samples; ++wi) {
    const Window& w = windows[static_cast<size_t>(wi)];
    const std::vector<Tensor>& seq = dataset[static_cast<size_t>(w.seq)];
    std::vector<Tensor> ctx(seq.begin() + w.start, seq.begin() + w.start + context);
    sys.model.rollout(ctx, horizon);
  }
  const auto t1 = std::chrono::steady_clock::now();
  rep.sec_per_sample = std::chrono::duration<double>(t1 - t0).count() / std::max(1, t_samples);
  return rep;
}

const std::vector<std::string> kAblationVariants = {
    "rpm", "rpm-wo-residual", "rpm-tau1-theta1", "rpm-tau5-theta1", "rpm-tau1-theta5",
    "single-encoder"};

ModelConfig variant_config(const ModelConfig& base, const std::string& variant) {
  ModelConfig cfg = base;
  cfg.residual = true;
  cfg.shared_encoder = false;
  if (variant == "rpm") {
    cfg.tau = 5;
    cfg.theta = 5;
  } else if (variant == "rpm-wo-residual") {
    cfg.tau = 5;
    cfg.theta = 5;
    cfg.residual = false;
  } else if (variant == "rpm-tau1-theta1") {
    cfg.tau = 1;
    cfg.theta = 1;
  } else if (variant == "rpm-tau5-theta1") {
    cfg.tau = 5;
    cfg.theta = 1;
  } else if (variant == "rpm-tau1-theta5") {
    cfg.tau = 1;
    cfg.theta = 5;
  } else if (variant == "single-encoder") {
    cfg.tau = 5;
    cfg.theta = 5;
    cfg.shared_encoder = true;
  } else {
    fail("ablate: unknown variant '" + variant + "'");
  }
  return cfg;
}

std::vector<AblationRow> ablate(const RunConfig& base, const std::vector<std::vector<Tensor>>& dataset,
                                const std::vector<std::string>& variants, int steps) {
  check(base.model.layers >= 5, "ablate: base config needs layers >= 5 so theta = 5 variants are valid");
  std::vector<AblationRow> rows;
  for (const std::string& name : variants) {
    RunConfig cfg = base;
    cfg.model = variant_config(base.model, name);
    System sys(cfg);
    train(sys, dataset, steps, LossMode::Mse);
    const EvalReport rep = evaluate(sys, dataset, cfg.context, cfg.horizon, cfg.timing_samples, cfg.threads);
    AblationRow row;
    row.variant = name;
    double ps = 0.0, px = 0.0;
    for (size_t h = 0; h < rep.psnr.size(); ++h) {
      ps += rep.psnr[h];
      px += rep.proxy[h];
    }
    row.psnr = ps / static_cast<double>(rep.psnr.size());
    row.proxy = px / static_cast<double>(rep.proxy.size());
    row.params = rep.params;
    row.flops = rep.flops;
    rows.push_back(row);
  }
  return rows;
}

FeatureCapture capture_features(const StrpmModel& model, const std::vector<Tensor>& frames, int layer,
                                int step) {
  const int K = model.config().layers;
  check(layer >= 1 && layer <= K, "capture_features: layer " + std::to_string(layer) +
                                      " out of range [1," + std::to_string(K) + "]");
  check(step >= 1 && step <= static_cast<int>(frames.size()),
        "capture_features: step " + std::to_string(step) + " out of range [1," +
            std::to_string(frames.size()) + "]");
  const Shape& fs = frames[0].shape();
  NetworkState state = model.initial_state(fs.n, fs.h, fs.w);
  std::vector<LayerCapture> caps;
  for (int t = 0; t < step; ++t) model.step(frames[static_cast<size_t>(t)], state, &caps);
  const LayerCapture& c = caps[static_cast<size_t>(layer - 1)];
  return {c.t_input, c.s_input, c.stif, c.strf};
}

namespace {

// Channel-mean map, min-max normalized to [0,1]; flat maps normalize to 0.
struct HeatMap {
  Tensor image;
  double lo = 0.0, hi = 0.0;
};

HeatMap channel_mean_heatmap(const Tensor& t) {
  const Shape& s = t.shape();
  Tensor map = Tensor::zeros({1, 1, s.h, s.w});
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w; ++x) {
      double acc = 0.0;
      for (int c = 0; c < s.c; ++c) acc += t.at(0, c, y, x);
      map.at(0, 0, y, x) = acc / s.c;
    }
  HeatMap hm;
  hm.lo = map.data()[0];
  hm.hi = map.data()[0];
  for (long long i = 0; i < map.numel(); ++i) {
    hm.lo = std::min(hm.lo, map.data()[i]);
    hm.hi = std::max(hm.hi, map.data()[i]);
  }
  hm.image = Tensor::zeros({1, 1, s.h, s.w});
  if (hm.hi > hm.lo)
    for (long long i = 0; i < map.numel(); ++i)
      hm.image.data()[i] = (map.data()[i] - hm.lo) / (hm.hi - hm.lo);
  return hm;
}

}  // namespace

void dump_features(const StrpmModel& model, const std::vector<Tensor>& frames, int layer, int step,
                   const std::string& out_dir) {
  check(!frames.empty() && frames[0].shape().n == 1, "dump_features: frames must be single-sample");
  const FeatureCapture cap = capture_features(model, frames, layer, step);
  std::filesystem::create_directories(out_dir);
  char prefix[64];
  std::snprintf(prefix, sizeof(prefix), "layer%d_step%d_", layer, step);
  const std::pair<const char*, const Tensor*> maps[] = {{"temporal_features", &cap.t_input},
                                                        {"spatial_features", &cap.s_input},
                                                        {"stif", &cap.stif},
                                                        {"strf", &cap.strf}};
  std::ofstream sidecar((std::filesystem::path(out_dir) / (std::string(prefix) + "ranges.txt")).string(),
                        std::ios::binary);
  check(sidecar.good(), "dump_features: cannot open sidecar in " + out_dir);
  for (const auto& [name, tensor] : maps) {
    const HeatMap hm = channel_mean_heatmap(*tensor);
    write_pgm(hm.image,
              (std::filesystem::path(out_dir) / (std::string(prefix) + name + ".pgm")).string());
    sidecar << name << " " << format_double(hm.lo) << " " << format_double(hm.hi) << "\n";
  }
}

}  // namespace strpm
