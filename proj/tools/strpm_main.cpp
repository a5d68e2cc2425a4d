// SPDX-License-Identifier: Apache-2.0
//
// strpm: data generation, training, evaluation, prediction, ablation,
// gradient checking and feature dumps for the STRPM predictor.

#include <cstdio>
#include <exception>
#include <filesystem>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "strpm/checkpoint.hpp"
#include "strpm/config.hpp"
#include "strpm/data.hpp"
#include "strpm/gradcheck.hpp"
#include "strpm/train.hpp"

namespace fs = std::filesystem;
using namespace strpm;

namespace {

struct ConfigCli {
  std::string profile = "desk";
  std::string config_file;
  std::vector<std::string> sets;
};

void add_config_options(CLI::App* cmd, ConfigCli& cc) {
  cmd->add_option("--profile", cc.profile, "Built-in profile: desk or paper")->capture_default_str();
  cmd->add_option("--config", cc.config_file, "key = value configuration file");
  cmd->add_option("--set", cc.sets, "Override one config key, e.g. --set layers=4")->allow_extra_args(false);
}

RunConfig resolve_config(const ConfigCli& cc) {
  RunConfig cfg = profile_by_name(cc.profile);
  if (!cc.config_file.empty()) load_config_file(cfg, cc.config_file);
  for (const std::string& kv : cc.sets) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
    config_set(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

int cmd_gen_data(const std::string& out_dir, int seqs, int frames, int size, int objects,
                 std::uint64_t seed) {
  if (seqs < 1) throw UsageError("gen-data: --seqs must be >= 1");
  fs::create_directories(out_dir);
  std::vector<std::string> manifests;
  for (int i = 0; i < seqs; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%03d", i);
    const VideoSequence seq = gen_sequence(seed + static_cast<std::uint64_t>(i), size, size, objects, frames);
    save_sequence(seq, (fs::path(out_dir) / name).string());
    manifests.push_back(std::string(name) + "/manifest.txt");
  }
  save_dataset_index(manifests, (fs::path(out_dir) / "dataset.txt").string());
  std::printf("wrote %d sequences of %d frames (%dx%d) under %s\n", seqs, frames, size, size,
              out_dir.c_str());
  return 0;
}

std::string default_log_path(const std::string& ckpt_path) { return ckpt_path + ".log.csv"; }

int cmd_train(const RunConfig& cfg, const std::string& data, const std::string& out,
              const std::string& log, const std::string& resume) {
  System sys(cfg);
  if (!resume.empty()) restore(sys, load_checkpoint_file(resume));
  const auto dataset = load_dataset(data, cfg.model.in_channels);
  const std::vector<LossRow> rows =
      train(sys, dataset, cfg.steps, cfg.loss_mode, log.empty() ? default_log_path(out) : log);
  save_checkpoint_file(snapshot(sys), out);
  std::printf("trained %d steps (%s); final mse %.6g; checkpoint %s\n", cfg.steps,
              loss_mode_name(cfg.loss_mode).c_str(), rows.back().mse, out.c_str());
  return 0;
}

void print_report(const EvalReport& rep) {
  std::printf("%-6s %12s %14s\n", "step", "psnr_db", "proxy");
  for (size_t h = 0; h < rep.psnr.size(); ++h)
    std::printf("%-6zu %12.4f %14.6g\n", h + 1, rep.psnr[h], rep.proxy[h]);
  std::printf("windows        %d\n", rep.windows);
  std::printf("params         %lld\n", rep.params);
  std::printf("flops          %lld\n", rep.flops);
  std::printf("sec_per_sample %.6f\n", rep.sec_per_sample);
}

int cmd_eval(const std::string& ckpt_path, const std::string& data, int context, int horizon,
             int timing_samples, int threads) {
  System sys = system_from_checkpoint(load_checkpoint_file(ckpt_path));
  const auto dataset = load_dataset(data, sys.cfg.model.in_channels);
  const int ctx = context > 0 ? context : sys.cfg.context;
  const int hor = horizon > 0 ? horizon : sys.cfg.horizon;
  const int ts = timing_samples > 0 ? timing_samples : sys.cfg.timing_samples;
  const int th = threads > 0 ? threads : sys.cfg.threads;
  print_report(evaluate(sys, dataset, ctx, hor, ts, th));
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& data, const std::string& out_dir,
                int context, int horizon) {
  System sys = system_from_checkpoint(load_checkpoint_file(ckpt_path));
  const auto dataset = load_dataset(data, sys.cfg.model.in_channels);
  const int ctx = context > 0 ? context : sys.cfg.context;
  const int hor = horizon > 0 ? horizon : sys.cfg.horizon;
  fs::create_directories(out_dir);
  for (size_t s = 0; s < dataset.size(); ++s) {
    check(static_cast<int>(dataset[s].size()) >= ctx,
          "predict: sequence " + std::to_string(s) + " shorter than the context");
    const std::vector<Tensor> context_frames(dataset[s].begin(), dataset[s].begin() + ctx);
    const RolloutResult r = sys.model.rollout(context_frames, hor);
    VideoSequence pred;
    pred.frames = r.clamped;
    char name[32];
    std::snprintf(name, sizeof(name), "seq_%03zu", s);
    save_sequence(pred, (fs::path(out_dir) / name).string());
  }
  std::printf("wrote %d predicted frames for %zu sequences under %s\n", hor, dataset.size(),
              out_dir.c_str());
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const std::string& data, const std::vector<std::string>& variants,
               int steps) {
  const auto dataset = load_dataset(data, cfg.model.in_channels);
  const std::vector<std::string>& list = variants.empty() ? kAblationVariants : variants;
  const std::vector<AblationRow> rows = ablate(cfg, dataset, list, steps > 0 ? steps : cfg.ablate_steps);
  std::printf("%-18s %10s %12s %12s %14s\n", "variant", "psnr_db", "proxy", "params", "flops");
  for (const AblationRow& r : rows)
    std::printf("%-18s %10.4f %12.6g %12lld %14lld\n", r.variant.c_str(), r.psnr, r.proxy, r.params,
                r.flops);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed) {
  bool ok = true;
  for (const GradCheckEntry& e : gradcheck_primitives(seed)) {
    std::printf("%-24s %12.3e  (tol %g)  %s\n", e.name.c_str(), e.err, e.tol, e.pass() ? "ok" : "FAIL");
    ok = ok && e.pass();
  }
  const GradCheckEntry e2e = gradcheck_end_to_end(seed);
  std::printf("%-24s %12.3e  (tol %g)  %s\n", e2e.name.c_str(), e2e.err, e2e.tol,
              e2e.pass() ? "ok" : "FAIL");
  ok = ok && e2e.pass();
  if (!ok) fail("gradient check failed");
  return 0;
}

int cmd_dump_features(const std::string& ckpt_path, const std::string& data, int seq, int layer,
                      int step, const std::string& out_dir) {
  System sys = system_from_checkpoint(load_checkpoint_file(ckpt_path));
  const auto dataset = load_dataset(data, sys.cfg.model.in_channels);
  check(seq >= 0 && seq < static_cast<int>(dataset.size()),
        "dump-features: sequence index out of range");
  dump_features(sys.model, dataset[static_cast<size_t>(seq)], layer, step, out_dir);
  std::printf("wrote feature dumps for layer %d step %d under %s\n", layer, step, out_dir.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"STRPM video prediction"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate moving-shape sequences as PGM files");
  std::string gen_out;
  int gen_seqs = 8, gen_frames = 12, gen_size = 32, gen_objects = 1;
  std::uint64_t gen_seed = 7;
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--seqs", gen_seqs, "Number of sequences")->capture_default_str();
  gen->add_option("--frames", gen_frames, "Frames per sequence")->capture_default_str();
  gen->add_option("--size", gen_size, "Canvas height and width")->capture_default_str();
  gen->add_option("--objects", gen_objects, "Objects per sequence")->capture_default_str();
  gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();

  // train
  auto* tr = app.add_subcommand("train", "Train predictor (and discriminator when GAN is active)");
  ConfigCli tr_cfg;
  std::string tr_data, tr_out = "out.strpm", tr_log, tr_resume, tr_loss;
  int tr_steps = 0;
  std::uint64_t tr_seed = 0;
  bool tr_seed_set = false, tr_steps_set = false;
  add_config_options(tr, tr_cfg);
  tr->add_option("--data", tr_data, "Dataset index file")->required();
  tr->add_option("--out", tr_out, "Checkpoint output path")->capture_default_str();
  tr->add_option("--log", tr_log, "Loss log CSV path (default <out>.log.csv)");
  tr->add_option("--resume", tr_resume, "Checkpoint to resume from");
  tr->add_option("--loss", tr_loss, "Loss mode: mse, mse+gan, mse+gan+lp");
  tr->add_option("--steps", tr_steps, "Training steps")->each([&](const std::string&) { tr_steps_set = true; });
  tr->add_option("--seed", tr_seed, "Run seed")->each([&](const std::string&) { tr_seed_set = true; });

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint: per-step PSNR and perceptual proxy");
  std::string ev_ckpt, ev_data;
  int ev_context = 0, ev_horizon = 0, ev_timing = 0, ev_threads = 0;
  ev->add_option("--ckpt", ev_ckpt, "Checkpoint path")->required();
  ev->add_option("--data", ev_data, "Dataset index file")->required();
  ev->add_option("--context", ev_context, "Context frames (default from checkpoint)");
  ev->add_option("--horizon", ev_horizon, "Prediction steps (default from checkpoint)");
  ev->add_option("--timing-samples", ev_timing, "Samples for inference timing");
  ev->add_option("--threads", ev_threads, "Worker threads for evaluation windows");

  // predict
  auto* pr = app.add_subcommand("predict", "Roll out predictions and write them as PGM sequences");
  std::string pr_ckpt, pr_data, pr_out;
  int pr_context = 0, pr_horizon = 0;
  pr->add_option("--ckpt", pr_ckpt, "Checkpoint path")->required();
  pr->add_option("--data", pr_data, "Dataset index file")->required();
  pr->add_option("--out", pr_out, "Output directory")->required();
  pr->add_option("--context", pr_context, "Context frames (default from checkpoint)");
  pr->add_option("--horizon", pr_horizon, "Prediction steps (default from checkpoint)");

  // ablate
  auto* ab = app.add_subcommand("ablate", "Train and compare structural cell variants");
  ConfigCli ab_cfg;
  std::string ab_data;
  std::vector<std::string> ab_variants;
  int ab_steps = 0;
  add_config_options(ab, ab_cfg);
  ab->add_option("--data", ab_data, "Dataset index file")->required();
  ab->add_option("--variants", ab_variants, "Variant names (default: all)");
  ab->add_option("--steps", ab_steps, "Training steps per variant");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every primitive and the model");
  ConfigCli gc_cfg;
  std::uint64_t gc_seed = 20240501;
  add_config_options(gc, gc_cfg);
  gc->add_option("--seed", gc_seed, "Random seed")->capture_default_str();

  // dump-features
  auto* df = app.add_subcommand("dump-features", "Write channel-mean feature heatmaps for one layer/step");
  std::string df_ckpt, df_data, df_out;
  int df_seq = 0, df_layer = 1, df_step = 1;
  df->add_option("--ckpt", df_ckpt, "Checkpoint path")->required();
  df->add_option("--data", df_data, "Dataset index file")->required();
  df->add_option("--out", df_out, "Output directory")->required();
  df->add_option("--seq", df_seq, "Sequence index")->capture_default_str();
  df->add_option("--layer", df_layer, "Layer (1-based)")->capture_default_str();
  df->add_option("--step", df_step, "Time step (1-based)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_seqs, gen_frames, gen_size, gen_objects, gen_seed);
    if (tr->parsed()) {
      RunConfig cfg = resolve_config(tr_cfg);
      if (!tr_loss.empty()) cfg.loss_mode = parse_loss_mode(tr_loss);
      if (tr_steps_set) cfg.steps = tr_steps;
      if (tr_seed_set) cfg.seed = tr_seed;
      cfg.validate();
      return cmd_train(cfg, tr_data, tr_out, tr_log, tr_resume);
    }
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_context, ev_horizon, ev_timing, ev_threads);
    if (pr->parsed()) return cmd_predict(pr_ckpt, pr_data, pr_out, pr_context, pr_horizon);
    if (ab->parsed()) {
      RunConfig cfg = resolve_config(ab_cfg);
      if (cfg.model.layers < 5) {
        std::fprintf(stderr, "ablate: raising layers from %d to 6 so the theta=5 variants are valid\n",
                     cfg.model.layers);
        cfg.model.layers = 6;
      }
      cfg.validate();
      return cmd_ablate(cfg, ab_data, ab_variants, ab_steps);
    }
    if (gc->parsed()) {
      resolve_config(gc_cfg).validate();  // the checks themselves use fixed desk-scale shapes
      return cmd_gradcheck(gc_seed);
    }
    if (df->parsed()) return cmd_dump_features(df_ckpt, df_data, df_seq, df_layer, df_step, df_out);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}
