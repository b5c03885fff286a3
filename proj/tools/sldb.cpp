// Command-line entry point: pretrain, finetune, eval, mask-sweep, count,
// augment, synth and stats.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sldb/augment/augment.hpp"
#include "sldb/data/data.hpp"
#include "sldb/swin/count.hpp"
#include "sldb/train/sweep.hpp"
#include "sldb/train/train.hpp"

namespace fs = std::filesystem;
using namespace sldb;

namespace {

/// Bad input on the command line or in the files it names (exit 2).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string data;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> overrides;
  bool verbose = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_data = true) {
  cmd->add_option("--config", c.config, "run config JSON (defaults: SL-DDBD fine-tuning settings)");
  if (with_data) cmd->add_option("--data", c.data, "dataset root holding c0..c9 with .ppm images")->required();
  cmd->add_option("--out", c.out, "output directory")->required();
  cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
  cmd->add_option("--override", c.overrides, "config override key=value, repeatable");
  cmd->add_flag("--verbose", c.verbose, "progress on stderr");
}

RunConfig resolve_config(const Common& c) {
  RunConfig config = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  config = apply_overrides(config, c.overrides);
  if (c.seed) config.seed = *c.seed;
  config.validate();
  return config;
}

DatasetIndex open_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw UsageError("data directory not found: " + dir);
  try {
    return index_dataset(dir);
  } catch (const FileError& e) {
    throw UsageError(e.what());
  } catch (const DecodeError& e) {
    throw UsageError(e.what());
  }
}

void make_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory " + dir + ": " + ec.message());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

DatasetSplit split_for(const RunConfig& config, const DatasetIndex& index, const std::string& manifest,
                       const fs::path& out) {
  DatasetSplit split;
  if (!manifest.empty()) {
    if (!fs::is_regular_file(manifest)) throw UsageError("split manifest not found: " + manifest);
    split = read_split_manifest(manifest);
  } else {
    split = split_dataset(index, config.train_fraction, config.seed);
  }
  write_split_manifest(out / "split.tsv", split);
  return split;
}

// --- Subcommands -----------------------------------------------------------------

struct PretrainArgs {
  Common common;
  std::string resume;
  std::size_t stop_after = 0;
};

int cmd_pretrain(const PretrainArgs& a) {
  const RunConfig config = resolve_config(a.common);
  const auto index = open_dataset(a.common.data);
  make_out_dir(a.common.out);
  RunOptions opts;
  opts.out_dir = a.common.out;
  opts.resume = a.resume;
  opts.stop_after_step = a.stop_after;
  opts.quiet = !a.common.verbose;
  const auto r = run_pretrain(config, index, opts);
  std::printf("steps\t%zu\n", r.steps_done);
  if (!r.losses.empty()) std::printf("final_loss\t%.6f\n", r.losses.back());
  std::printf("checkpoint\t%s\n", r.checkpoint.string().c_str());
  return 0;
}

struct FinetuneArgs {
  Common common;
  std::string pretrained;
  std::string resume;
  std::string split;
  std::size_t stop_after = 0;
};

int cmd_finetune(const FinetuneArgs& a) {
  const RunConfig config = resolve_config(a.common);
  const auto index = open_dataset(a.common.data);
  make_out_dir(a.common.out);
  const auto split = split_for(config, index, a.split, a.common.out);
  if (split.train.size() == 0) throw UsageError("training split is empty");
  RunOptions opts;
  opts.out_dir = a.common.out;
  opts.resume = a.resume;
  opts.pretrained = a.pretrained;
  opts.stop_after_step = a.stop_after;
  opts.quiet = !a.common.verbose;
  if (split.test.size() > 0) opts.test = &split.test;
  const auto r = run_finetune(config, split.train, opts);
  const Metrics& shown = opts.test ? r.test_metrics : r.train_metrics;
  write_text(fs::path(a.common.out) / "metrics.txt", shown.table());
  std::printf("%s set, epoch %zu\n", opts.test ? "test" : "train", r.epochs_done);
  std::fputs(shown.table().c_str(), stdout);
  std::printf("checkpoint\t%s\n", r.checkpoint.string().c_str());
  return 0;
}

struct EvalArgs {
  std::string checkpoint;
  std::string data;
  std::string split;
  std::string subset = "test";
  std::size_t batch_size = 32;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  if (!fs::is_regular_file(a.checkpoint)) throw UsageError("checkpoint not found: " + a.checkpoint);
  const auto ckpt = load_checkpoint(a.checkpoint);
  if (checkpoint_kind(ckpt) != "finetune") throw UsageError("eval needs a fine-tuning checkpoint: " + a.checkpoint);
  const auto config = checkpoint_config(ckpt);
  DatasetIndex index;
  if (!a.split.empty()) {
    if (!fs::is_regular_file(a.split)) throw UsageError("split manifest not found: " + a.split);
    const auto split = read_split_manifest(a.split);
    index = a.subset == "train" ? split.train : split.test;
  } else {
    index = open_dataset(a.data);
  }
  if (index.size() == 0) throw UsageError("nothing to evaluate");
  const auto model = load_classifier(ckpt);
  BatchLoader loader(index, config.model.img_size);
  const auto m = evaluate(model, loader, a.batch_size);
  if (!a.out.empty()) {
    make_out_dir(a.out);
    write_text(fs::path(a.out) / "metrics.txt", m.table());
  }
  std::fputs(m.table().c_str(), stdout);
  return 0;
}

struct SweepArgs {
  Common common;
  std::string split;
  std::vector<std::size_t> patches{16, 32, 64};
  std::vector<double> ratios{0.4, 0.5, 0.6};
  std::size_t pretrain_epochs = 0;
};

int cmd_mask_sweep(const SweepArgs& a) {
  const RunConfig config = resolve_config(a.common);
  const auto index = open_dataset(a.common.data);
  make_out_dir(a.common.out);
  const auto split = split_for(config, index, a.split, a.common.out);
  if (split.train.size() == 0 || split.test.size() == 0)
    throw UsageError("mask-sweep needs non-empty train and test splits (train_fraction < 1)");
  SweepOptions opts;
  opts.patch_sizes = a.patches;
  opts.ratios = a.ratios;
  opts.pretrain_epochs = a.pretrain_epochs;
  opts.quiet = !a.common.verbose;
  const auto rows = run_mask_sweep(config, split.train, split.test, a.common.out, opts);
  const auto table = format_sweep_table(rows);
  write_text(fs::path(a.common.out) / "sweep.tsv", table);
  std::fputs(table.c_str(), stdout);
  for (const auto& r : rows)
    if (r.status != "ok") return 1;
  return 0;
}

struct CountArgs {
  std::string config;
  std::string preset = "sl-ddbd";
  std::vector<std::string> overrides;
  std::size_t img = 0;
  std::string kind;
  std::size_t h = 0, w = 0, c = 0, window = 7;
};

int cmd_count(const CountArgs& a) {
  if (!a.kind.empty()) {
    if (a.h == 0 || a.w == 0 || a.c == 0) throw UsageError("--kind needs positive --h, --w and --c");
    const auto kind = a.kind == "msa" ? AttentionKind::kGlobal : AttentionKind::kWindowed;
    std::printf("%llu\n", static_cast<unsigned long long>(count_attention_flops(kind, a.h, a.w, a.c, a.window)));
    return 0;
  }
  SwinConfig model;
  if (!a.config.empty()) {
    model = apply_overrides(RunConfig::load(a.config), a.overrides).model;
  } else {
    RunConfig rc;
    rc.model = a.preset == "baseline" ? SwinConfig::baseline()
               : a.preset == "tiny"   ? SwinConfig::tiny()
                                      : SwinConfig::sl_ddbd();
    model = apply_overrides(rc, a.overrides).model;
  }
  if (a.img) model.img_size = a.img;
  model.validate();
  const auto flops = count_flops(model);
  std::printf("parameters\t%llu\n", static_cast<unsigned long long>(count_params(model)));
  std::printf("flops\t%llu\t%s\n", static_cast<unsigned long long>(flops.total), format_giga(flops.total).c_str());
  std::printf("stage\tresolution\tchannels\twindow\tblocks\tattention_flops_per_block\tstage_flops\n");
  for (std::size_t s = 0; s < kNumStages; ++s) {
    const auto g = model.stage_geometry(s);
    const auto attn = count_attention_flops(AttentionKind::kWindowed, g.resolution, g.resolution, g.channels, g.window);
    std::printf("%zu\t%zu\t%zu\t%zu\t%zu\t%llu\t%llu\n", s + 1, g.resolution, g.channels, g.window, model.depths[s],
                static_cast<unsigned long long>(attn), static_cast<unsigned long long>(flops.stages[s]));
  }
  return 0;
}

struct AugmentArgs {
  std::string config;
  std::string data;
  std::string out;
  std::uint64_t seed = kDefaultSeed;
  std::vector<std::string> overrides;
  bool color_jitter = false, motion_blur = false, gaussian_noise = false, hflip_scale = false;
  std::size_t multiplier = 1;
  std::size_t resize = 0;
};

int cmd_augment(const AugmentArgs& a) {
  RunConfig rc = a.config.empty() ? RunConfig{} : RunConfig::load(a.config);
  rc = apply_overrides(rc, a.overrides);
  AugmentConfig aug = rc.augment;
  aug.color_jitter = aug.color_jitter || a.color_jitter;
  aug.motion_blur = aug.motion_blur || a.motion_blur;
  aug.gaussian_noise = aug.gaussian_noise || a.gaussian_noise;
  aug.hflip_scale = aug.hflip_scale || a.hflip_scale;
  if (a.multiplier != 1) aug.multiplier = a.multiplier;
  try {
    aug.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const auto index = open_dataset(a.data);
  make_out_dir(a.out);
  const auto r = expand_dataset(index, aug, a.seed, a.out, a.resize);
  const auto before = index.class_counts(), after = r.index.class_counts();
  std::printf("class\tbefore\tafter\n");
  std::size_t tb = 0, ta = 0;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    std::printf("c%zu\t%zu\t%zu\n", c, before[c], after[c]);
    tb += before[c];
    ta += after[c];
  }
  std::printf("total\t%zu\t%zu\n", tb, ta);
  std::printf("manifest\t%s\n", r.manifest.string().c_str());
  return 0;
}

struct SynthArgs {
  std::string out;
  std::size_t per_class = 20;
  std::size_t img = 64;
  std::uint64_t seed = kDefaultSeed;
  double noise = 0.05;
};

int cmd_synth(const SynthArgs& a) {
  if (a.per_class == 0 || a.img == 0) throw UsageError("--per-class and --img must be positive");
  const auto index = write_synthetic_dataset(a.out, a.per_class, a.img, a.seed, a.noise);
  std::printf("images\t%zu\nroot\t%s\n", index.size(), index.root.string().c_str());
  return 0;
}

struct StatsArgs {
  std::string data;
  std::size_t img = 224;
};

int cmd_stats(const StatsArgs& a) {
  const auto index = open_dataset(a.data);
  const auto s = compute_channel_stats(index, a.img);
  std::printf("channel\tmean\tstd\n");
  const char* names[] = {"r", "g", "b"};
  for (std::size_t c = 0; c < 3; ++c) std::printf("%s\t%.6f\t%.6f\n", names[c], s.mean[c], s.stddev[c]);
  std::printf("pixels\t%zu\n", s.pixels);
  return 0;
}

std::string one_line(std::string s) {
  for (std::size_t i = 0; i < s.size(); ++i)
    if (s[i] == '\n') s.replace(i, 1, "; ");
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Swin driver-distraction classifier: MIM pretraining, fine-tuning and tooling"};
  app.require_subcommand(1);

  PretrainArgs pre;
  auto* pretrain = app.add_subcommand("pretrain", "masked-image-modeling pretraining");
  add_common(pretrain, pre.common);
  pretrain->add_option("--resume", pre.resume, "checkpoint to continue from");
  pretrain->add_option("--stop-after-step", pre.stop_after, "stop once this many steps are done");

  FinetuneArgs ft;
  auto* finetune = app.add_subcommand("finetune", "classification fine-tuning with per-epoch evaluation");
  add_common(finetune, ft.common);
  finetune->add_option("--pretrained", ft.pretrained, "pretraining checkpoint for the encoder");
  finetune->add_option("--resume", ft.resume, "fine-tuning checkpoint to continue from");
  finetune->add_option("--split", ft.split, "split manifest to reuse instead of splitting --data");
  finetune->add_option("--stop-after-step", ft.stop_after, "stop once this many steps are done");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "evaluate a fine-tuning checkpoint");
  eval->add_option("--checkpoint", ev.checkpoint, "fine-tuning checkpoint")->required();
  eval->add_option("--data", ev.data, "dataset root to evaluate entirely");
  eval->add_option("--split", ev.split, "split manifest; evaluates --subset of it");
  eval->add_option("--subset", ev.subset, "train or test")->check(CLI::IsMember({"train", "test"}));
  eval->add_option("--batch-size", ev.batch_size, "images per forward pass")->check(CLI::PositiveNumber);
  eval->add_option("--out", ev.out, "directory for metrics.txt");

  SweepArgs sw;
  auto* sweep = app.add_subcommand("mask-sweep", "fine-tune once per (mask patch size, ratio) cell");
  add_common(sweep, sw.common);
  sweep->add_option("--split", sw.split, "split manifest to reuse");
  sweep->add_option("--patches", sw.patches, "mask patch sizes in pixels")->delimiter(',');
  sweep->add_option("--ratios", sw.ratios, "mask ratios")->delimiter(',');
  sweep->add_option("--pretrain-epochs", sw.pretrain_epochs, "pretrain each cell first for this many epochs");

  CountArgs ct;
  auto* count = app.add_subcommand("count", "parameter and FLOP counts");
  count->set_help_flag("--help", "print this help message and exit");  // -h would clash with --h
  count->add_option("--config", ct.config, "run config JSON");
  count->add_option("--preset", ct.preset, "model when no config is given")
      ->check(CLI::IsMember({"sl-ddbd", "baseline", "tiny"}));
  count->add_option("--override", ct.overrides, "config override key=value, repeatable");
  count->add_option("--img", ct.img, "image size (default: the config's)");
  count->add_option("--kind", ct.kind, "single attention layer: msa (global) or wmsa (windowed)")
      ->check(CLI::IsMember({"msa", "wmsa"}));
  count->add_option("--h", ct.h, "token rows");
  count->add_option("--w", ct.w, "token columns");
  count->add_option("--c", ct.c, "channels");
  count->add_option("--window", ct.window, "window size for wmsa");

  AugmentArgs ag;
  auto* augment = app.add_subcommand("augment", "offline dataset expansion");
  augment->add_option("--config", ag.config, "run config JSON supplying augmentation ranges");
  augment->add_option("--data", ag.data, "source dataset root")->required();
  augment->add_option("--out", ag.out, "expanded dataset root")->required();
  augment->add_option("--seed", ag.seed, "expansion seed");
  augment->add_option("--override", ag.overrides, "config override key=value, repeatable");
  augment->add_flag("--color-jitter", ag.color_jitter, "exposure, saturation and hue jitter");
  augment->add_flag("--motion-blur", ag.motion_blur, "linear motion blur");
  augment->add_flag("--gaussian-noise", ag.gaussian_noise, "additive Gaussian noise");
  augment->add_flag("--hflip-scale", ag.hflip_scale, "horizontal flip plus random rescale");
  augment->add_option("--multiplier", ag.multiplier, "variants per strategy per image")->check(CLI::PositiveNumber);
  augment->add_option("--resize", ag.resize, "resize to this square size before augmenting (0 keeps sizes)");

  SynthArgs sy;
  auto* synth = app.add_subcommand("synth", "write a synthetic 10-class colour-pattern dataset");
  synth->add_option("--out", sy.out, "dataset root")->required();
  synth->add_option("--per-class", sy.per_class, "images per class");
  synth->add_option("--img", sy.img, "image size");
  synth->add_option("--seed", sy.seed, "noise seed");
  synth->add_option("--noise", sy.noise, "pixel noise standard deviation")->check(CLI::NonNegativeNumber);

  StatsArgs st;
  auto* stats = app.add_subcommand("stats", "per-channel mean and std of a dataset");
  stats->add_option("--data", st.data, "dataset root")->required();
  stats->add_option("--img", st.img, "resize to this size first")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pretrain) return cmd_pretrain(pre);
    if (*finetune) return cmd_finetune(ft);
    if (*eval) {
      if (ev.data.empty() == ev.split.empty()) throw UsageError("eval needs exactly one of --data and --split");
      return cmd_eval(ev);
    }
    if (*sweep) return cmd_mask_sweep(sw);
    if (*count) return cmd_count(ct);
    if (*augment) return cmd_augment(ag);
    if (*synth) return cmd_synth(sy);
    if (*stats) return cmd_stats(st);
  } catch (const UsageError& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const CompatibilityError& e) {
    std::cerr << "incompatible checkpoint: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const EmptyMaskError& e) {
    std::cerr << "config error: " << one_line(e.what()) << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << one_line(e.what()) << "\n";
    return 1;
  }
  return 2;
}
