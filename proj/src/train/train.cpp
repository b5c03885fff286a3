#include "sldb/train/train.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "json.hpp"
#include "sldb/augment/augment.hpp"
#include "sldb/numerics/ops.hpp"
#include "sldb/numerics/tape.hpp"
#include "sldb/train/optimizer.hpp"

namespace sldb {

using nlohmann::json;

namespace {

// Independent streams under the run seed.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kStepStream = 2;

Rng init_rng(std::uint64_t seed) { return Rng(seed).derive(kInitStream); }
Rng step_rng(std::uint64_t seed, std::size_t step) { return Rng(seed).derive(kStepStream).derive(step); }

double cubic_weight(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1) return ((a + 2) * x - (a + 3)) * x * x + 1;
  if (x < 2) return ((a * x - 5 * a) * x + 8 * a) * x - 4 * a;
  return 0;
}

std::size_t isqrt_exact(std::size_t n, const std::string& what) {
  const auto r = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (r * r != n) throw DimensionError(what + ": " + std::to_string(n) + " rows is not a square grid");
  return r;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::size_t parameter_count(const ParameterList<T>& params) {
  std::size_t n = 0;
  for (const auto& p : params)
    if (p.name != "mask_token") n += p.tensor.numel();
  return n;
}

template <typename T>
Checkpoint make_checkpoint(const std::string& kind, const RunConfig& config, const ParameterList<T>& params,
                           const AdamW<T>& opt, std::size_t steps_done, std::size_t epochs_done) {
  Checkpoint c;
  json meta;
  meta["kind"] = kind;
  meta["config"] = json::parse(config.to_json());
  meta["step"] = steps_done;
  meta["epoch"] = epochs_done;
  meta["adamw_steps"] = opt.steps();
  meta["rng"] = {{"seed", config.seed}, {"next_step", steps_done}};
  meta["parameter_count"] = parameter_count(params);
  c.metadata = meta.dump(2);
  for (const auto& p : params) c.tensors.push_back(StoredTensor::from(p.name, p.tensor));
  if (opt.steps() > 0) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      c.tensors.push_back(
          StoredTensor::from(kFirstMomentPrefix + params[i].name, params[i].tensor.shape(), opt.first_moments()[i]));
      c.tensors.push_back(
          StoredTensor::from(kSecondMomentPrefix + params[i].name, params[i].tensor.shape(), opt.second_moments()[i]));
    }
  }
  return c;
}

json metadata_of(const Checkpoint& c) {
  try {
    return json::parse(c.metadata);
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("checkpoint metadata is not valid JSON: ") + e.what());
  }
}

struct ResumeState {
  std::size_t step = 0;
};

/// Restores parameters and optimizer state; returns the global step to continue from.
template <typename T>
ResumeState resume_from(const std::filesystem::path& path, const std::string& kind, const RunConfig& config,
                        const ParameterList<T>& params, AdamW<T>& opt) {
  const Checkpoint c = load_checkpoint(path);
  if (checkpoint_kind(c) != kind)
    throw CheckpointError(path.string() + ": a " + checkpoint_kind(c) + " checkpoint cannot resume " + kind);
  if (checkpoint_config(c).to_json() != config.to_json())
    throw ConfigError(path.string() + ": run config differs from the checkpoint's");
  restore_parameters(c, params);
  const json meta = metadata_of(c);
  const auto adam_steps = meta.at("adamw_steps").get<std::uint64_t>();
  std::vector<std::vector<T>> m, v;
  if (adam_steps > 0) {
    for (const auto& p : params) {
      const auto* sm = c.find(kFirstMomentPrefix + p.name);
      const auto* sv = c.find(kSecondMomentPrefix + p.name);
      if (!sm || !sv) throw CompatibilityError(path.string() + ": optimizer state missing for " + p.name, {p.name});
      auto tm = sm->template as<T>(), tv = sv->template as<T>();
      m.emplace_back(tm.data().begin(), tm.data().end());
      v.emplace_back(tv.data().begin(), tv.data().end());
    }
  }
  opt.restore(adam_steps, std::move(m), std::move(v));
  return {meta.at("step").get<std::size_t>()};
}

std::ofstream open_log(const std::filesystem::path& path, bool append, const std::string& header) {
  std::ofstream out(path, append ? std::ios::app : std::ios::trunc);
  if (!out) throw FileError(path, "cannot open log for writing");
  if (!append) out << header << '\n';
  return out;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw FileError(dir, "cannot create directory: " + ec.message());
}

/// Epoch batch lists computed once per epoch.
class EpochPlan {
 public:
  EpochPlan(std::size_t count, std::size_t batch_size, std::uint64_t seed)
      : count_(count), batch_size_(batch_size), seed_(seed) {}
  std::size_t steps_per_epoch() const { return (count_ + batch_size_ - 1) / batch_size_; }
  const std::vector<std::size_t>& batch(std::size_t step) {
    const std::size_t epoch = step / steps_per_epoch();
    if (epoch != epoch_ || batches_.empty()) {
      batches_ = epoch_batches(count_, batch_size_, seed_, epoch);
      epoch_ = epoch;
    }
    return batches_[step % steps_per_epoch()];
  }

 private:
  std::size_t count_, batch_size_;
  std::uint64_t seed_;
  std::size_t epoch_ = 0;
  std::vector<std::vector<std::size_t>> batches_;
};

CosineSchedule schedule_for(const RunConfig& config, std::size_t total_steps) {
  CosineSchedule s{config.base_lr, config.resolved_min_lr(), total_steps, config.warmup_steps};
  if (s.warmup_steps >= s.total_steps) s.warmup_steps = 0;
  s.validate();
  return s;
}

}  // namespace

// --- Classifier -----------------------------------------------------------------

template <typename T>
Classifier<T>::Classifier(const SwinConfig& config, Rng& init) : encoder_(config, init) {
  if (config.num_classes == 0) throw ConfigError("classifier needs num_classes > 0");
  head_.fc = make_linear<T>(config.final_channels(), config.num_classes, true, init);
  mask_token_ = trunc_normal<T>({config.embed_dim}, init);
}

template <typename T>
Tensor<T> Classifier<T>::logits(const Tensor<T>& images, const std::vector<MaskMap>& masks,
                                const ForwardOptions& options) const {
  auto tokens = encoder_.embed(images);
  if (!masks.empty()) tokens = apply_mask(tokens, masks, mask_token_);
  return classify(encoder_.forward_tokens(tokens, options), head_);
}

template <typename T>
ParameterList<T> Classifier<T>::parameters() const {
  auto p = encoder_.parameters();
  p.push_back({"head.weight", head_.fc.weight});
  p.push_back({"head.bias", head_.fc.bias});
  p.push_back({"mask_token", mask_token_});
  return p;
}

template <typename T>
Tensor<T> interpolate_bias_table(const Tensor<T>& table, std::size_t to_side) {
  if (table.rank() != 2) throw DimensionError("interpolate_bias_table: expected [rows, heads]");
  const std::size_t heads = table.dim(1);
  const std::size_t from = isqrt_exact(table.dim(0), "interpolate_bias_table");
  if (from == to_side) return table.detach();
  Tensor<T> out({to_side * to_side, heads});
  const double ratio = static_cast<double>(from) / static_cast<double>(to_side);
  const auto last = static_cast<long>(from) - 1;
  // Separable: taps and weights per output coordinate are shared by both axes.
  std::vector<std::array<long, 4>> taps(to_side);
  std::vector<std::array<double, 4>> weights(to_side);
  for (std::size_t i = 0; i < to_side; ++i) {
    const double src = (static_cast<double>(i) + 0.5) * ratio - 0.5;
    const double base = std::floor(src);
    const double t = src - base;
    for (int k = 0; k < 4; ++k) {
      taps[i][k] = std::clamp(static_cast<long>(base) - 1 + k, 0L, last);
      weights[i][k] = cubic_weight(t - (k - 1));
    }
  }
  for (std::size_t y = 0; y < to_side; ++y)
    for (std::size_t x = 0; x < to_side; ++x)
      for (std::size_t h = 0; h < heads; ++h) {
        double acc = 0;
        for (int a = 0; a < 4; ++a)
          for (int b = 0; b < 4; ++b)
            acc += weights[y][a] * weights[x][b] *
                   static_cast<double>(table[(static_cast<std::size_t>(taps[y][a]) * from +
                                              static_cast<std::size_t>(taps[x][b])) * heads + h]);
        out[(y * to_side + x) * heads + h] = static_cast<T>(acc);
      }
  return out;
}

template <typename T>
std::vector<std::string> load_pretrained_encoder(const Checkpoint& checkpoint, Classifier<T>& model,
                                                 bool interpolate) {
  const auto params = model.parameters();
  std::vector<std::string> mismatched, interpolated;
  std::vector<std::pair<Tensor<T>, Tensor<T>>> copies;  // destination, values
  const std::string table_suffix = "relative_position_bias_table";
  for (const auto& p : params) {
    if (p.name.rfind("head.", 0) == 0) continue;
    const StoredTensor* s = checkpoint.find(p.name);
    if (!s) {
      if (p.name != "mask_token") mismatched.push_back(p.name + " missing from checkpoint");
      continue;
    }
    if (s->shape == p.tensor.shape()) {
      copies.emplace_back(p.tensor, s->template as<T>());
      continue;
    }
    const bool is_table = p.name.size() >= table_suffix.size() &&
                          p.name.compare(p.name.size() - table_suffix.size(), table_suffix.size(), table_suffix) == 0;
    if (is_table && s->shape.size() == 2 && s->shape[1] == p.tensor.dim(1)) {
      if (interpolate) {
        const std::size_t side = isqrt_exact(p.tensor.dim(0), p.name);
        copies.emplace_back(p.tensor, interpolate_bias_table(s->template as<T>(), side));
        interpolated.push_back(p.name);
        continue;
      }
      mismatched.push_back(p.name + " " + shape_str(s->shape) + " vs model " + shape_str(p.tensor.shape()) +
                           " (window size differs; enable interpolate_bias)");
      continue;
    }
    mismatched.push_back(p.name + " " + shape_str(s->shape) + " vs model " + shape_str(p.tensor.shape()));
  }
  if (!mismatched.empty()) {
    std::string what = "pretrained checkpoint is incompatible with the fine-tuning model:";
    for (const auto& m : mismatched) what += "\n  " + m;
    throw CompatibilityError(what, mismatched);
  }
  for (auto& [dst, values] : copies) std::copy(values.data().begin(), values.data().end(), dst.data().begin());
  return interpolated;
}

// --- Evaluation -------------------------------------------------------------------

Metrics evaluate(const Classifier<float>& model, BatchLoader& loader, std::size_t batch_size,
                 const std::vector<std::size_t>& members) {
  std::vector<std::size_t> order = members;
  if (order.empty())
    for (std::size_t i = 0; i < loader.index().size(); ++i) order.push_back(i);
  std::vector<std::size_t> predictions, labels;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::vector<std::size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + batch_size)));
    const Batch batch = loader.load(chunk);
    const auto pred = argmax_rows(model.logits(batch.images));
    predictions.insert(predictions.end(), pred.begin(), pred.end());
    for (auto i : chunk) labels.push_back(loader.index().records[i].label);
  }
  return compute_metrics(predictions, labels);
}

// --- Pretraining ------------------------------------------------------------------

PretrainResult run_pretrain(const RunConfig& config, const DatasetIndex& data, const RunOptions& options) {
  config.validate();
  if (data.size() == 0) throw FileError(data.root, "dataset is empty");
  ensure_dir(options.out_dir);
  BatchLoader loader(data, config.model.img_size);
  EpochPlan plan(data.size(), config.batch_size, config.seed);
  const std::size_t total = plan.steps_per_epoch() * config.epochs;
  const CosineSchedule schedule = schedule_for(config, total);

  Rng init = init_rng(config.seed);
  MimModel<float> model(config.model, config.target_factor, init);
  AdamW<float> opt(config.optim);
  const auto params = model.parameters();

  std::size_t step = 0;
  if (!options.resume.empty()) step = resume_from(options.resume, "pretrain", config, params, opt).step;
  auto log = open_log(options.out_dir / "pretrain_log.tsv", step > 0, "step\tepoch\tlr\tloss");

  PretrainResult result;
  const std::size_t end = options.stop_after_step ? std::min(total, options.stop_after_step) : total;
  auto save = [&](const std::filesystem::path& path, std::size_t done) {
    save_checkpoint(path, make_checkpoint("pretrain", config, params, opt, done, done / plan.steps_per_epoch()));
  };
  for (; step < end; ++step) {
    const std::size_t epoch = step / plan.steps_per_epoch();
    const Batch batch = loader.load(plan.batch(step));
    Rng rng = step_rng(config.seed, step);
    const double lr = schedule.lr_at(step);
    const double loss = pretrain_step(model, batch.images, config.mask, rng, opt, lr);
    if (!std::isfinite(loss)) throw std::runtime_error("pretraining diverged at step " + std::to_string(step));
    result.losses.push_back(loss);
    log << step << '\t' << epoch << '\t' << fmt17(lr) << '\t' << fmt17(loss) << '\n';
    if (!options.quiet) std::cerr << "pretrain step " << step + 1 << "/" << total << " loss " << loss << '\n';
    const bool epoch_end = (step + 1) % plan.steps_per_epoch() == 0;
    if (epoch_end && config.checkpoint_every && (epoch + 1) % config.checkpoint_every == 0) {
      save(options.out_dir / ("pretrain_epoch" + std::to_string(epoch + 1) + ".ckpt"), step + 1);
    }
  }
  log.flush();
  result.steps_done = step;
  result.checkpoint = options.out_dir / "pretrain.ckpt";
  save(result.checkpoint, step);
  return result;
}

// --- Fine-tuning ------------------------------------------------------------------

FinetuneResult run_finetune(const RunConfig& config, const DatasetIndex& train, const RunOptions& options) {
  config.validate();
  if (train.size() == 0) throw FileError(train.root, "dataset is empty");
  ensure_dir(options.out_dir);
  BatchLoader loader(train, config.model.img_size);
  std::unique_ptr<BatchLoader> test_loader;
  if (options.test) test_loader = std::make_unique<BatchLoader>(*options.test, config.model.img_size);
  EpochPlan plan(train.size(), config.batch_size, config.seed);
  const std::size_t spe = plan.steps_per_epoch();
  const std::size_t total = spe * config.epochs;
  const CosineSchedule schedule = schedule_for(config, total);

  Rng init = init_rng(config.seed);
  Classifier<float> model(config.model, init);
  if (!options.pretrained.empty() && options.resume.empty()) {
    const auto interpolated =
        load_pretrained_encoder(load_checkpoint(options.pretrained), model, config.interpolate_bias);
    if (!options.quiet && !interpolated.empty())
      std::cerr << "interpolated " << interpolated.size() << " relative-position tables\n";
  }
  AdamW<float> opt(config.optim);
  const auto params = model.parameters();

  std::size_t step = 0;
  if (!options.resume.empty()) step = resume_from(options.resume, "finetune", config, params, opt).step;
  auto step_log = open_log(options.out_dir / "finetune_steps.tsv", step > 0, "step\tepoch\tlr\tloss\tmix");
  auto epoch_log = open_log(options.out_dir / "finetune_log.tsv", step > 0,
                            "epoch\tstep\tmean_loss\ttrain_accuracy\ttest_accuracy\ttest_macro_f1");

  FinetuneResult result;
  const std::size_t end = options.stop_after_step ? std::min(total, options.stop_after_step) : total;
  const MaskSpec ft_mask = config.finetune_mask();
  double epoch_loss = 0;
  std::size_t epoch_steps = 0;
  for (; step < end; ++step) {
    const std::size_t epoch = step / spe;
    Batch batch = loader.load(plan.batch(step));
    Rng rng = step_rng(config.seed, step);
    const std::string mix = mix_batch(batch.images, batch.labels, config.augment, rng);
    std::vector<MaskMap> masks;
    if (config.mask_in_finetune)
      for (std::size_t b = 0; b < batch.images.dim(0); ++b)
        masks.push_back(generate_mask(ft_mask, config.model.img_size, rng));

    for (const auto& p : params) p.tensor.clear_grad();
    double loss;
    {
      Tape<float> tape;
      auto logits = model.logits(batch.images, masks, {true, &rng});
      auto value = soft_cross_entropy(logits, batch.labels);
      loss = static_cast<double>(value.item());
      tape.backward(value);
    }
    const double lr = schedule.lr_at(step);
    opt.step(params, lr);
    if (!std::isfinite(loss)) throw std::runtime_error("fine-tuning diverged at step " + std::to_string(step));
    result.losses.push_back(loss);
    epoch_loss += loss;
    ++epoch_steps;
    step_log << step << '\t' << epoch << '\t' << fmt17(lr) << '\t' << fmt17(loss) << '\t'
             << (mix.empty() ? "-" : mix) << '\n';

    if ((step + 1) % spe != 0) continue;
    // Epoch boundary: deterministic evaluation.
    result.train_metrics = evaluate(model, loader, config.batch_size);
    result.train_accuracy.push_back(result.train_metrics.accuracy);
    result.epochs_done = epoch + 1;
    if (result.train_metrics.accuracy == 1.0 && result.first_full_accuracy_epoch == 0)
      result.first_full_accuracy_epoch = epoch + 1;
    double test_acc = -1, test_f1 = -1;
    if (test_loader) {
      result.test_metrics = evaluate(model, *test_loader, config.batch_size);
      test_acc = result.test_metrics.accuracy;
      test_f1 = result.test_metrics.macro_f1;
    }
    epoch_log << epoch + 1 << '\t' << step + 1 << '\t' << fmt17(epoch_loss / static_cast<double>(epoch_steps))
              << '\t' << fmt17(result.train_metrics.accuracy) << '\t' << (test_loader ? fmt17(test_acc) : "-")
              << '\t' << (test_loader ? fmt17(test_f1) : "-") << '\n';
    epoch_log.flush();
    if (!options.quiet)
      std::cerr << "epoch " << epoch + 1 << "/" << config.epochs << " loss " << epoch_loss / static_cast<double>(epoch_steps)
                << " train acc " << result.train_metrics.accuracy << '\n';
    epoch_loss = 0;
    epoch_steps = 0;
    if (config.checkpoint_every && (epoch + 1) % config.checkpoint_every == 0) {
      save_checkpoint(options.out_dir / ("finetune_epoch" + std::to_string(epoch + 1) + ".ckpt"),
                      make_checkpoint("finetune", config, params, opt, step + 1, epoch + 1));
    }
    if (config.stop_at_full_train_accuracy && result.train_metrics.accuracy == 1.0) {
      ++step;
      break;
    }
  }
  result.steps_done = step;
  result.checkpoint = options.out_dir / "finetune.ckpt";
  save_checkpoint(result.checkpoint, make_checkpoint("finetune", config, params, opt, step, step / spe));
  return result;
}

// --- Checkpoint helpers -------------------------------------------------------------

RunConfig checkpoint_config(const Checkpoint& checkpoint) {
  const json meta = metadata_of(checkpoint);
  if (!meta.contains("config")) throw CheckpointError("checkpoint metadata has no config");
  return RunConfig::from_json(meta["config"].dump());
}

std::string checkpoint_kind(const Checkpoint& checkpoint) {
  const json meta = metadata_of(checkpoint);
  if (!meta.contains("kind") || !meta["kind"].is_string()) throw CheckpointError("checkpoint metadata has no kind");
  return meta["kind"].get<std::string>();
}

Classifier<float> load_classifier(const Checkpoint& checkpoint) {
  if (checkpoint_kind(checkpoint) != "finetune")
    throw CheckpointError("expected a fine-tuning checkpoint, got " + checkpoint_kind(checkpoint));
  const RunConfig config = checkpoint_config(checkpoint);
  Rng init = init_rng(config.seed);
  Classifier<float> model(config.model, init);
  restore_parameters(checkpoint, model.parameters());
  return model;
}

std::vector<LossRecord> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FileError(path, "cannot open log");
  std::string line;
  std::getline(in, line);
  if (line.rfind("step\tepoch\tlr\tloss", 0) != 0) throw FileError(path, "unexpected log header");
  std::vector<LossRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    LossRecord r;
    std::string lr, loss;
    ss >> r.step >> r.epoch >> lr >> loss;
    if (!ss) throw FileError(path, "malformed log line: " + line);
    r.lr = std::stod(lr);
    r.loss = std::stod(loss);
    out.push_back(r);
  }
  return out;
}

template class Classifier<float>;
template class Classifier<double>;
template Tensor<float> interpolate_bias_table(const Tensor<float>&, std::size_t);
template Tensor<double> interpolate_bias_table(const Tensor<double>&, std::size_t);
template std::vector<std::string> load_pretrained_encoder(const Checkpoint&, Classifier<float>&, bool);
template std::vector<std::string> load_pretrained_encoder(const Checkpoint&, Classifier<double>&, bool);

}  // namespace sldb
