#include "sldb/train/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace sldb {

using nlohmann::json;

namespace {

template <typename V>
void take(const json& j, const char* key, V& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->get<V>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config key '") + key + "': wrong type (" + it->dump() + ")");
  }
}

void take_count(const json& j, const char* key, std::size_t& out) {
  auto it = j.find(key);
  if (it == j.end()) return;
  if (!it->is_number_unsigned()) throw ConfigError(std::string("config key '") + key + "': expected a nonnegative integer");
  out = it->get<std::size_t>();
}

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = [] {
    std::set<std::string> k;
    const json defaults = json::parse(RunConfig{}.to_json());
    for (auto& [key, value] : defaults.items()) k.insert(key);
    return k;
  }();
  return keys;
}

std::size_t mask_units(std::size_t img, std::size_t unit) {
  const std::size_t side = (img + unit - 1) / unit;
  return side * side;
}

void check_mask(const MaskSpec& spec, std::size_t img, const char* what) {
  try {
    spec.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
  if (spec.mask_patch_size > img)
    throw ConfigError(std::string(what) + ": mask patch " + std::to_string(spec.mask_patch_size) +
                      " exceeds image size " + std::to_string(img));
  const auto units = mask_units(img, spec.mask_patch_size);
  if (std::llround(spec.ratio * static_cast<double>(units)) == 0)
    throw ConfigError(std::string(what) + ": ratio " + std::to_string(spec.ratio) + " masks no unit of " +
                      std::to_string(units));
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  check_mask(mask, model.img_size, "pretraining mask");
  try {
    stage_for_factor(target_factor);
    augment.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (mask_in_finetune) check_mask(finetune_mask(), model.img_size, "fine-tuning mask");
  if (!(base_lr >= 0)) throw ConfigError("base_lr must be nonnegative");
  if (resolved_min_lr() > base_lr) throw ConfigError("min_lr exceeds base_lr");
  if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1))
    throw ConfigError("adamw betas must lie in [0, 1)");
  if (!(optim.eps > 0)) throw ConfigError("adamw eps must be positive");
  if (!(optim.weight_decay >= 0)) throw ConfigError("weight_decay must be nonnegative");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (!(train_fraction > 0 && train_fraction <= 1)) throw ConfigError("train_fraction must lie in (0, 1]");
}

std::string RunConfig::to_json() const {
  json j;
  j["img_size"] = model.img_size;
  j["in_channels"] = model.in_channels;
  j["embed_dim"] = model.embed_dim;
  j["depths"] = model.depths;
  j["heads"] = model.heads;
  j["window_size"] = model.window_size;
  j["mlp_ratio"] = model.mlp_ratio;
  j["shift_size"] = model.shift_size ? json(*model.shift_size) : json(nullptr);
  j["num_classes"] = model.num_classes;
  j["drop_path_rate"] = model.drop_path_rate;

  j["mask_patch_size"] = mask.mask_patch_size;
  j["mask_ratio"] = mask.ratio;
  j["mask_seed"] = mask.seed;
  j["target_factor"] = target_factor;

  j["color_jitter"] = augment.color_jitter;
  j["motion_blur"] = augment.motion_blur;
  j["gaussian_noise"] = augment.gaussian_noise;
  j["hflip_scale"] = augment.hflip_scale;
  j["cutmix"] = augment.cutmix;
  j["mixup"] = augment.mixup;
  j["exposure"] = augment.exposure;
  j["saturation"] = augment.saturation;
  j["hue"] = augment.hue;
  j["blur_lengths"] = augment.blur_lengths;
  j["noise_sigma"] = augment.noise_sigma;
  j["scale"] = augment.scale;
  j["alpha"] = augment.alpha;
  j["multiplier"] = augment.multiplier;

  j["beta1"] = optim.beta1;
  j["beta2"] = optim.beta2;
  j["eps"] = optim.eps;
  j["weight_decay"] = optim.weight_decay;

  j["base_lr"] = base_lr;
  j["min_lr"] = min_lr < 0 ? json(nullptr) : json(min_lr);
  j["warmup_steps"] = warmup_steps;
  j["epochs"] = epochs;
  j["batch_size"] = batch_size;
  j["seed"] = seed;
  j["train_fraction"] = train_fraction;

  j["mask_in_finetune"] = mask_in_finetune;
  j["finetune_mask_patch_size"] = finetune_mask_patch_size;
  j["finetune_mask_ratio"] = finetune_mask_ratio;
  j["interpolate_bias"] = interpolate_bias;
  j["stop_at_full_train_accuracy"] = stop_at_full_train_accuracy;
  j["checkpoint_every"] = checkpoint_every;
  return j.dump(2);
}

RunConfig RunConfig::from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (auto& [key, value] : j.items())
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");

  RunConfig c;
  take_count(j, "img_size", c.model.img_size);
  take_count(j, "in_channels", c.model.in_channels);
  take_count(j, "embed_dim", c.model.embed_dim);
  take(j, "depths", c.model.depths);
  take(j, "heads", c.model.heads);
  take_count(j, "window_size", c.model.window_size);
  take(j, "mlp_ratio", c.model.mlp_ratio);
  if (j.contains("shift_size")) {
    if (j["shift_size"].is_null()) {
      c.model.shift_size.reset();
    } else {
      std::size_t s = 0;
      take_count(j, "shift_size", s);
      c.model.shift_size = s;
    }
  }
  take_count(j, "num_classes", c.model.num_classes);
  take(j, "drop_path_rate", c.model.drop_path_rate);

  take_count(j, "mask_patch_size", c.mask.mask_patch_size);
  take(j, "mask_ratio", c.mask.ratio);
  take(j, "mask_seed", c.mask.seed);
  take_count(j, "target_factor", c.target_factor);

  take(j, "color_jitter", c.augment.color_jitter);
  take(j, "motion_blur", c.augment.motion_blur);
  take(j, "gaussian_noise", c.augment.gaussian_noise);
  take(j, "hflip_scale", c.augment.hflip_scale);
  take(j, "cutmix", c.augment.cutmix);
  take(j, "mixup", c.augment.mixup);
  take(j, "exposure", c.augment.exposure);
  take(j, "saturation", c.augment.saturation);
  take(j, "hue", c.augment.hue);
  take(j, "blur_lengths", c.augment.blur_lengths);
  take(j, "noise_sigma", c.augment.noise_sigma);
  take(j, "scale", c.augment.scale);
  take(j, "alpha", c.augment.alpha);
  take_count(j, "multiplier", c.augment.multiplier);

  take(j, "beta1", c.optim.beta1);
  take(j, "beta2", c.optim.beta2);
  take(j, "eps", c.optim.eps);
  take(j, "weight_decay", c.optim.weight_decay);

  take(j, "base_lr", c.base_lr);
  if (j.contains("min_lr")) {
    if (j["min_lr"].is_null())
      c.min_lr = -1;
    else
      take(j, "min_lr", c.min_lr);
  }
  take_count(j, "warmup_steps", c.warmup_steps);
  take_count(j, "epochs", c.epochs);
  take_count(j, "batch_size", c.batch_size);
  take(j, "seed", c.seed);
  take(j, "train_fraction", c.train_fraction);

  take(j, "mask_in_finetune", c.mask_in_finetune);
  take_count(j, "finetune_mask_patch_size", c.finetune_mask_patch_size);
  take(j, "finetune_mask_ratio", c.finetune_mask_ratio);
  take(j, "interpolate_bias", c.interpolate_bias);
  take(j, "stop_at_full_train_accuracy", c.stop_at_full_train_accuracy);
  take_count(j, "checkpoint_every", c.checkpoint_every);

  c.validate();
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return from_json(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

RunConfig apply_overrides(const RunConfig& config, const std::vector<std::string>& overrides) {
  if (overrides.empty()) return config;
  json j = json::parse(config.to_json());
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + item + "' is not key=value");
    const std::string key = item.substr(0, eq), value = item.substr(eq + 1);
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    try {
      j[key] = json::parse(value);
    } catch (const json::parse_error&) {
      j[key] = value;
    }
  }
  return RunConfig::from_json(j.dump());
}

}  // namespace sldb
