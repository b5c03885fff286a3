#include "sldb/mim/mim.hpp"

#include <cmath>
#include <numeric>

#include "sldb/numerics/layout.hpp"
#include "sldb/numerics/ops.hpp"
#include "sldb/numerics/tape.hpp"

namespace sldb {

void MaskSpec::validate() const {
  if (mask_patch_size == 0 || mask_patch_size % kPatchSize != 0) {
    throw std::invalid_argument("mask_patch_size " + std::to_string(mask_patch_size) +
                                " must be a positive multiple of 4");
  }
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("mask_ratio must lie in [0, 1]");
  }
}

MaskMap::MaskMap(std::size_t img_size, std::size_t unit_size, std::vector<std::uint8_t> units)
    : img_size_(img_size),
      unit_size_(unit_size),
      per_side_((img_size + unit_size - 1) / unit_size),
      units_(std::move(units)) {
  if (units_.size() != per_side_ * per_side_) {
    throw DimensionError("mask map: " + std::to_string(units_.size()) + " units for a " +
                         std::to_string(per_side_) + "x" + std::to_string(per_side_) + " grid");
  }
}

std::size_t MaskMap::masked_units() const {
  return static_cast<std::size_t>(std::count(units_.begin(), units_.end(), std::uint8_t{1}));
}

std::vector<std::uint8_t> MaskMap::token_mask(std::size_t stride) const {
  if (stride == 0 || unit_size_ % stride != 0 || img_size_ % stride != 0) {
    throw DimensionError("mask map: stride " + std::to_string(stride) +
                         " does not tile units of " + std::to_string(unit_size_));
  }
  const std::size_t side = img_size_ / stride;
  std::vector<std::uint8_t> out(side * side);
  for (std::size_t y = 0; y < side; ++y)
    for (std::size_t x = 0; x < side; ++x) {
      out[y * side + x] = units_[(y * stride / unit_size_) * per_side_ + x * stride / unit_size_];
    }
  return out;
}

std::vector<std::uint8_t> MaskMap::pixel_mask() const { return token_mask(1); }

std::size_t MaskMap::masked_pixels() const {
  std::size_t n = 0;
  for (std::size_t r = 0; r < per_side_; ++r) {
    const std::size_t h = std::min(unit_size_, img_size_ - r * unit_size_);
    for (std::size_t c = 0; c < per_side_; ++c) {
      if (unit(r, c)) n += h * std::min(unit_size_, img_size_ - c * unit_size_);
    }
  }
  return n;
}

MaskMap generate_mask(const MaskSpec& spec, std::size_t img_size, Rng& rng) {
  spec.validate();
  if (img_size < spec.mask_patch_size) {
    throw std::invalid_argument("mask: image " + std::to_string(img_size) +
                                " is smaller than the mask patch " +
                                std::to_string(spec.mask_patch_size));
  }
  const std::size_t side = (img_size + spec.mask_patch_size - 1) / spec.mask_patch_size;
  const std::size_t n = side * side;
  const auto count = static_cast<std::size_t>(std::llround(spec.ratio * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint8_t> units(n, 0);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.uniform_int(n - i));
    std::swap(order[i], order[j]);
    units[order[i]] = 1;
  }
  return MaskMap(img_size, spec.mask_patch_size, std::move(units));
}

MaskMap generate_mask(const MaskSpec& spec, std::size_t img_size) {
  Rng rng(spec.seed);
  return generate_mask(spec, img_size, rng);
}

namespace {

const MaskMap& mask_for(const std::vector<MaskMap>& masks, std::size_t b) {
  return masks.size() == 1 ? masks[0] : masks[b];
}

void check_mask_batch(const std::vector<MaskMap>& masks, std::size_t batch, std::size_t pixels,
                      const char* op) {
  if (masks.size() != 1 && masks.size() != batch) {
    throw DimensionError(std::string(op) + ": " + std::to_string(masks.size()) +
                         " masks for a batch of " + std::to_string(batch));
  }
  for (const auto& m : masks) {
    if (m.img_size() != pixels) {
      throw DimensionError(std::string(op) + ": mask covers " + std::to_string(m.img_size()) +
                           " pixels per side, image has " + std::to_string(pixels));
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& tokens, const std::vector<MaskMap>& masks,
                     const Tensor<T>& mask_token) {
  if (tokens.rank() != 4 || tokens.dim(1) != tokens.dim(2)) {
    throw DimensionError("apply_mask: expected square [B,h,w,C] tokens, got " +
                         shape_str(tokens.shape()));
  }
  const std::size_t batch = tokens.dim(0), side = tokens.dim(1), c = tokens.dim(3);
  if (mask_token.numel() != c) {
    throw DimensionError("apply_mask: mask token " + shape_str(mask_token.shape()) + " for " +
                         std::to_string(c) + " channels");
  }
  check_mask_batch(masks, batch, side * kPatchSize, "apply_mask");

  // Flags per (sample, position), shared across the batch when one map is given.
  std::vector<std::uint8_t> flags;
  flags.reserve(batch * side * side);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto t = mask_for(masks, b).token_mask(kPatchSize);
    flags.insert(flags.end(), t.begin(), t.end());
  }

  Tensor<T> out = tokens.detach();
  for (std::size_t p = 0; p < flags.size(); ++p) {
    if (flags[p]) std::copy_n(mask_token.ptr(), c, out.ptr() + p * c);
  }
  if (autograd::needs_grad(tokens, mask_token)) {
    auto tn = tokens.node(), mn = mask_token.node(), on = out.node();
    autograd::record(out, [tn, mn, on, flags = std::move(flags), c] {
      if (on->grad.empty()) return;
      const auto& g = on->grad;
      if (tn->requires_grad) {
        auto& gt = autograd::grad_buffer(*tn);
        for (std::size_t p = 0; p < flags.size(); ++p) {
          if (flags[p]) continue;
          for (std::size_t k = 0; k < c; ++k) gt[p * c + k] += g[p * c + k];
        }
      }
      if (mn->requires_grad) {
        auto& gm = autograd::grad_buffer(*mn);
        for (std::size_t p = 0; p < flags.size(); ++p) {
          if (!flags[p]) continue;
          for (std::size_t k = 0; k < c; ++k) gm[k] += g[p * c + k];
        }
      }
    });
  }
  return out;
}

std::size_t stage_for_factor(std::size_t factor) {
  switch (factor) {
    case 4: return 0;
    case 8: return 1;
    case 16: return 2;
    case 32: return 3;
    default:
      throw std::invalid_argument("target_factor " + std::to_string(factor) +
                                  " has no encoder stage; use 4, 8, 16 or 32");
  }
}

template <typename T>
PredictionHead<T> make_prediction_head(const SwinConfig& config, std::size_t factor, Rng& rng) {
  PredictionHead<T> head;
  head.factor = factor;
  head.fc = make_linear<T>(config.stage_channels(stage_for_factor(factor)),
                           factor * factor * config.in_channels, true, rng);
  return head;
}

template <typename T>
Tensor<T> predict_pixels(const EncoderOutput<T>& features, const PredictionHead<T>& head) {
  const std::size_t stage = stage_for_factor(head.factor);
  const Tensor<T>& f = stage == kNumStages - 1 ? features.features : features.stages.at(stage);
  auto blocks = linear(f, head.fc.weight, head.fc.bias);
  const std::size_t batch = blocks.dim(0), h = blocks.dim(1), w = blocks.dim(2);
  const std::size_t r = head.factor, ch = blocks.dim(3) / (r * r);
  auto plan = std::make_shared<GatherIndex>();
  plan->out_shape = {batch, h * r, w * r, ch};
  plan->src_numel = blocks.numel();
  plan->src.resize(blocks.numel());
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < h * r; ++y)
      for (std::size_t x = 0; x < w * r; ++x)
        for (std::size_t c = 0; c < ch; ++c) {
          plan->src[o++] = static_cast<std::int64_t>(
              ((b * h + y / r) * w + x / r) * r * r * ch + ((y % r) * r + x % r) * ch + c);
        }
  return gather(blocks, plan);
}

template <typename T>
Tensor<T> masked_l1_loss(const Tensor<T>& pred, const Tensor<T>& target,
                         const std::vector<MaskMap>& masks) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("masked_l1_loss: prediction " + shape_str(pred.shape()) +
                         " vs target " + shape_str(target.shape()));
  }
  if (pred.rank() != 4 || pred.dim(1) != pred.dim(2)) {
    throw DimensionError("masked_l1_loss: expected square [B,H,W,C] images, got " +
                         shape_str(pred.shape()));
  }
  const std::size_t batch = pred.dim(0), side = pred.dim(1), c = pred.dim(3);
  check_mask_batch(masks, batch, side, "masked_l1_loss");

  std::vector<std::uint8_t> flags;
  flags.reserve(batch * side * side);
  std::size_t count = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const auto px = mask_for(masks, b).pixel_mask();
    flags.insert(flags.end(), px.begin(), px.end());
    count += mask_for(masks, b).masked_pixels() * c;
  }
  if (count == 0) throw EmptyMaskError("masked_l1_loss: the mask selects no pixels");

  double total = 0.0;
  for (std::size_t p = 0; p < flags.size(); ++p) {
    if (!flags[p]) continue;
    for (std::size_t k = 0; k < c; ++k) {
      total += std::abs(static_cast<double>(pred[p * c + k]) - static_cast<double>(target[p * c + k]));
    }
  }
  Tensor<T> out = Tensor<T>::scalar(static_cast<T>(total / static_cast<double>(count)));
  if (autograd::needs_grad(pred, target)) {
    auto pn = pred.node(), tn = target.node(), on = out.node();
    const T inv = static_cast<T>(1.0 / static_cast<double>(count));
    autograd::record(out, [pn, tn, on, flags = std::move(flags), c, inv] {
      if (on->grad.empty()) return;
      const T g = on->grad[0] * inv;
      std::vector<T>* gp = pn->requires_grad ? &autograd::grad_buffer(*pn) : nullptr;
      std::vector<T>* gt = tn->requires_grad ? &autograd::grad_buffer(*tn) : nullptr;
      for (std::size_t p = 0; p < flags.size(); ++p) {
        if (!flags[p]) continue;
        for (std::size_t k = 0; k < c; ++k) {
          const std::size_t i = p * c + k;
          const T d = pn->data[i] - tn->data[i];
          const T s = d > T(0) ? g : (d < T(0) ? -g : T(0));
          if (gp) (*gp)[i] += s;
          if (gt) (*gt)[i] -= s;
        }
      }
    });
  }
  return out;
}

template <typename T>
MimModel<T>::MimModel(const SwinConfig& config, std::size_t target_factor, Rng& init)
    : encoder_(config, init) {
  mask_token_ = trunc_normal<T>({config.embed_dim}, init);
  head_ = make_prediction_head<T>(config, target_factor, init);
}

template <typename T>
Tensor<T> MimModel<T>::reconstruct(const Tensor<T>& images, const std::vector<MaskMap>& masks,
                                   const ForwardOptions& options) const {
  auto tokens = apply_mask(encoder_.embed(images), masks, mask_token_);
  return predict_pixels(encoder_.forward_tokens(tokens, options), head_);
}

template <typename T>
Tensor<T> MimModel<T>::loss(const Tensor<T>& images, const std::vector<MaskMap>& masks,
                            const ForwardOptions& options) const {
  return masked_l1_loss(reconstruct(images, masks, options), images, masks);
}

template <typename T>
ParameterList<T> MimModel<T>::parameters() const {
  auto p = encoder_.parameters();
  p.push_back({"mask_token", mask_token_});
  p.push_back({"decoder.weight", head_.fc.weight});
  p.push_back({"decoder.bias", head_.fc.bias});
  return p;
}

template <typename T>
double pretrain_step(MimModel<T>& model, const Tensor<T>& images, const MaskSpec& spec, Rng& rng,
                     AdamW<T>& optimizer, double lr) {
  if (images.rank() != 4) {
    throw DimensionError("pretrain_step: expected [B,H,W,3], got " + shape_str(images.shape()));
  }
  std::vector<MaskMap> masks;
  for (std::size_t b = 0; b < images.dim(0); ++b) {
    masks.push_back(generate_mask(spec, images.dim(1), rng));
  }
  return pretrain_step(model, images, masks, rng, optimizer, lr);
}

template <typename T>
double pretrain_step(MimModel<T>& model, const Tensor<T>& images,
                     const std::vector<MaskMap>& masks, Rng& rng, AdamW<T>& optimizer, double lr) {
  const auto params = model.parameters();
  for (const auto& p : params) p.tensor.clear_grad();
  double value;
  {
    Tape<T> tape;
    auto loss = model.loss(images, masks, {true, &rng});
    value = static_cast<double>(loss.item());
    tape.backward(loss);
  }
  optimizer.step(params, lr);
  return value;
}

#define SLDB_INSTANTIATE_MIM(T)                                                                 \
  template Tensor<T> apply_mask(const Tensor<T>&, const std::vector<MaskMap>&, const Tensor<T>&); \
  template PredictionHead<T> make_prediction_head(const SwinConfig&, std::size_t, Rng&);        \
  template Tensor<T> predict_pixels(const EncoderOutput<T>&, const PredictionHead<T>&);         \
  template Tensor<T> masked_l1_loss(const Tensor<T>&, const Tensor<T>&,                         \
                                    const std::vector<MaskMap>&);                               \
  template class MimModel<T>;                                                                   \
  template double pretrain_step(MimModel<T>&, const Tensor<T>&, const MaskSpec&, Rng&,          \
                                AdamW<T>&, double);                                             \
  template double pretrain_step(MimModel<T>&, const Tensor<T>&, const std::vector<MaskMap>&,    \
                                Rng&, AdamW<T>&, double);

SLDB_INSTANTIATE_MIM(float)
SLDB_INSTANTIATE_MIM(double)

}  // namespace sldb
