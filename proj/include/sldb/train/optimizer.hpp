#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sldb/swin/encoder.hpp"

namespace sldb {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.05;
};

/// Decoupled-decay Adam with bias correction. Moment buffers are keyed by
/// position in the parameter list handed to step().
template <typename T>
class AdamW {
 public:
  explicit AdamW(AdamWHyper hyper = {}) : hyper_(hyper) {}

  /// One update at learning rate `lr`. Parameters without a gradient are
  /// treated as having a zero gradient (decay still applies).
  void step(const ParameterList<T>& params, double lr);

  const AdamWHyper& hyper() const { return hyper_; }
  std::uint64_t steps() const { return steps_; }
  std::vector<std::vector<T>>& first_moments() { return m_; }
  std::vector<std::vector<T>>& second_moments() { return v_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void restore(std::uint64_t steps, std::vector<std::vector<T>> m, std::vector<std::vector<T>> v);

 private:
  AdamWHyper hyper_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

/// Linear warmup then cosine decay to min_lr.
struct CosineSchedule {
  double base_lr = 1e-3;
  double min_lr = 1e-5;
  std::size_t total_steps = 1;
  std::size_t warmup_steps = 0;

  void validate() const;
  double lr_at(std::size_t step) const;
};

}  // namespace sldb
