#include "sldb/train/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace sldb {

template <typename T>
void AdamW<T>::step(const ParameterList<T>& params, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.emplace_back(p.tensor.numel(), T(0));
      v_.emplace_back(p.tensor.numel(), T(0));
    }
  }
  if (m_.size() != params.size()) {
    throw std::invalid_argument("adamw: parameter list changed size between steps");
  }
  ++steps_;
  const double b1 = hyper_.beta1, b2 = hyper_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor<T> p = params[k].tensor;
    auto& m = m_[k];
    auto& v = v_[k];
    if (m.size() != p.numel()) {
      throw std::invalid_argument("adamw: moment size mismatch for " + params[k].name);
    }
    const bool has_grad = p.has_grad();
    T* theta = p.ptr();
    for (std::size_t i = 0; i < m.size(); ++i) {
      const double g = has_grad ? static_cast<double>(p.grad()[i]) : 0.0;
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update = (mi / c1) / (std::sqrt(vi / c2) + hyper_.eps) +
                            hyper_.weight_decay * static_cast<double>(theta[i]);
      theta[i] = static_cast<T>(static_cast<double>(theta[i]) - lr * update);
    }
  }
}

template <typename T>
void AdamW<T>::restore(std::uint64_t steps, std::vector<std::vector<T>> m,
                       std::vector<std::vector<T>> v) {
  if (m.size() != v.size()) throw std::invalid_argument("adamw: moment lists differ in length");
  steps_ = steps;
  m_ = std::move(m);
  v_ = std::move(v);
}

template class AdamW<float>;
template class AdamW<double>;

void CosineSchedule::validate() const {
  if (total_steps == 0) throw std::invalid_argument("schedule: total_steps must be positive");
  if (warmup_steps >= total_steps) {
    throw std::invalid_argument("schedule: warmup_steps must be below total_steps");
  }
  if (min_lr > base_lr || min_lr < 0.0) {
    throw std::invalid_argument("schedule: need 0 <= min_lr <= base_lr");
  }
}

double CosineSchedule::lr_at(std::size_t step) const {
  if (step > total_steps) step = total_steps;
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  }
  const double progress = static_cast<double>(step - warmup_steps) /
                          static_cast<double>(total_steps - warmup_steps);
  return min_lr + (base_lr - min_lr) * 0.5 * (1.0 + std::cos(M_PI * progress));
}

}  // namespace sldb
