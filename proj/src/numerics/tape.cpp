#include "sldb/numerics/tape.hpp"

#include <stdexcept>

namespace sldb {

namespace {
template <typename T>
Tape<T>*& active_slot() {
  thread_local Tape<T>* slot = nullptr;
  return slot;
}
}  // namespace

template <typename T>
Tape<T>::Tape() : previous_(active_slot<T>()) {
  active_slot<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
  active_slot<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::active() {
  return active_slot<T>();
}

template <typename T>
void Tape<T>::record(std::function<void()> backward_rule) {
  if (consumed_) throw std::logic_error("tape: recording after backward");
  rules_.push_back(std::move(backward_rule));
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw std::logic_error("tape: backward already ran on this recording");
  if (loss.numel() != 1) {
    throw DimensionError("tape: backward needs a scalar loss, got " + shape_str(loss.shape()));
  }
  consumed_ = true;
  if (!loss.requires_grad()) return;
  autograd::grad_buffer(*loss.node())[0] += T(1);
  for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)();
  rules_.clear();
}

template class Tape<float>;
template class Tape<double>;

}  // namespace sldb
