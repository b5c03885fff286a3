#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "sldb/numerics/tensor.hpp"

namespace sldb {

struct GradCheckResult {
  /// Max over inputs of ||tape - numeric||_inf / max(||tape||_inf, ||numeric||_inf).
  double max_rel_error = 0.0;
  /// Max over checked coordinates of |tape - numeric|.
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
};

/// Compares tape gradients of a scalar function against central differences
/// (f(x+h) - f(x-h)) / 2h. `f` re-evaluates the function from the current
/// values of `inputs`, which must require gradients. At most
/// `max_coords_per_input` coordinates of each input are probed (all when 0),
/// drawn from `sampler`.
GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<Tensor<double>>& inputs, double step = 1e-6,
                           std::size_t max_coords_per_input = 0, std::uint64_t sampler_seed = 7);

/// Single-input form: f maps x to a scalar.
GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           Tensor<double> x, double step = 1e-6);

}  // namespace sldb
