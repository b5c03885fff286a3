#include "sldb/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sldb/numerics/rng.hpp"
#include "sldb/numerics/tape.hpp"

namespace sldb {

GradCheckResult grad_check(const std::function<Tensor<double>()>& f,
                           const std::vector<Tensor<double>>& inputs, double step,
                           std::size_t max_coords_per_input, std::uint64_t sampler_seed) {
  std::vector<std::vector<double>> analytic;
  {
    for (const auto& x : inputs) {
      if (!x.requires_grad()) throw std::invalid_argument("grad_check: input without gradient");
      x.node()->grad.clear();
    }
    Tape<double> tape;
    Tensor<double> y = f();
    tape.backward(y);
    for (const auto& x : inputs) {
      analytic.emplace_back(x.has_grad() ? std::vector<double>(x.grad().begin(), x.grad().end())
                                         : std::vector<double>(x.numel(), 0.0));
    }
  }

  GradCheckResult result;
  Rng sampler(sampler_seed);
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    Tensor<double> x = inputs[t];
    std::vector<std::size_t> coords(x.numel());
    std::iota(coords.begin(), coords.end(), 0);
    if (max_coords_per_input && coords.size() > max_coords_per_input) {
      sampler.shuffle(coords.begin(), coords.end());
      coords.resize(max_coords_per_input);
    }
    double diff_max = 0.0, ana_max = 0.0, num_max = 0.0;
    for (std::size_t i : coords) {
      const double saved = x[i];
      x[i] = saved + step;
      const double up = f().item();
      x[i] = saved - step;
      const double down = f().item();
      x[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t][i];
      diff_max = std::max(diff_max, std::abs(a - numeric));
      ana_max = std::max(ana_max, std::abs(a));
      num_max = std::max(num_max, std::abs(numeric));
      ++result.coordinates;
    }
    const double denom = std::max(ana_max, num_max);
    const double rel = denom > 0.0 ? diff_max / denom : 0.0;
    result.max_rel_error = std::max(result.max_rel_error, rel);
    result.max_abs_error = std::max(result.max_abs_error, diff_max);
  }
  return result;
}

GradCheckResult grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                           Tensor<double> x, double step) {
  x.set_requires_grad(true);
  return grad_check([&] { return f(x); }, {x}, step);
}

}  // namespace sldb
