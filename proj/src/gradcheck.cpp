#include "ghostprobe/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace ghostprobe {

GradcheckResult check_gradients(const std::string& name,
                                const std::function<Tensor64()>& loss_fn,
                                std::vector<Tensor64> inputs, const GradcheckOptions& options) {
  GradcheckResult result{name, 0.0, options.tolerance, 0, true};
  for (auto& in : inputs) {
    if (!in.requires_grad()) in.set_requires_grad(true);
    in.zero_grad();
  }
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  analytic.reserve(inputs.size());
  for (const auto& in : inputs) analytic.emplace_back(in.grad().begin(), in.grad().end());

  NoGradGuard no_grad;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto values = inputs[t].mutable_data();
    const std::size_t n = values.size();
    std::size_t stride = 1;
    if (options.max_elements_per_input > 0 && n > options.max_elements_per_input) {
      stride = (n + options.max_elements_per_input - 1) / options.max_elements_per_input;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double original = values[i];
      values[i] = original + options.step;
      const double plus = loss_fn().item();
      values[i] = original - options.step;
      const double minus = loss_fn().item();
      values[i] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double err = gradient_rel_error(analytic[t][i], numeric, options.magnitude_floor);
      result.max_rel_error = std::max(result.max_rel_error, err);
      ++result.checked;
    }
  }
  result.passed = result.max_rel_error < options.tolerance;
  return result;
}

}  // namespace ghostprobe
