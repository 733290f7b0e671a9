#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "ghostprobe/layers.hpp"

namespace ghostprobe {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment buffers, one pair per parameter, in parameter order.
template <typename T>
struct AdamState {
  AdamOptions options;
  std::int64_t step = 0;
  std::vector<std::vector<T>> first_moment;
  std::vector<std::vector<T>> second_moment;

  AdamState() = default;
  AdamState(const ParameterList<T>& params, AdamOptions opts) : options(opts) {
    for (const auto& p : params) {
      first_moment.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T{0});
      second_moment.emplace_back(static_cast<std::size_t>(p.tensor.numel()), T{0});
    }
  }
};

// One bias-corrected Adam update using the gradients stored on each parameter.
template <typename T>
void adam_step(ParameterList<T>& params, AdamState<T>& state) {
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("Adam state tracks " + std::to_string(state.first_moment.size()) +
                         " parameters, got " + std::to_string(params.size()));
  }
  if (!(state.options.lr >= 0.0)) throw DomainError("Adam learning rate must be non-negative");
  ++state.step;
  const auto& o = state.options;
  const double c1 = 1.0 - std::pow(o.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(o.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& tensor = params[i].tensor;
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != static_cast<std::size_t>(tensor.numel())) {
      throw DimensionError("Adam moment size mismatch for " + params[i].name);
    }
    auto values = tensor.mutable_data();
    const auto grads = tensor.grad();
    if (grads.size() != values.size()) continue;
    for (std::size_t j = 0; j < values.size(); ++j) {
      const double g = grads[j];
      const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * g;
      const double vj = o.beta2 * v[j] + (1.0 - o.beta2) * g * g;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = o.lr * (mj / c1) / (std::sqrt(vj / c2) + o.eps);
      values[j] = static_cast<T>(values[j] - update);
    }
  }
}

template <typename T>
void zero_grad(ParameterList<T>& params) {
  for (auto& p : params) p.tensor.zero_grad();
}

}  // namespace ghostprobe
