#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ghostprobe/tensor.hpp"

namespace ghostprobe {

struct GradcheckResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  bool passed = false;
};

struct GradcheckOptions {
  double step = 1e-5;
  double tolerance = 1e-6;
  // Gradients smaller than this are compared on an absolute scale.
  double magnitude_floor = 1e-3;
  // 0 checks every element; otherwise an evenly spaced subset per input.
  std::size_t max_elements_per_input = 0;
};

// Compares reverse-mode gradients of loss_fn with central finite differences.
// loss_fn must rebuild the scalar loss from the current values of `inputs`,
// which are perturbed in place and restored afterwards.
GradcheckResult check_gradients(const std::string& name,
                                const std::function<Tensor64()>& loss_fn,
                                std::vector<Tensor64> inputs, const GradcheckOptions& options);

// Relative error with the denominator floored, as used by check_gradients.
inline double gradient_rel_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

}  // namespace ghostprobe
