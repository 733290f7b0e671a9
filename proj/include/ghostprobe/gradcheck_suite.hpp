#pragma once

#include <cstdint>
#include <vector>

#include "ghostprobe/gradcheck.hpp"
#include "ghostprobe/model.hpp"

namespace ghostprobe {

// Small end-to-end configuration for finite-difference checks: two-stage
// U-Net with base width 2 on 32x32 input, two set-abstraction levels over
// 64 points, attention width 16.
ModelConfig composed_check_config();

// One row per differentiable operation, each at `op_tolerance`.
std::vector<GradcheckResult> check_all_ops(std::uint64_t seed = 7, double op_tolerance = 1e-6);

// Whole model (double precision) on a random input of the configured size.
// max_elements_per_tensor = 0 checks every parameter element.
GradcheckResult check_composed_model(const ModelConfig& cfg, std::uint64_t seed = 7,
                                     double tolerance = 1e-4,
                                     std::size_t max_elements_per_tensor = 0);

}  // namespace ghostprobe
