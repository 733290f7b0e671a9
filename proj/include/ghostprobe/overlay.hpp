#pragma once

#include <span>
#include <vector>

#include "ghostprobe/detection.hpp"
#include "ghostprobe/image_io.hpp"

namespace ghostprobe {

// RGB frame with the probability map blended in as heat (alpha = p / 2),
// ground-truth boxes outlined in red and detections in green. prob is
// prob_h x prob_w and is stretched to the frame with nearest sampling.
RgbImage render_overlay(const DepthFrame& frame, std::span<const float> prob, int prob_w, int prob_h,
                        const std::vector<Box>& truth, const std::vector<Detection>& detections);

}  // namespace ghostprobe
