#pragma once

#include <cstdint>

#include <opencv2/core.hpp>

namespace cropsim::synth {

// Photometric and texture perturbation that turns a composited scene into a
// "pseudo-real" camera frame: white-balance and saturation drift, gamma,
// uneven illumination with vignetting, lens blur and sensor noise. Geometry
// is untouched, so annotations stay valid. Deterministic in `seed`.
cv::Mat pseudo_real_style(const cv::Mat& bgr, std::uint64_t seed);

}  // namespace cropsim::synth
