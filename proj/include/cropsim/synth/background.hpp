#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

namespace cropsim::synth {

enum class SoilStyle {
  dry,  // light sandy soil, the simulation look
  wet,  // darker loam with crop residue, used for the pseudo-real domain
};

// Deterministic soil texture (8-bit BGR) of the given size.
cv::Mat procedural_background(std::uint64_t seed, SoilStyle style,
                              int size = 256);

// Every .png/.jpg/.jpeg under `dir` in lexicographic order, as 8-bit BGR.
std::vector<cv::Mat> load_backgrounds(const std::filesystem::path& dir);

}  // namespace cropsim::synth
