#pragma once

#include <filesystem>
#include <vector>

#include <opencv2/core.hpp>

#include "cropsim/data/dataset.hpp"
#include "cropsim/synth/asset.hpp"
#include "cropsim/synth/scene.hpp"

namespace cropsim::synth {

// Asset pool for a config: sprites from cfg.assets_dir, or the procedural
// library, filtered by cfg.assets.
std::vector<CropAsset> build_asset_pool(const SynthConfig& cfg);

// Background pool for a config: images from cfg.backgrounds, or procedural
// soil (dry for sim, wet for real).
std::vector<cv::Mat> build_background_pool(const SynthConfig& cfg);

// Seed of image `index`; independent of generation order.
std::uint64_t image_seed(const SynthConfig& cfg, std::size_t index);

// Renders image `index` of the dataset described by cfg.
ComposeResult render_dataset_image(const SynthConfig& cfg,
                                   const std::vector<CropAsset>& assets,
                                   const std::vector<cv::Mat>& backgrounds,
                                   std::size_t index);

// Writes a YOLO-format dataset plus manifest.json into out_dir.
data::DatasetManifest generate_dataset(const SynthConfig& cfg,
                                       const std::filesystem::path& out_dir);

}  // namespace cropsim::synth
