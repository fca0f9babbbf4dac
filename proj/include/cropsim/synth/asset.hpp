#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

namespace cropsim::synth {

enum class Species { sugar_beet, polygonum, cirsium, other };
enum class GrowthStage { seedling, well_grown };

std::string_view to_string(Species s);
std::string_view to_string(GrowthStage g);
std::optional<Species> parse_species(std::string_view s);
std::optional<GrowthStage> parse_growth_stage(std::string_view s);

// A crop sprite: 8-bit BGRA whose alpha channel is the transparency mask.
struct CropAsset {
  std::string id;
  Species species = Species::sugar_beet;
  GrowthStage growth_stage = GrowthStage::seedling;
  cv::Mat image;  // CV_8UC4
};

// Throws ValidationError unless the mask has an opaque pixel and the opaque
// extent touches all four image edges.
void validate_asset(const CropAsset& a);

// Crops an RGBA raster to the bounding extent of its opaque pixels.
cv::Mat crop_to_opaque(const cv::Mat& bgra);

// Deterministic procedurally drawn plant: a rosette of leaves whose shape,
// count, size and palette depend on species and growth stage.
CropAsset make_procedural_asset(Species species, GrowthStage stage,
                                std::uint64_t seed);

struct AssetSelector {
  std::vector<Species> species;      // empty = any
  std::vector<GrowthStage> stages;   // empty = any

  bool matches(const CropAsset& a) const;
};

// `variants` procedural assets for every species/stage accepted by `sel`.
std::vector<CropAsset> procedural_library(const AssetSelector& sel,
                                          int variants, std::uint64_t seed);

// Loads `<species>_<stage>_<anything>.png` RGBA files from `dir`, keeping
// those accepted by `sel`. Files are visited in lexicographic order.
std::vector<CropAsset> load_assets(const std::filesystem::path& dir,
                                   const AssetSelector& sel);

}  // namespace cropsim::synth
