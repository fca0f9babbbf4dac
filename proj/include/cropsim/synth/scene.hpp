#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <opencv2/core.hpp>

#include "cropsim/error.hpp"
#include "cropsim/geometry.hpp"
#include "cropsim/rows/rowgeom.hpp"
#include "cropsim/synth/asset.hpp"

namespace cropsim::synth {

enum class Domain { sim, real };

std::string_view to_string(Domain d);
std::optional<Domain> parse_domain(std::string_view s);

struct Range {
  double lo = 0, hi = 0;
};

struct IntRange {
  int lo = 0, hi = 0;
};

struct SynthConfig {
  std::string backgrounds;           // image directory; empty = procedural soil
  int procedural_backgrounds = 20;   // pool size when procedural
  std::string assets_dir;            // RGBA sprite directory; empty = procedural
  AssetSelector assets;
  int asset_variants = 6;            // procedural sprites per species/stage
  int n_images = 100;
  IntRange objects_per_image{3, 6};
  Range scale_jitter{0.8, 1.2};
  Range rotation_deg{0, 360};
  double overlap_max_iou = 0.1;
  int placement_attempts = 100;      // per object
  bool row_mode = false;
  Range row_angle_deg{-15, 15};
  Range row_offset_px{-30, 30};      // x_at_mid - W/2
  double row_jitter_px = 0;          // max perpendicular distance from the row
  Domain domain = Domain::sim;       // real = pseudo-real styling
  std::uint64_t master_seed = 0;

  void validate() const;
};

// Defaults with row_mode on and object count and scale reduced so a full row
// fits in the frame.
SynthConfig row_scene_defaults();

// Composited scene. pixels is 8-bit BGR, kTrainDims sized.
struct AnnotatedImage {
  cv::Mat pixels;
  std::vector<BBox> boxes;
  Domain domain = Domain::sim;
  std::uint64_t seed = 0;
};

struct ComposeResult {
  AnnotatedImage image;
  // One full-frame 8-bit alpha layer per placed object, in box order. Only
  // filled when requested.
  std::vector<cv::Mat> layers;
  std::optional<rows::RowLine> row;
};

class PlacementError : public Error {
 public:
  using Error::Error;
};

// Scaled, rotated sprite cropped to its opaque extent. color is
// premultiplied (CV_32FC3, 0..255); alpha is CV_32F in [0,1], quantized to
// 8-bit steps.
struct Sprite {
  cv::Mat color;
  cv::Mat alpha;
};

Sprite render_sprite(const CropAsset& asset, double scale, double rotation_deg);

ComposeResult compose_scene(const cv::Mat& background,
                            const std::vector<CropAsset>& assets,
                            const SynthConfig& cfg, std::uint64_t seed,
                            bool keep_layers = false);

// Crop centers lie on a random line (within row_jitter_px perpendicular
// distance); the returned row is that generating line. Placement uses
// sub-pixel positions so centers can sit exactly on the line.
ComposeResult compose_row_scene(const cv::Mat& background,
                                const std::vector<CropAsset>& assets,
                                const SynthConfig& cfg, std::uint64_t seed,
                                bool keep_layers = false);

}  // namespace cropsim::synth
