#include "cropsim/synth/generate.hpp"

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>

#include "cropsim/seed.hpp"
#include "cropsim/synth/background.hpp"
#include "cropsim/synth/style.hpp"

namespace cropsim::synth {
namespace fs = std::filesystem;

namespace {
constexpr std::uint64_t kImageSalt = 0x1a2b;
constexpr std::uint64_t kBackgroundSalt = 0x3c4d;
constexpr std::uint64_t kAssetSalt = 0x5e6f;
constexpr std::uint64_t kStyleSalt = 0x7081;
}  // namespace

std::vector<CropAsset> build_asset_pool(const SynthConfig& cfg) {
  auto pool = cfg.assets_dir.empty()
                  ? procedural_library(cfg.assets, cfg.asset_variants,
                                       derive_seed(cfg.master_seed, 0, kAssetSalt))
                  : load_assets(cfg.assets_dir, cfg.assets);
  if (pool.empty()) throw ValidationError("synth: asset selection matches no assets");
  return pool;
}

std::vector<cv::Mat> build_background_pool(const SynthConfig& cfg) {
  if (!cfg.backgrounds.empty()) return load_backgrounds(cfg.backgrounds);
  std::vector<cv::Mat> pool;
  const auto style = cfg.domain == Domain::sim ? SoilStyle::dry : SoilStyle::wet;
  for (int b = 0; b < cfg.procedural_backgrounds; ++b)
    pool.push_back(procedural_background(
        derive_seed(cfg.master_seed, static_cast<std::uint64_t>(b),
                    kBackgroundSalt + static_cast<std::uint64_t>(cfg.domain)),
        style));
  return pool;
}

std::uint64_t image_seed(const SynthConfig& cfg, std::size_t index) {
  return derive_seed(cfg.master_seed, index, kImageSalt + static_cast<std::uint64_t>(cfg.domain));
}

ComposeResult render_dataset_image(const SynthConfig& cfg,
                                   const std::vector<CropAsset>& assets,
                                   const std::vector<cv::Mat>& backgrounds,
                                   std::size_t index) {
  const std::uint64_t seed = image_seed(cfg, index);
  const cv::Mat& bg = backgrounds[mix64(seed) % backgrounds.size()];
  ComposeResult r = cfg.row_mode ? compose_row_scene(bg, assets, cfg, seed)
                                 : compose_scene(bg, assets, cfg, seed);
  r.image.domain = cfg.domain;
  if (cfg.domain == Domain::real)
    r.image.pixels = pseudo_real_style(r.image.pixels, derive_seed(seed, 0, kStyleSalt));
  return r;
}

data::DatasetManifest generate_dataset(const SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto assets = build_asset_pool(cfg);
  const auto backgrounds = build_background_pool(cfg);

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  fs::create_directories(out_dir / "labels", ec);
  if (ec) throw IoError(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));

  data::DatasetManifest m;
  m.root = out_dir;
  const std::vector<int> png_params{cv::IMWRITE_PNG_COMPRESSION, 3};
  for (int i = 0; i < cfg.n_images; ++i) {
    ComposeResult r;
    try {
      r = render_dataset_image(cfg, assets, backgrounds, static_cast<std::size_t>(i));
    } catch (const PlacementError& e) {
      throw PlacementError(fmt::format("image {}: {}", i, e.what()));
    }
    data::ManifestEntry e;
    e.stem = fmt::format("{}_{:06d}", to_string(cfg.domain), i);
    e.seed = r.image.seed;
    e.domain = cfg.domain;
    if (r.row) {
      const auto sig = rows::offsets(*r.row, kTrainDims);
      e.row = data::RowTruth{sig.theta_deg, sig.L_px};
    }
    if (!cv::imwrite(m.image_path(e).string(), r.image.pixels, png_params))
      throw IoError(fmt::format("cannot write {}", m.image_path(e).string()));
    data::write_label_file(m.label_path(e), r.image.boxes);
    m.entries.push_back(std::move(e));
  }
  m.content_hash = data::compute_content_hash(m);
  data::save_manifest(m);
  return m;
}

}  // namespace cropsim::synth
