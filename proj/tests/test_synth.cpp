#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include <fmt/format.h>
#include <opencv2/core.hpp>
#include <opencv2/imgproc.hpp>

#include "cropsim/synth/asset.hpp"
#include "cropsim/synth/background.hpp"
#include "cropsim/synth/generate.hpp"
#include "cropsim/synth/scene.hpp"
#include "cropsim/synth/style.hpp"
#include "oracles.hpp"
#include "temp_dir.hpp"

using namespace cropsim;
using namespace cropsim::synth;

namespace {

bool mats_equal(const cv::Mat& a, const cv::Mat& b) {
  if (a.size() != b.size() || a.type() != b.type()) return false;
  return cv::countNonZero(a.reshape(1) != b.reshape(1)) == 0;
}

// Tight extent of the nonzero pixels of an 8-bit layer.
PixelRect extent(const cv::Mat& layer) {
  const cv::Rect r = cv::boundingRect(layer);
  return {static_cast<double>(r.x), static_cast<double>(r.y), static_cast<double>(r.x + r.width),
          static_cast<double>(r.y + r.height)};
}

struct Fixture {
  cv::Mat background = procedural_background(1, SoilStyle::dry);
  std::vector<CropAsset> assets = procedural_library({}, 2, 5);
};

}  // namespace

TEST(Asset, ProceduralAssetsAreValidAndDeterministic) {
  for (Species s : {Species::sugar_beet, Species::polygonum, Species::cirsium, Species::other})
    for (GrowthStage g : {GrowthStage::seedling, GrowthStage::well_grown}) {
      const auto a = make_procedural_asset(s, g, 42);
      EXPECT_NO_THROW(validate_asset(a));
      EXPECT_EQ(a.image.type(), CV_8UC4);
      EXPECT_TRUE(mats_equal(a.image, make_procedural_asset(s, g, 42).image));
    }
}

TEST(Asset, ValidationRejectsLooseOrEmptyMasks) {
  CropAsset a;
  a.image = cv::Mat::zeros(10, 10, CV_8UC4);
  EXPECT_THROW(validate_asset(a), ValidationError);
  a.image.at<cv::Vec4b>(5, 5) = {0, 255, 0, 255};
  EXPECT_THROW(validate_asset(a), ValidationError);
  a.image = crop_to_opaque(a.image);
  EXPECT_NO_THROW(validate_asset(a));
  EXPECT_EQ(a.image.size(), cv::Size(1, 1));
}

TEST(Asset, SelectorFiltersLibrary) {
  AssetSelector sel{{Species::sugar_beet}, {GrowthStage::seedling}};
  const auto lib = procedural_library(sel, 3, 1);
  ASSERT_EQ(lib.size(), 3u);
  for (const auto& a : lib) {
    EXPECT_EQ(a.species, Species::sugar_beet);
    EXPECT_EQ(a.growth_stage, GrowthStage::seedling);
  }
  EXPECT_EQ(parse_species("cirsium"), Species::cirsium);
  EXPECT_FALSE(parse_species("maize").has_value());
}

TEST(Compose, SameSeedIsBitIdentical) {
  Fixture f;
  SynthConfig cfg;
  const auto a = compose_scene(f.background, f.assets, cfg, 7);
  const auto b = compose_scene(f.background, f.assets, cfg, 7);
  EXPECT_TRUE(mats_equal(a.image.pixels, b.image.pixels));
  EXPECT_EQ(a.image.boxes, b.image.boxes);
  const auto c = compose_scene(f.background, f.assets, cfg, 8);
  EXPECT_FALSE(mats_equal(a.image.pixels, c.image.pixels));
}

TEST(Compose, IdentityPlacementBoxEqualsAssetExtent) {
  Fixture f;
  SynthConfig cfg;
  cfg.objects_per_image = {1, 1};
  cfg.scale_jitter = {1, 1};
  cfg.rotation_deg = {0, 0};
  std::vector<CropAsset> one{f.assets[0]};
  const auto r = compose_scene(f.background, one, cfg, 7, true);
  ASSERT_EQ(r.image.boxes.size(), 1u);
  const auto rect = r.image.boxes[0].to_rect(kTrainDims);
  EXPECT_NEAR(rect.width(), one[0].image.cols, 1e-9);
  EXPECT_NEAR(rect.height(), one[0].image.rows, 1e-9);
}

TEST(Compose, ZeroOverlapBudgetGivesDisjointBoxes) {
  Fixture f;
  SynthConfig cfg;
  cfg.objects_per_image = {5, 5};
  cfg.overlap_max_iou = 0.0;
  cfg.scale_jitter = {0.5, 0.7};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = compose_scene(f.background, f.assets, cfg, seed);
    ASSERT_EQ(r.image.boxes.size(), 5u);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = i + 1; j < 5; ++j) EXPECT_EQ(oracle::iou(r.image.boxes[i], r.image.boxes[j]), 0.0);
  }
}

TEST(Compose, PairwiseIouWithinBudget) {
  Fixture f;
  SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto r = compose_scene(f.background, f.assets, cfg, seed);
    const auto& b = r.image.boxes;
    EXPECT_GE(b.size(), 3u);
    EXPECT_LE(b.size(), 6u);
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_TRUE(is_valid(b[i]));
      for (std::size_t j = i + 1; j < b.size(); ++j) EXPECT_LE(oracle::iou(b[i], b[j]), cfg.overlap_max_iou + 1e-12);
    }
  }
}

TEST(Compose, BoxesEqualRenderedAlphaExtent) {
  Fixture f;
  SynthConfig cfg;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = compose_scene(f.background, f.assets, cfg, seed, true);
    ASSERT_EQ(r.layers.size(), r.image.boxes.size());
    for (std::size_t i = 0; i < r.layers.size(); ++i) {
      const PixelRect want = extent(r.layers[i]);
      const PixelRect got = r.image.boxes[i].to_rect(kTrainDims);
      EXPECT_NEAR(got.x0, want.x0, 1e-9);
      EXPECT_NEAR(got.y0, want.y0, 1e-9);
      EXPECT_NEAR(got.x1, want.x1, 1e-9);
      EXPECT_NEAR(got.y1, want.y1, 1e-9);
    }
  }
}

TEST(Compose, PlacementFailureIsReported) {
  Fixture f;
  SynthConfig cfg;
  cfg.objects_per_image = {40, 40};
  cfg.overlap_max_iou = 0.0;
  cfg.scale_jitter = {1.2, 1.2};
  EXPECT_THROW(compose_scene(f.background, f.assets, cfg, 1), PlacementError);
}

TEST(Compose, RejectsBadInputs) {
  Fixture f;
  SynthConfig cfg;
  EXPECT_THROW(compose_scene(f.background, {}, cfg, 1), ValidationError);
  cfg.overlap_max_iou = 1.0;
  EXPECT_THROW(compose_scene(f.background, f.assets, cfg, 1), ValidationError);
  cfg = {};
  cfg.objects_per_image = {4, 2};
  EXPECT_THROW(cfg.validate(), ValidationError);
  cfg = {};
  EXPECT_THROW(compose_scene(cv::Mat::zeros(100, 100, CV_8UC3), f.assets, cfg, 1), ValidationError);
}

namespace {

SynthConfig row_config() {
  SynthConfig cfg = row_scene_defaults();
  cfg.assets.stages = {GrowthStage::seedling};
  return cfg;
}

}  // namespace

TEST(RowScene, CenteredVerticalRowHasIdenticalCx) {
  Fixture f;
  auto cfg = row_config();
  cfg.row_angle_deg = {0, 0};
  cfg.row_offset_px = {0, 0};
  const auto r = compose_row_scene(f.background, f.assets, cfg, 3);
  ASSERT_GE(r.image.boxes.size(), 3u);
  for (const auto& b : r.image.boxes) EXPECT_NEAR(b.cx, 0.5, 1e-12);
  ASSERT_TRUE(r.row.has_value());
  EXPECT_EQ(r.row->theta_deg, 0);
  EXPECT_EQ(r.row->x_at_mid, 112);
}

TEST(RowScene, TenDegreeRowRecoveredByLsq) {
  Fixture f;
  auto cfg = row_config();
  cfg.row_angle_deg = {10, 10};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = compose_row_scene(f.background, f.assets, cfg, seed);
    std::vector<std::pair<double, double>> xy;
    for (const auto& b : r.image.boxes) xy.emplace_back(b.cx * 224, b.cy * 224);
    const auto fit = oracle::lsq_line(xy, 224);
    EXPECT_NEAR(fit.theta_deg, 10, 1e-6);
    EXPECT_NEAR(fit.x_at_mid, r.row->x_at_mid, 1e-6);
  }
}

TEST(RowScene, JitterBoundsPerpendicularDistance) {
  Fixture f;
  auto cfg = row_config();
  cfg.objects_per_image = {4, 4};
  cfg.row_jitter_px = 2;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto r = compose_row_scene(f.background, f.assets, cfg, seed);
    ASSERT_EQ(r.image.boxes.size(), 4u);
    for (const auto& b : r.image.boxes) {
      const double d = rows::distance_to_line(*r.row, {b.cx * 224, b.cy * 224}, kTrainDims);
      EXPECT_LE(d, 2 + 1e-9);
    }
  }
}

TEST(RowScene, BoxesWithinOnePixelOfAlphaExtent) {
  Fixture f;
  auto cfg = row_config();
  const auto r = compose_row_scene(f.background, f.assets, cfg, 5, true);
  for (std::size_t i = 0; i < r.layers.size(); ++i) {
    const PixelRect want = extent(r.layers[i]);
    const PixelRect got = r.image.boxes[i].to_rect(kTrainDims);
    EXPECT_NEAR(got.x0, want.x0, 1.0);
    EXPECT_NEAR(got.x1, want.x1, 1.0);
    EXPECT_NEAR(got.y0, want.y0, 1.0);
    EXPECT_NEAR(got.y1, want.y1, 1.0);
  }
}

TEST(RowScene, DefaultsPlaceFullRowsAcrossAllSpecies) {
  const SynthConfig cfg = row_scene_defaults();
  const auto assets = procedural_library(cfg.assets, cfg.asset_variants, 1);
  const cv::Mat bg(224, 224, CV_8UC3, cv::Scalar(60, 90, 120));
  for (std::uint64_t seed = 0; seed < 400; ++seed) {
    const auto r = compose_row_scene(bg, assets, cfg, seed);
    ASSERT_GE(r.image.boxes.size(), 3u) << seed;
    for (std::size_t i = 0; i < r.image.boxes.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        EXPECT_LE(oracle::iou(r.image.boxes[i], r.image.boxes[j]), cfg.overlap_max_iou + 1e-9) << seed;
  }
}

TEST(Style, PseudoRealKeepsGeometryAndIsDeterministic) {
  Fixture f;
  const auto r = compose_scene(f.background, f.assets, SynthConfig{}, 1);
  const cv::Mat a = pseudo_real_style(r.image.pixels, 9), b = pseudo_real_style(r.image.pixels, 9);
  EXPECT_TRUE(mats_equal(a, b));
  EXPECT_EQ(a.size(), r.image.pixels.size());
  EXPECT_FALSE(mats_equal(a, r.image.pixels));
}

TEST(Generate, WritesYoloLayoutAndIsReproducible) {
  test_util::TempDir dir;
  SynthConfig cfg;
  cfg.n_images = 6;
  cfg.master_seed = 3;
  const auto a = generate_dataset(cfg, dir.path() / "a");
  const auto b = generate_dataset(cfg, dir.path() / "b");
  ASSERT_EQ(a.entries.size(), 6u);
  EXPECT_EQ(a.content_hash, b.content_hash);
  for (const auto& e : a.entries) {
    EXPECT_TRUE(std::filesystem::exists(a.image_path(e)));
    EXPECT_TRUE(std::filesystem::exists(a.label_path(e)));
    EXPECT_EQ(e.seed, image_seed(cfg, static_cast<std::size_t>(&e - a.entries.data())));
  }
  EXPECT_TRUE(std::filesystem::exists(dir.path() / "a" / "manifest.json"));
  cfg.master_seed = 4;
  EXPECT_NE(generate_dataset(cfg, dir.path() / "c").content_hash, a.content_hash);
}

TEST(Generate, AblationSettingsAreExpressible) {
  test_util::TempDir dir;
  // single/multi background x single/multi object
  for (int bgs : {1, 8})
    for (IntRange objs : {IntRange{1, 1}, IntRange{3, 6}}) {
      SynthConfig cfg;
      cfg.n_images = 3;
      cfg.procedural_backgrounds = bgs;
      cfg.objects_per_image = objs;
      const auto m = generate_dataset(cfg, dir.path() / fmt::format("b{}_o{}", bgs, objs.hi));
      EXPECT_EQ(m.entries.size(), 3u);
    }
  SynthConfig beet;
  beet.n_images = 2;
  beet.assets.species = {Species::sugar_beet};
  beet.assets.stages = {GrowthStage::seedling};
  EXPECT_EQ(generate_dataset(beet, dir.path() / "beet").entries.size(), 2u);
}
