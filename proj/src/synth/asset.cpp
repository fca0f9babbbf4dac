#include "cropsim/synth/asset.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cropsim/error.hpp"
#include "cropsim/seed.hpp"

namespace cropsim::synth {
namespace {

constexpr int kSupersample = 4;

struct LeafStyle {
  int min_leaves, max_leaves;
  double length_px;     // leaf length at output resolution
  double width_ratio;   // max half-width / length
  double taper;         // exponent of the width profile
  double lobes;         // 0 for entire leaves
  double lobe_depth;
  cv::Scalar color;     // BGR
  cv::Scalar vein;
};

LeafStyle style_for(Species s, GrowthStage g) {
  const bool young = g == GrowthStage::seedling;
  switch (s) {
    case Species::sugar_beet:
      return {young ? 2 : 5, young ? 3 : 8, young ? 13.0 : 30.0, 0.34, 0.8, 0, 0,
              {45, 135, 55}, {120, 190, 150}};
    case Species::polygonum:
      return {young ? 2 : 6, young ? 4 : 10, young ? 12.0 : 26.0, 0.16, 1.3, 0, 0,
              {70, 165, 95}, {60, 110, 150}};
    case Species::cirsium:
      return {young ? 3 : 6, young ? 4 : 9, young ? 13.0 : 30.0, 0.26, 1.0, 4.5, 0.45,
              {95, 150, 100}, {220, 230, 225}};
    case Species::other:
      return {young ? 3 : 5, young ? 4 : 7, young ? 15.0 : 32.0, 0.45, 0.6, 9.0, 0.08,
              {115, 135, 70}, {170, 190, 150}};
  }
  return {};
}

std::vector<cv::Point> leaf_polygon(const LeafStyle& st, double length,
                                    double angle, cv::Point2d origin,
                                    std::mt19937_64& rng) {
  std::uniform_real_distribution<double> wobble(0.9, 1.1);
  const double half_w = st.width_ratio * length * wobble(rng);
  constexpr int kSteps = 48;
  std::vector<cv::Point2d> left, right;
  for (int i = 0; i <= kSteps; ++i) {
    const double t = static_cast<double>(i) / kSteps;
    double w = half_w * std::pow(std::sin(std::numbers::pi * std::pow(t, 0.8)), st.taper);
    if (st.lobes > 0)
      w *= 1.0 - st.lobe_depth * 0.5 * (1 - std::cos(2 * std::numbers::pi * st.lobes * t));
    left.emplace_back(t * length, w);
    right.emplace_back(t * length, -w);
  }
  const double c = std::cos(angle), s = std::sin(angle);
  std::vector<cv::Point> poly;
  auto emit = [&](cv::Point2d p) {
    const double x = origin.x + c * p.x - s * p.y;
    const double y = origin.y + s * p.x + c * p.y;
    poly.emplace_back(static_cast<int>(std::lround(x * kSupersample)),
                      static_cast<int>(std::lround(y * kSupersample)));
  };
  for (const auto& p : left) emit(p);
  for (auto it = right.rbegin(); it != right.rend(); ++it) emit(*it);
  return poly;
}

}  // namespace

std::string_view to_string(Species s) {
  switch (s) {
    case Species::sugar_beet: return "sugar_beet";
    case Species::polygonum: return "polygonum";
    case Species::cirsium: return "cirsium";
    case Species::other: return "other";
  }
  return "other";
}

std::string_view to_string(GrowthStage g) {
  return g == GrowthStage::seedling ? "seedling" : "well_grown";
}

std::optional<Species> parse_species(std::string_view s) {
  for (auto v : {Species::sugar_beet, Species::polygonum, Species::cirsium, Species::other})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

std::optional<GrowthStage> parse_growth_stage(std::string_view s) {
  for (auto v : {GrowthStage::seedling, GrowthStage::well_grown})
    if (to_string(v) == s) return v;
  return std::nullopt;
}

cv::Mat crop_to_opaque(const cv::Mat& bgra) {
  cv::Mat alpha;
  cv::extractChannel(bgra, alpha, 3);
  std::vector<cv::Point> nz;
  cv::findNonZero(alpha, nz);
  if (nz.empty()) return {};
  return bgra(cv::boundingRect(nz)).clone();
}

void validate_asset(const CropAsset& a) {
  if (a.image.empty() || a.image.type() != CV_8UC4)
    throw ValidationError(fmt::format("asset {}: image must be 8-bit RGBA", a.id));
  cv::Mat alpha;
  cv::extractChannel(a.image, alpha, 3);
  std::vector<cv::Point> nz;
  cv::findNonZero(alpha, nz);
  if (nz.empty())
    throw ValidationError(fmt::format("asset {}: no opaque pixel", a.id));
  const cv::Rect r = cv::boundingRect(nz);
  if (r.x != 0 || r.y != 0 || r.width != alpha.cols || r.height != alpha.rows)
    throw ValidationError(fmt::format("asset {}: opaque extent is not tight", a.id));
}

CropAsset make_procedural_asset(Species species, GrowthStage stage,
                                std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const LeafStyle st = style_for(species, stage);
  std::uniform_int_distribution<int> leaf_count(st.min_leaves, st.max_leaves);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int n = leaf_count(rng);
  const double base_len = st.length_px * (0.85 + 0.3 * unit(rng));
  const int half = static_cast<int>(std::ceil(base_len * 1.3)) + 4;
  const cv::Point2d origin(half, half);
  const int size = 2 * half;

  cv::Mat color(size * kSupersample, size * kSupersample, CV_8UC3, st.color);
  cv::Mat mask = cv::Mat::zeros(color.size(), CV_8UC1);
  const double phase = unit(rng) * 2 * std::numbers::pi;
  for (int k = 0; k < n; ++k) {
    const double angle = phase + 2 * std::numbers::pi * k / n + (unit(rng) - 0.5) * 0.5;
    const double len = base_len * (0.75 + 0.35 * unit(rng));
    auto poly = leaf_polygon(st, len, angle, origin, rng);
    const double shade = 0.8 + 0.35 * unit(rng);
    const cv::Scalar c(st.color[0] * shade, st.color[1] * shade, st.color[2] * shade);
    cv::fillPoly(color, std::vector<std::vector<cv::Point>>{poly}, c, cv::LINE_AA);
    cv::fillPoly(mask, std::vector<std::vector<cv::Point>>{poly}, cv::Scalar(255), cv::LINE_AA);
    const cv::Point tip(
        static_cast<int>((origin.x + std::cos(angle) * len * 0.85) * kSupersample),
        static_cast<int>((origin.y + std::sin(angle) * len * 0.85) * kSupersample));
    cv::line(color, cv::Point(origin * kSupersample), tip, st.vein,
             std::max(1, kSupersample / 2), cv::LINE_AA);
  }
  // Polygonum's dark leaf blotch; a small bud in the center for all species.
  if (species == Species::polygonum)
    cv::circle(color, cv::Point(origin * kSupersample), kSupersample * 3,
               cv::Scalar(40, 50, 90), cv::FILLED, cv::LINE_AA);
  cv::circle(color, cv::Point(origin * kSupersample), kSupersample * 2,
             st.vein, cv::FILLED, cv::LINE_AA);

  cv::Mat small_color, small_mask;
  cv::resize(color, small_color, cv::Size(size, size), 0, 0, cv::INTER_AREA);
  cv::resize(mask, small_mask, cv::Size(size, size), 0, 0, cv::INTER_AREA);
  std::vector<cv::Mat> ch;
  cv::split(small_color, ch);
  ch.push_back(small_mask);
  cv::Mat bgra;
  cv::merge(ch, bgra);

  CropAsset a;
  a.species = species;
  a.growth_stage = stage;
  a.id = fmt::format("{}_{}_{:016x}", to_string(species), to_string(stage), seed);
  a.image = crop_to_opaque(bgra);
  return a;
}

bool AssetSelector::matches(const CropAsset& a) const {
  const bool sp = species.empty() ||
                  std::find(species.begin(), species.end(), a.species) != species.end();
  const bool sg = stages.empty() ||
                  std::find(stages.begin(), stages.end(), a.growth_stage) != stages.end();
  return sp && sg;
}

std::vector<CropAsset> procedural_library(const AssetSelector& sel, int variants,
                                          std::uint64_t seed) {
  std::vector<CropAsset> out;
  const Species all_species[] = {Species::sugar_beet, Species::polygonum,
                                 Species::cirsium, Species::other};
  const GrowthStage all_stages[] = {GrowthStage::seedling, GrowthStage::well_grown};
  for (auto sp : all_species) {
    for (auto st : all_stages) {
      CropAsset probe;
      probe.species = sp;
      probe.growth_stage = st;
      if (!sel.matches(probe)) continue;
      for (int v = 0; v < variants; ++v) {
        const auto s = derive_seed(seed, static_cast<std::uint64_t>(v),
                                   static_cast<std::uint64_t>(sp) * 16 + static_cast<std::uint64_t>(st));
        out.push_back(make_procedural_asset(sp, st, s));
      }
    }
  }
  return out;
}

std::vector<CropAsset> load_assets(const std::filesystem::path& dir,
                                   const AssetSelector& sel) {
  if (!std::filesystem::is_directory(dir))
    throw IoError(fmt::format("asset directory {} does not exist", dir.string()));
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());

  std::vector<CropAsset> out;
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    std::optional<Species> sp;
    std::optional<GrowthStage> st;
    for (auto cand : {Species::sugar_beet, Species::polygonum, Species::cirsium, Species::other}) {
      const auto prefix = std::string(to_string(cand)) + "_";
      if (stem.starts_with(prefix)) {
        sp = cand;
        const auto rest = std::string_view(stem).substr(prefix.size());
        if (rest.starts_with("seedling")) st = GrowthStage::seedling;
        else if (rest.starts_with("well_grown")) st = GrowthStage::well_grown;
      }
    }
    if (!sp || !st)
      throw ValidationError(fmt::format(
          "asset file {}: name must start with <species>_<growth_stage>", f.string()));
    CropAsset a;
    a.id = stem;
    a.species = *sp;
    a.growth_stage = *st;
    a.image = cv::imread(f.string(), cv::IMREAD_UNCHANGED);
    if (a.image.empty()) throw IoError(fmt::format("cannot read {}", f.string()));
    if (a.image.type() != CV_8UC4)
      throw ValidationError(fmt::format("asset file {}: needs an alpha channel", f.string()));
    a.image = crop_to_opaque(a.image);
    if (!sel.matches(a)) continue;
    validate_asset(a);
    out.push_back(std::move(a));
  }
  return out;
}

}  // namespace cropsim::synth
