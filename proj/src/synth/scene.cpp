#include "cropsim/synth/scene.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>
#include <opencv2/imgproc.hpp>

namespace cropsim::synth {
namespace {

struct Canvas {
  cv::Mat acc;  // CV_32FC3
  std::vector<cv::Mat> layers;
  bool keep_layers = false;
};

Canvas start_canvas(const cv::Mat& background, std::mt19937_64& rng, bool keep_layers) {
  const int W = kTrainDims.width, H = kTrainDims.height;
  if (background.empty() || background.type() != CV_8UC3)
    throw ValidationError("background must be an 8-bit 3-channel image");
  if (background.cols < W || background.rows < H)
    throw ValidationError(fmt::format("background {}x{} is smaller than {}x{}",
                                      background.cols, background.rows, W, H));
  std::uniform_int_distribution<int> ox(0, background.cols - W);
  std::uniform_int_distribution<int> oy(0, background.rows - H);
  const int x = ox(rng), y = oy(rng);
  Canvas c;
  background(cv::Rect(x, y, W, H)).convertTo(c.acc, CV_32FC3);
  c.keep_layers = keep_layers;
  return c;
}

// Pastes the sprite with its top-left corner at (x, y). Fractional offsets
// are realized by bilinear resampling.
void paste(Canvas& canvas, const Sprite& s, double x, double y) {
  const int ix = static_cast<int>(std::floor(x)), iy = static_cast<int>(std::floor(y));
  const double fx = x - ix, fy = y - iy;
  cv::Mat color = s.color, alpha = s.alpha;
  if (fx != 0 || fy != 0) {
    const cv::Mat m = (cv::Mat_<double>(2, 3) << 1, 0, fx, 0, 1, fy);
    const cv::Size sz(s.alpha.cols + 1, s.alpha.rows + 1);
    cv::warpAffine(s.color, color, m, sz, cv::INTER_LINEAR, cv::BORDER_CONSTANT);
    cv::warpAffine(s.alpha, alpha, m, sz, cv::INTER_LINEAR, cv::BORDER_CONSTANT);
  }
  cv::Mat layer;
  if (canvas.keep_layers) layer = cv::Mat::zeros(canvas.acc.size(), CV_8UC1);
  for (int r = 0; r < alpha.rows; ++r) {
    const int yy = iy + r;
    if (yy < 0 || yy >= canvas.acc.rows) continue;
    for (int c = 0; c < alpha.cols; ++c) {
      const int xx = ix + c;
      if (xx < 0 || xx >= canvas.acc.cols) continue;
      const float a = std::round(alpha.at<float>(r, c) * 255.f) / 255.f;
      if (a <= 0.f) continue;
      cv::Vec3f& dst = canvas.acc.at<cv::Vec3f>(yy, xx);
      dst = color.at<cv::Vec3f>(r, c) + dst * (1.f - a);
      if (canvas.keep_layers) layer.at<std::uint8_t>(yy, xx) = static_cast<std::uint8_t>(a * 255.f + 0.5f);
    }
  }
  if (canvas.keep_layers) canvas.layers.push_back(std::move(layer));
}

cv::Mat finish(const Canvas& c) {
  cv::Mat out;
  c.acc.convertTo(out, CV_8UC3);
  return out;
}

bool fits_overlap(const PixelRect& r, const std::vector<PixelRect>& placed, double max_iou) {
  return std::all_of(placed.begin(), placed.end(),
                     [&](const PixelRect& p) { return iou(r, p) <= max_iou; });
}

struct Draw {
  std::size_t asset;
  double scale;
  double rotation;
};

Draw draw_object(std::size_t n_assets, const SynthConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, n_assets - 1);
  std::uniform_real_distribution<double> scale(cfg.scale_jitter.lo, cfg.scale_jitter.hi);
  std::uniform_real_distribution<double> rot(cfg.rotation_deg.lo, cfg.rotation_deg.hi);
  Draw d;
  d.asset = pick(rng);
  d.scale = cfg.scale_jitter.lo == cfg.scale_jitter.hi ? cfg.scale_jitter.lo : scale(rng);
  d.rotation = cfg.rotation_deg.lo == cfg.rotation_deg.hi ? cfg.rotation_deg.lo : rot(rng);
  return d;
}

void check_inputs(const std::vector<CropAsset>& assets, const SynthConfig& cfg) {
  cfg.validate();
  if (assets.empty()) throw ValidationError("compose: asset list is empty");
}

}  // namespace

std::string_view to_string(Domain d) { return d == Domain::sim ? "sim" : "real"; }

std::optional<Domain> parse_domain(std::string_view s) {
  if (s == "sim") return Domain::sim;
  if (s == "real") return Domain::real;
  return std::nullopt;
}

SynthConfig row_scene_defaults() {
  SynthConfig c;
  c.row_mode = true;
  c.objects_per_image = {3, 5};
  c.scale_jitter = {0.6, 0.9};
  return c;
}

void SynthConfig::validate() const {
  if (n_images < 1) throw ValidationError("synth: n_images must be >= 1");
  if (objects_per_image.lo < 1 || objects_per_image.lo > objects_per_image.hi)
    throw ValidationError("synth: objects_per_image must be a non-empty range >= 1");
  if (!(scale_jitter.lo > 0) || scale_jitter.lo > scale_jitter.hi)
    throw ValidationError("synth: scale_jitter must be a non-empty positive range");
  if (rotation_deg.lo > rotation_deg.hi)
    throw ValidationError("synth: rotation range is empty");
  if (!(overlap_max_iou >= 0 && overlap_max_iou < 1))
    throw ValidationError("synth: overlap_max_iou must lie in [0,1)");
  if (placement_attempts < 1) throw ValidationError("synth: placement_attempts must be >= 1");
  if (procedural_backgrounds < 1)
    throw ValidationError("synth: procedural_backgrounds must be >= 1");
  if (asset_variants < 1) throw ValidationError("synth: asset_variants must be >= 1");
  if (row_mode) {
    if (objects_per_image.lo < 3)
      throw ValidationError("synth: row scenes need at least 3 objects per image");
    if (row_angle_deg.lo > row_angle_deg.hi || row_angle_deg.lo <= -90 || row_angle_deg.hi >= 90)
      throw ValidationError("synth: row angle range must be ordered and inside (-90, 90)");
    if (row_offset_px.lo > row_offset_px.hi)
      throw ValidationError("synth: row offset range is empty");
    if (row_jitter_px < 0) throw ValidationError("synth: row jitter must be >= 0");
  }
}

Sprite render_sprite(const CropAsset& asset, double scale, double rotation_deg) {
  validate_asset(asset);
  cv::Mat f;
  asset.image.convertTo(f, CV_32FC4);
  std::vector<cv::Mat> ch;
  cv::split(f, ch);
  ch[3] /= 255.f;
  for (int c = 0; c < 3; ++c) ch[c] = ch[c].mul(ch[3]);
  cv::Mat premul_color, alpha = ch[3];
  cv::merge(std::vector<cv::Mat>{ch[0], ch[1], ch[2]}, premul_color);

  if (scale != 1.0 || std::fmod(rotation_deg, 360.0) != 0.0) {
    const double w = asset.image.cols, h = asset.image.rows;
    const double rad = rotation_deg * std::numbers::pi / 180.0;
    const double bw = (std::abs(std::cos(rad)) * w + std::abs(std::sin(rad)) * h) * scale;
    const double bh = (std::abs(std::sin(rad)) * w + std::abs(std::cos(rad)) * h) * scale;
    const cv::Size out(static_cast<int>(std::ceil(bw)) + 2, static_cast<int>(std::ceil(bh)) + 2);
    cv::Mat m = cv::getRotationMatrix2D(cv::Point2f(static_cast<float>((w - 1) / 2),
                                                    static_cast<float>((h - 1) / 2)),
                                        rotation_deg, scale);
    m.at<double>(0, 2) += (out.width - 1) / 2.0 - (w - 1) / 2.0;
    m.at<double>(1, 2) += (out.height - 1) / 2.0 - (h - 1) / 2.0;
    cv::Mat c2, a2;
    cv::warpAffine(premul_color, c2, m, out, cv::INTER_LINEAR, cv::BORDER_CONSTANT);
    cv::warpAffine(alpha, a2, m, out, cv::INTER_LINEAR, cv::BORDER_CONSTANT);
    premul_color = c2;
    alpha = a2;
  }

  // Quantize alpha to 8-bit so "opaque" means the same thing everywhere.
  cv::Mat a8;
  alpha.convertTo(a8, CV_8U, 255.0);
  std::vector<cv::Point> nz;
  cv::findNonZero(a8, nz);
  if (nz.empty()) throw ValidationError(fmt::format("sprite {} vanished after transform", asset.id));
  const cv::Rect r = cv::boundingRect(nz);
  Sprite s;
  a8(r).convertTo(s.alpha, CV_32F, 1.0 / 255.0);
  s.color = premul_color(r).clone();
  s.color.setTo(cv::Scalar::all(0), a8(r) == 0);
  return s;
}

ComposeResult compose_scene(const cv::Mat& background,
                            const std::vector<CropAsset>& assets,
                            const SynthConfig& cfg, std::uint64_t seed,
                            bool keep_layers) {
  check_inputs(assets, cfg);
  std::mt19937_64 rng(seed);
  Canvas canvas = start_canvas(background, rng, keep_layers);
  const int W = kTrainDims.width, H = kTrainDims.height;

  std::uniform_int_distribution<int> count(cfg.objects_per_image.lo, cfg.objects_per_image.hi);
  const int n = count(rng);
  std::vector<PixelRect> placed;
  ComposeResult result;
  for (int k = 0; k < n; ++k) {
    const Draw d = draw_object(assets.size(), cfg, rng);
    const Sprite s = render_sprite(assets[d.asset], d.scale, d.rotation);
    const int w = s.alpha.cols, h = s.alpha.rows;
    bool ok = false;
    PixelRect rect;
    for (int attempt = 0; attempt < cfg.placement_attempts && !ok; ++attempt) {
      if (w > W || h > H) break;
      std::uniform_int_distribution<int> px(0, W - w), py(0, H - h);
      const int x = px(rng), y = py(rng);
      rect = PixelRect{static_cast<double>(x), static_cast<double>(y),
                       static_cast<double>(x + w), static_cast<double>(y + h)};
      ok = fits_overlap(rect, placed, cfg.overlap_max_iou);
    }
    if (!ok)
      throw PlacementError(fmt::format(
          "could not place object {} of {} within {} attempts (seed {})", k + 1, n,
          cfg.placement_attempts, seed));
    paste(canvas, s, rect.x0, rect.y0);
    placed.push_back(rect);
    result.image.boxes.push_back(BBox::from_rect(rect, kTrainDims));
  }
  result.image.pixels = finish(canvas);
  result.image.domain = Domain::sim;
  result.image.seed = seed;
  result.layers = std::move(canvas.layers);
  return result;
}

ComposeResult compose_row_scene(const cv::Mat& background,
                                const std::vector<CropAsset>& assets,
                                const SynthConfig& cfg, std::uint64_t seed,
                                bool keep_layers) {
  check_inputs(assets, cfg);
  if (!cfg.row_mode) throw ValidationError("compose_row_scene requires row_mode");
  std::mt19937_64 rng(seed);
  Canvas canvas = start_canvas(background, rng, keep_layers);
  const ImageDims dims = kTrainDims;
  const double W = dims.width, H = dims.height;

  std::uniform_real_distribution<double> angle(cfg.row_angle_deg.lo, cfg.row_angle_deg.hi);
  std::uniform_real_distribution<double> offset(cfg.row_offset_px.lo, cfg.row_offset_px.hi);
  rows::RowLine line;
  line.theta_deg = cfg.row_angle_deg.lo == cfg.row_angle_deg.hi ? cfg.row_angle_deg.lo : angle(rng);
  line.x_at_mid = W / 2 + (cfg.row_offset_px.lo == cfg.row_offset_px.hi ? cfg.row_offset_px.lo
                                                                        : offset(rng));
  const double rad = line.theta_deg * std::numbers::pi / 180.0;
  const double nx = std::cos(rad), ny = -std::sin(rad);  // unit normal

  std::uniform_int_distribution<int> count(cfg.objects_per_image.lo, cfg.objects_per_image.hi);
  const int n = count(rng);
  std::vector<Sprite> sprites;
  double total_h = 0;
  for (int k = 0; k < n; ++k) {
    const Draw d = draw_object(assets.size(), cfg, rng);
    sprites.push_back(render_sprite(assets[d.asset], d.scale, d.rotation));
    if (sprites.back().alpha.rows > H)
      throw PlacementError(fmt::format("row object {} of {} is taller than the frame (seed {})", k + 1, n, seed));
    total_h += sprites.back().alpha.rows;
  }
  // Objects go top to bottom, each in its own vertical band sized to the
  // sprite plus an equal share of the spare height, so when the sprites fit
  // end to end they cannot overlap. Otherwise the bands are shrunk to fit and
  // the overlap test decides. The second half of the attempt budget samples
  // the whole in-frame band instead.
  const double fit = std::min(1.0, H / total_h);
  const double slack = std::max(0.0, H - total_h) / n;

  std::vector<PixelRect> placed;
  ComposeResult result;
  double band_top = 0;
  for (int k = 0; k < n; ++k) {
    const Sprite& s = sprites[static_cast<std::size_t>(k)];
    const double w = s.alpha.cols, h = s.alpha.rows;
    const double band_lo = h / 2, band_hi = H - h / 2;
    const double lo = std::clamp(band_top + fit * h / 2, band_lo, band_hi);
    const double hi = std::clamp(band_top + fit * h / 2 + slack, band_lo, band_hi);
    band_top += fit * h + slack;
    std::uniform_real_distribution<double> ys(lo, hi), ys_band(band_lo, band_hi);
    const int banded_attempts = (cfg.placement_attempts + 1) / 2;
    std::uniform_real_distribution<double> jit(-cfg.row_jitter_px, cfg.row_jitter_px);
    bool ok = false;
    PixelRect rect;
    for (int attempt = 0; attempt < cfg.placement_attempts && !ok; ++attempt) {
      const double y_on_line = attempt < banded_attempts ? ys(rng) : ys_band(rng);
      const double j = cfg.row_jitter_px > 0 ? jit(rng) : 0.0;
      const double cx = line.x_at(y_on_line, dims) + j * nx;
      const double cy = y_on_line + j * ny;
      rect = PixelRect{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
      if (rect.x0 < 0 || rect.y0 < 0 || rect.x1 > W || rect.y1 > H) continue;
      ok = fits_overlap(rect, placed, cfg.overlap_max_iou);
    }
    if (!ok)
      throw PlacementError(fmt::format(
          "could not place row object {} of {} within {} attempts (seed {})", k + 1, n,
          cfg.placement_attempts, seed));
    paste(canvas, s, rect.x0, rect.y0);
    placed.push_back(rect);
    result.image.boxes.push_back(BBox::from_rect(rect, dims));
  }
  result.image.pixels = finish(canvas);
  result.image.domain = Domain::sim;
  result.image.seed = seed;
  result.layers = std::move(canvas.layers);
  result.row = line;
  return result;
}

}  // namespace cropsim::synth
