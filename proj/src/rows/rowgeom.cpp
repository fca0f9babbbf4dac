#include "cropsim/rows/rowgeom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <fmt/format.h>

namespace cropsim::rows {
namespace {

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

// Line in normalized implicit form a*x + b*y + c = 0 with a^2 + b^2 = 1.
struct ImplicitLine {
  double a = 1, b = 0, c = 0;

  double distance(Point p) const { return std::abs(a * p.x + b * p.y + c); }
};

ImplicitLine implicit_from(const RowLine& line, ImageDims dims) {
  // x - m*y - (x_mid - m*H/2) = 0
  const double m = std::tan(line.theta_deg / kRadToDeg);
  const double norm = std::sqrt(1 + m * m);
  const double half_h = dims.height / 2.0;
  return {1 / norm, -m / norm, -(line.x_at_mid - m * half_h) / norm};
}

std::size_t count_distinct(std::span<const Point> points) {
  std::vector<std::pair<double, double>> v;
  v.reserve(points.size());
  for (auto p : points) v.emplace_back(p.x, p.y);
  std::sort(v.begin(), v.end());
  return static_cast<std::size_t>(std::unique(v.begin(), v.end()) - v.begin());
}

std::vector<std::size_t> inliers_of(const ImplicitLine& l,
                                    std::span<const Point> points,
                                    double threshold) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < points.size(); ++i)
    if (l.distance(points[i]) <= threshold) idx.push_back(i);
  return idx;
}

std::vector<Point> gather(std::span<const Point> points,
                          const std::vector<std::size_t>& idx) {
  std::vector<Point> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(points[i]);
  return out;
}

}  // namespace

double RowLine::x_at(double y, ImageDims dims) const {
  return x_at_mid + std::tan(theta_deg / kRadToDeg) * (y - dims.height / 2.0);
}

void RansacParams::validate() const {
  if (iterations < 1) throw ValidationError("ransac iterations must be >= 1");
  if (!(inlier_threshold > 0))
    throw ValidationError("ransac inlier_threshold must be > 0");
  if (min_inliers < 2) throw ValidationError("ransac min_inliers must be >= 2");
}

std::vector<Point> centers(const det::DetectionSet& dets) {
  std::vector<Point> out;
  out.reserve(dets.size());
  const double W = dets.image_dims.width, H = dets.image_dims.height;
  for (const auto& d : dets.detections) out.push_back({d.box.cx * W, d.box.cy * H});
  return out;
}

RowLine fit_line_lsq(std::span<const Point> points, ImageDims dims) {
  if (points.size() < 2 || count_distinct(points) < 2)
    throw DegenerateInputError("line fit needs at least two distinct points");
  const double n = static_cast<double>(points.size());
  double mx = 0, my = 0;
  for (auto p : points) {
    mx += p.x;
    my += p.y;
  }
  mx /= n;
  my /= n;
  double syy = 0, sxy = 0;
  for (auto p : points) {
    syy += (p.y - my) * (p.y - my);
    sxy += (p.y - my) * (p.x - mx);
  }
  if (syy == 0)
    throw HorizontalRowError("all points lie on one image row; x = m*y + b is undefined");
  const double m = sxy / syy;
  return RowLine{std::atan(m) * kRadToDeg, mx + m * (dims.height / 2.0 - my)};
}

RansacResult fit_line_ransac_detailed(std::span<const Point> points,
                                      const RansacParams& params,
                                      ImageDims dims) {
  params.validate();
  if (points.size() < 2 || count_distinct(points) < 2)
    throw DegenerateInputError("RANSAC needs at least two distinct points");

  std::vector<std::size_t> best;
  auto consider = [&](const ImplicitLine& l) {
    auto in = inliers_of(l, points, params.inlier_threshold);
    if (in.size() > best.size()) best = std::move(in);
  };

  // The all-points fit is the first hypothesis, so a set that is entirely
  // consistent reproduces the least-squares answer exactly.
  try {
    consider(implicit_from(fit_line_lsq(points, dims), dims));
  } catch (const HorizontalRowError&) {
  }

  std::mt19937_64 rng(params.seed);
  const std::size_t n = points.size();
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::uniform_int_distribution<std::size_t> second(0, n - 2);
  for (int it = 0; it < params.iterations && best.size() < n; ++it) {
    const std::size_t i = first(rng);
    std::size_t j = second(rng);
    if (j >= i) ++j;
    const Point p = points[i], q = points[j];
    const double dx = q.x - p.x, dy = q.y - p.y;
    const double len = std::hypot(dx, dy);
    if (len == 0) continue;
    // Normal to the direction (dx, dy).
    ImplicitLine l{dy / len, -dx / len, 0};
    l.c = -(l.a * p.x + l.b * p.y);
    consider(l);
  }

  if (best.size() < static_cast<std::size_t>(params.min_inliers))
    throw NoConsensusError(fmt::format("best consensus has {} inliers, need {}",
                                       best.size(), params.min_inliers));

  RowLine line = fit_line_lsq(gather(points, best), dims);
  // Re-derive the consensus from the refined line until it stops growing.
  for (int round = 0; round < 10; ++round) {
    auto in = inliers_of(implicit_from(line, dims), points, params.inlier_threshold);
    if (in.size() <= best.size()) break;
    best = std::move(in);
    line = fit_line_lsq(gather(points, best), dims);
  }
  return {line, best};
}

RowLine fit_line_ransac(std::span<const Point> points,
                        const RansacParams& params, ImageDims dims) {
  return fit_line_ransac_detailed(points, params, dims).line;
}

OffsetSignal offsets(const RowLine& line, ImageDims dims) {
  return {line.theta_deg, line.x_at_mid - dims.width / 2.0};
}

double distance_to_line(const RowLine& line, Point p, ImageDims dims) {
  return implicit_from(line, dims).distance(p);
}

RowMetrics row_mae(std::span<const OffsetSignal> predicted,
                   std::span<const OffsetSignal> truth) {
  if (predicted.size() != truth.size())
    throw ValidationError(fmt::format("row_mae: {} predictions vs {} ground truths",
                                      predicted.size(), truth.size()));
  if (predicted.empty()) throw ValidationError("row_mae: empty input");
  RowMetrics m;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    m.mae_theta_deg += std::abs(predicted[i].theta_deg - truth[i].theta_deg);
    m.mae_dist_px += std::abs(predicted[i].L_px - truth[i].L_px);
  }
  m.mae_theta_deg /= static_cast<double>(predicted.size());
  m.mae_dist_px /= static_cast<double>(predicted.size());
  return m;
}

std::string format_offset_record(const std::string& frame_id,
                                 const OffsetSignal& s) {
  return fmt::format("{} {:.6f} {:.6f}", frame_id, s.theta_deg, s.L_px);
}

}  // namespace cropsim::rows
