#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cropsim/rows/rowgeom.hpp"
#include "oracles.hpp"

using namespace cropsim;
using rows::Point;

namespace {

std::vector<Point> points_on(double theta_deg, double x_mid, std::vector<double> ys, ImageDims dims = kTrainDims) {
  rows::RowLine l{theta_deg, x_mid};
  std::vector<Point> p;
  for (double y : ys) p.push_back({l.x_at(y, dims), y});
  return p;
}

}  // namespace

TEST(Lsq, RecoversNoiselessLines) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> th(-40, 40), off(-60, 60), y(0, 224);
  for (int i = 0; i < 200; ++i) {
    const double theta = th(rng), x_mid = 112 + off(rng);
    std::vector<double> ys;
    for (int k = 0; k < 6; ++k) ys.push_back(y(rng));
    const auto line = rows::fit_line_lsq(points_on(theta, x_mid, ys), kTrainDims);
    EXPECT_NEAR(line.theta_deg, theta, 1e-6);
    EXPECT_NEAR(line.x_at_mid, x_mid, 1e-6);
  }
}

TEST(Lsq, MatchesNormalEquationOracleOnNoisyPoints) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> noise(0, 3);
  std::uniform_real_distribution<double> y(0, 224);
  for (int i = 0; i < 100; ++i) {
    std::vector<Point> pts;
    std::vector<std::pair<double, double>> xy;
    for (int k = 0; k < 8; ++k) {
      const double yy = y(rng), xx = 100 + 0.3 * yy + noise(rng);
      pts.push_back({xx, yy});
      xy.emplace_back(xx, yy);
    }
    const auto got = rows::fit_line_lsq(pts, kTrainDims);
    const auto want = oracle::lsq_line(xy, kTrainDims.height);
    EXPECT_NEAR(got.theta_deg, want.theta_deg, 1e-9);
    EXPECT_NEAR(got.x_at_mid, want.x_at_mid, 1e-9);
  }
}

TEST(Lsq, DegenerateInputs) {
  EXPECT_THROW(rows::fit_line_lsq(std::vector<Point>{{1, 2}}, kTrainDims), rows::DegenerateInputError);
  EXPECT_THROW(rows::fit_line_lsq(std::vector<Point>{{1, 2}, {1, 2}}, kTrainDims), rows::DegenerateInputError);
  EXPECT_THROW(rows::fit_line_lsq(std::vector<Point>{{1, 50}, {9, 50}}, kTrainDims), rows::HorizontalRowError);
}

TEST(Offsets, CenteredVerticalLineIsZero) {
  const auto line = rows::fit_line_lsq(points_on(0, 112, {10, 80, 150, 210}), kTrainDims);
  const auto s = rows::offsets(line, kTrainDims);
  EXPECT_NEAR(s.theta_deg, 0, 1e-12);
  EXPECT_NEAR(s.L_px, 0, 1e-12);
}

TEST(Offsets, SignConvention) {
  const auto s = rows::offsets(rows::RowLine{5, 130}, kTrainDims);
  EXPECT_DOUBLE_EQ(s.theta_deg, 5);
  EXPECT_DOUBLE_EQ(s.L_px, 18);
}

TEST(Ransac, EqualsLsqWhenAllPointsAreInliers) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> noise(0, 1);
  std::uniform_real_distribution<double> y(0, 224);
  for (int i = 0; i < 100; ++i) {
    std::vector<Point> pts;
    for (int k = 0; k < 10; ++k) {
      const double yy = y(rng);
      pts.push_back({90 + 0.2 * yy + noise(rng), yy});
    }
    rows::RansacParams p;
    p.inlier_threshold = 10;
    p.seed = static_cast<std::uint64_t>(i);
    const auto r = rows::fit_line_ransac(pts, p, kTrainDims);
    const auto l = rows::fit_line_lsq(pts, kTrainDims);
    EXPECT_NEAR(r.theta_deg, l.theta_deg, 1e-9);
    EXPECT_NEAR(r.x_at_mid, l.x_at_mid, 1e-9);
  }
}

TEST(Ransac, RejectsOutliers) {
  std::vector<Point> pts = points_on(12, 120, {5, 30, 60, 90, 120, 150, 180, 215});
  pts.push_back({10, 100});
  pts.push_back({220, 40});
  rows::RansacParams p;
  const auto res = rows::fit_line_ransac_detailed(pts, p, kTrainDims);
  EXPECT_NEAR(res.line.theta_deg, 12, 1e-9);
  EXPECT_EQ(res.inliers.size(), 8u);
}

TEST(Ransac, DeterministicForSeed) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 224);
  std::vector<Point> pts;
  for (int k = 0; k < 15; ++k) pts.push_back({u(rng), u(rng)});
  rows::RansacParams p;
  p.seed = 77;
  const auto a = rows::fit_line_ransac(pts, p, kTrainDims), b = rows::fit_line_ransac(pts, p, kTrainDims);
  EXPECT_EQ(a.theta_deg, b.theta_deg);
  EXPECT_EQ(a.x_at_mid, b.x_at_mid);
}

TEST(Ransac, ParameterValidation) {
  rows::RansacParams p;
  p.iterations = 0;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.min_inliers = 1;
  EXPECT_THROW(p.validate(), ValidationError);
  p = {};
  p.min_inliers = 5;
  EXPECT_THROW(rows::fit_line_ransac(std::vector<Point>{{0, 0}, {100, 10}, {3, 200}}, p, kTrainDims),
               rows::NoConsensusError);
}

TEST(DistanceToLine, PerpendicularDistance) {
  const rows::RowLine vertical{0, 100};
  EXPECT_NEAR(rows::distance_to_line(vertical, {103, 7}, kTrainDims), 3, 1e-12);
  const rows::RowLine tilted{45, 112};
  EXPECT_NEAR(rows::distance_to_line(tilted, {112 + 10, 112}, kTrainDims), 10 / std::sqrt(2.0), 1e-9);
}

TEST(RowMae, MeanAbsoluteDifferences) {
  std::vector<rows::OffsetSignal> pred{{1, 2}, {-3, 4}}, truth{{0, 0}, {0, 0}};
  const auto m = rows::row_mae(pred, truth);
  EXPECT_DOUBLE_EQ(m.mae_theta_deg, 2);
  EXPECT_DOUBLE_EQ(m.mae_dist_px, 3);
  EXPECT_THROW(rows::row_mae(std::span(pred).first(1), truth), ValidationError);
}

TEST(Centers, PixelCoordinates) {
  det::DetectionSet s;
  s.detections.push_back({{0.5, 0.25, 0.1, 0.1}, 0.9});
  const auto c = rows::centers(s);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_DOUBLE_EQ(c[0].x, 112);
  EXPECT_DOUBLE_EQ(c[0].y, 56);
}

TEST(OffsetRecord, Format) {
  EXPECT_EQ(rows::format_offset_record("f1", {1.5, -2.25}), "f1 1.500000 -2.250000");
}
