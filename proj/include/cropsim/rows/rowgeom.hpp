#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cropsim/detect/detection.hpp"
#include "cropsim/error.hpp"
#include "cropsim/geometry.hpp"

namespace cropsim::rows {

struct Point {
  double x = 0, y = 0;
};

// A crop row as seen by the bottom camera. The line is parameterized as
// x = m*y + b so that near-vertical rows never hit a singularity.
struct RowLine {
  double theta_deg = 0;  // signed angle from image vertical, in (-90, 90]
  double x_at_mid = 0;   // x where the line crosses the row y = H/2

  // Horizontal coordinate of the line at image row y.
  double x_at(double y, ImageDims dims) const;
};

// Servo error pair handed to the row-following controller.
struct OffsetSignal {
  double theta_deg = 0;
  double L_px = 0;  // x_at_mid - W/2
};

struct RansacParams {
  int iterations = 200;
  double inlier_threshold = 5.0;  // px
  int min_inliers = 2;
  std::uint64_t seed = 0;

  void validate() const;
};

struct RowMetrics {
  double mae_theta_deg = 0;
  double mae_dist_px = 0;
};

// Fewer than two distinct points.
class DegenerateInputError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Every point shares a single image row; x = m*y + b cannot represent it.
class HorizontalRowError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class NoConsensusError : public Error {
 public:
  using Error::Error;
};

std::vector<Point> centers(const det::DetectionSet& dets);

RowLine fit_line_lsq(std::span<const Point> points, ImageDims dims);

struct RansacResult {
  RowLine line;
  std::vector<std::size_t> inliers;  // indices into the input, ascending
};

RansacResult fit_line_ransac_detailed(std::span<const Point> points,
                                      const RansacParams& params,
                                      ImageDims dims);

RowLine fit_line_ransac(std::span<const Point> points,
                        const RansacParams& params, ImageDims dims);

OffsetSignal offsets(const RowLine& line, ImageDims dims);

// Perpendicular distance from p to the line.
double distance_to_line(const RowLine& line, Point p, ImageDims dims);

RowMetrics row_mae(std::span<const OffsetSignal> predicted,
                   std::span<const OffsetSignal> truth);

// One line per frame: `frame_id theta_deg L_px`.
std::string format_offset_record(const std::string& frame_id,
                                 const OffsetSignal& s);

}  // namespace cropsim::rows
