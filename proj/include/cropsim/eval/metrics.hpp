#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cropsim/detect/detection.hpp"
#include "cropsim/geometry.hpp"

namespace cropsim::eval {

// Per-image matching outcome. tp[i] refers to the i-th detection of the
// (confidence-sorted) input; a detection that is not TP is FP.
struct ImageMatches {
  std::vector<double> confidence;
  std::vector<bool> tp;
  std::size_t num_gt = 0;
  std::size_t fn = 0;
};

// Greedy matching in confidence order. Each detection takes the unmatched
// ground truth of highest IoU; it is a TP iff that IoU >= iou_thresh.
// Throws ValidationError if dets are not sorted by descending confidence.
ImageMatches match_detections(const det::DetectionSet& dets,
                              std::span<const BBox> gts, double iou_thresh);

struct ApResult {
  double ap = 0;
  bool zero_gt_warning = false;
};

// 101-point interpolated AP over the pooled matches of all images.
// Precision/recall points are taken at distinct confidence thresholds, so
// detections with tied scores enter the curve together.
ApResult average_precision(std::span<const ImageMatches> matches);

// Matches every image at iou_thresh, then pools.
ApResult average_precision(std::span<const det::DetectionSet> dets,
                           std::span<const std::vector<BBox>> gts,
                           double iou_thresh);

// The ten IoU thresholds 0.50, 0.55, ..., 0.95.
std::vector<double> coco_iou_thresholds();

struct DetectionMetrics {
  double precision = 0;
  double recall = 0;
  double map50 = 0;
  double map50_95 = 0;
  bool zero_gt_warning = false;
};

struct EvalParams {
  double conf_thresh = 0.25;  // operating point for P/R
};

// P/R at params.conf_thresh and IoU 0.5. Degenerate conventions: with no
// ground truth, recall is 1 and AP is 0 (warning set); with no detections
// above threshold, precision is 1 if there is also no ground truth, else 0.
DetectionMetrics evaluate_detections(std::span<const det::DetectionSet> dets,
                                     std::span<const std::vector<BBox>> gts,
                                     const EvalParams& params = {});

}  // namespace cropsim::eval
