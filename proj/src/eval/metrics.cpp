#include "cropsim/eval/metrics.hpp"

#include <algorithm>
#include <numeric>

#include "cropsim/error.hpp"

namespace cropsim::eval {

ImageMatches match_detections(const det::DetectionSet& dets,
                              std::span<const BBox> gts, double iou_thresh) {
  const auto& d = dets.detections;
  for (std::size_t i = 1; i < d.size(); ++i)
    if (d[i].confidence > d[i - 1].confidence)
      throw ValidationError("match_detections: detections not sorted by confidence");

  ImageMatches out;
  out.num_gt = gts.size();
  out.confidence.reserve(d.size());
  out.tp.reserve(d.size());
  std::vector<bool> taken(gts.size(), false);
  std::size_t matched = 0;
  for (const auto& det : d) {
    double best_iou = -1;
    std::size_t best = gts.size();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (taken[g]) continue;
      const double v = iou(det.box, gts[g]);
      if (v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    const bool is_tp = best < gts.size() && best_iou >= iou_thresh;
    if (is_tp) {
      taken[best] = true;
      ++matched;
    }
    out.confidence.push_back(det.confidence);
    out.tp.push_back(is_tp);
  }
  out.fn = gts.size() - matched;
  return out;
}

ApResult average_precision(std::span<const ImageMatches> matches) {
  std::size_t num_gt = 0;
  std::vector<std::pair<double, bool>> pooled;
  for (const auto& m : matches) {
    num_gt += m.num_gt;
    for (std::size_t i = 0; i < m.tp.size(); ++i)
      pooled.emplace_back(m.confidence[i], m.tp[i]);
  }
  if (num_gt == 0) return {0.0, true};
  std::stable_sort(pooled.begin(), pooled.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });

  // PR points at every distinct-confidence cut.
  std::vector<double> recall, precision;
  std::size_t tp = 0;
  for (std::size_t i = 0; i < pooled.size(); ++i) {
    if (pooled[i].second) ++tp;
    const bool group_end = i + 1 == pooled.size() || pooled[i + 1].first != pooled[i].first;
    if (!group_end) continue;
    recall.push_back(static_cast<double>(tp) / static_cast<double>(num_gt));
    precision.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  // Precision envelope: max precision at any recall to the right.
  for (std::size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);

  double sum = 0;
  std::size_t k = 0;
  for (int level = 0; level <= 100; ++level) {
    const double r = level / 100.0;
    while (k < recall.size() && recall[k] < r) ++k;
    if (k < recall.size()) sum += precision[k];
  }
  return {sum / 101.0, false};
}

ApResult average_precision(std::span<const det::DetectionSet> dets,
                           std::span<const std::vector<BBox>> gts,
                           double iou_thresh) {
  if (dets.size() != gts.size())
    throw ValidationError("average_precision: detection/ground-truth image count mismatch");
  std::vector<ImageMatches> m;
  m.reserve(dets.size());
  for (std::size_t i = 0; i < dets.size(); ++i)
    m.push_back(match_detections(dets[i], gts[i], iou_thresh));
  return average_precision(m);
}

std::vector<double> coco_iou_thresholds() {
  std::vector<double> t;
  for (int k = 0; k < 10; ++k) t.push_back((50 + 5 * k) / 100.0);
  return t;
}

DetectionMetrics evaluate_detections(std::span<const det::DetectionSet> dets,
                                     std::span<const std::vector<BBox>> gts,
                                     const EvalParams& params) {
  if (dets.size() != gts.size())
    throw ValidationError("evaluate: detection/ground-truth image count mismatch");
  if (dets.empty()) throw ValidationError("evaluate: empty dataset");

  DetectionMetrics out;
  std::vector<ImageMatches> at50;
  std::size_t num_gt = 0, tp = 0, kept = 0;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    at50.push_back(match_detections(dets[i], gts[i], 0.5));
    num_gt += gts[i].size();
    // Greedy matching is prefix-stable, so thresholding after matching is
    // the same as matching the thresholded set.
    const auto& m = at50.back();
    for (std::size_t j = 0; j < m.tp.size(); ++j) {
      if (m.confidence[j] < params.conf_thresh) continue;
      ++kept;
      if (m.tp[j]) ++tp;
    }
  }
  out.precision = kept == 0 ? (num_gt == 0 ? 1.0 : 0.0)
                            : static_cast<double>(tp) / static_cast<double>(kept);
  out.recall = num_gt == 0 ? 1.0 : static_cast<double>(tp) / static_cast<double>(num_gt);

  const auto ap50 = average_precision(at50);
  out.map50 = ap50.ap;
  out.zero_gt_warning = ap50.zero_gt_warning;
  double sum = 0;
  for (double t : coco_iou_thresholds())
    sum += t == 0.5 ? ap50.ap : average_precision(dets, gts, t).ap;
  out.map50_95 = sum / 10.0;
  return out;
}

}  // namespace cropsim::eval
