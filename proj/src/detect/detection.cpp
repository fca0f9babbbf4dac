#include "cropsim/detect/detection.hpp"

#include <algorithm>
#include <cmath>

#include "cropsim/error.hpp"

namespace cropsim::det {

DetectionSet nms(DetectionSet dets, double nms_iou, std::size_t max_detections) {
  std::stable_sort(dets.detections.begin(), dets.detections.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.confidence > b.confidence;
                   });
  std::vector<Detection> kept;
  for (const auto& d : dets.detections) {
    if (kept.size() >= max_detections) break;
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](const Detection& k) {
      return iou(k.box, d.box) > nms_iou;
    });
    if (!suppressed) kept.push_back(d);
  }
  dets.detections = std::move(kept);
  return dets;
}

DetectionSet decode(const DenseOutput& dense, const DecodeParams& params,
                    ImageDims dims) {
  if (params.conf_thresh < 0 || params.conf_thresh > 1 || params.nms_iou < 0 ||
      params.nms_iou > 1)
    throw ValidationError("decode thresholds must lie in [0,1]");
  DetectionSet candidates;
  candidates.image_dims = dims;
  for (const auto& cell : dense.cells) {
    if (!(cell.objectness >= params.conf_thresh) || cell.objectness <= 0) continue;
    const BBox box = clip_to_frame(cell.box);
    if (!(box.w > 0) || !(box.h > 0)) continue;
    candidates.detections.push_back({box, std::clamp(cell.objectness, 0.0, 1.0)});
  }
  return nms(std::move(candidates), params.nms_iou, params.max_detections);
}

int responsible_cell(double center, int grid) {
  const int idx = static_cast<int>(std::ceil(center * grid)) - 1;
  return std::clamp(idx, 0, grid - 1);
}

}  // namespace cropsim::det
