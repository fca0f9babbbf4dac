#include "cropsim/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace cropsim {

double PixelRect::area() const {
  return std::max(0.0, width()) * std::max(0.0, height());
}

BBox BBox::from_rect(const PixelRect& r, ImageDims dims) {
  const double W = dims.width, H = dims.height;
  return BBox{(r.x0 + r.x1) / 2 / W, (r.y0 + r.y1) / 2 / H, (r.x1 - r.x0) / W,
              (r.y1 - r.y0) / H};
}

PixelRect BBox::to_rect(ImageDims dims) const {
  const double W = dims.width, H = dims.height;
  return PixelRect{x0() * W, y0() * H, x1() * W, y1() * H};
}

std::string describe_invalid(const BBox& b) {
  if (!std::isfinite(b.cx) || !std::isfinite(b.cy) || !std::isfinite(b.w) ||
      !std::isfinite(b.h))
    return "non-finite coordinate";
  if (b.cx < 0 || b.cx > 1 || b.cy < 0 || b.cy > 1)
    return "center outside [0,1]";
  if (!(b.w > 0) || b.w > 1 || !(b.h > 0) || b.h > 1)
    return "size outside (0,1]";
  if (b.x1() <= 0 || b.x0() >= 1 || b.y1() <= 0 || b.y0() >= 1)
    return "box does not intersect the frame";
  return {};
}

bool is_valid(const BBox& b) { return describe_invalid(b).empty(); }

BBox clip_to_frame(const BBox& b) {
  const double x0 = std::clamp(b.x0(), 0.0, 1.0);
  const double y0 = std::clamp(b.y0(), 0.0, 1.0);
  const double x1 = std::clamp(b.x1(), 0.0, 1.0);
  const double y1 = std::clamp(b.y1(), 0.0, 1.0);
  return BBox{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
}

double iou(const PixelRect& a, const PixelRect& b) {
  const double area_a = a.area();
  const double area_b = b.area();
  if (area_a <= 0 || area_b <= 0) return 0.0;
  const double iw = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
  const double ih = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = area_a + area_b - inter;
  // Identical boxes must give exactly 1 regardless of rounding in the union.
  if (a == b) return 1.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double iou(const BBox& a, const BBox& b) {
  return iou(PixelRect{a.x0(), a.y0(), a.x1(), a.y1()},
             PixelRect{b.x0(), b.y0(), b.x1(), b.y1()});
}

}  // namespace cropsim
