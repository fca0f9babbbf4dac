#pragma once

#include <string>

namespace cropsim {

struct ImageDims {
  int height = 224;
  int width = 224;

  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

inline constexpr ImageDims kTrainDims{224, 224};

// Axis-aligned box in corner form, pixel units.
struct PixelRect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const;

  friend bool operator==(const PixelRect&, const PixelRect&) = default;
};

// YOLO-style box: center and size as fractions of image width/height.
struct BBox {
  double cx = 0, cy = 0, w = 0, h = 0;

  static BBox from_rect(const PixelRect& r, ImageDims dims);
  PixelRect to_rect(ImageDims dims) const;

  double x0() const { return cx - w / 2; }
  double y0() const { return cy - h / 2; }
  double x1() const { return cx + w / 2; }
  double y1() const { return cy + h / 2; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

// Checks 0<=cx,cy<=1, 0<w,h<=1 and that the box interior meets the frame.
bool is_valid(const BBox& b);

// Empty string when valid, otherwise a short description of the violation.
std::string describe_invalid(const BBox& b);

// Clips to [0,1]^2 in corner form. The result may have zero area.
BBox clip_to_frame(const BBox& b);

double iou(const PixelRect& a, const PixelRect& b);
double iou(const BBox& a, const BBox& b);

}  // namespace cropsim
