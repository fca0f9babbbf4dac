#pragma once

#include <cstddef>
#include <vector>

#include "cropsim/geometry.hpp"

namespace cropsim::det {

struct Detection {
  BBox box;
  double confidence = 0;
};

// Sorted by descending confidence, at most DecodeParams::max_detections long.
struct DetectionSet {
  std::vector<Detection> detections;
  ImageDims image_dims = kTrainDims;

  std::size_t size() const { return detections.size(); }
  bool empty() const { return detections.empty(); }
};

struct Cell {
  double objectness = 0;
  BBox box;  // absolute, normalized image coordinates
};

// Dense per-cell head output on an S x S grid, cells in row-major order
// (index = row * S + col).
struct DenseOutput {
  int grid = 0;
  std::vector<Cell> cells;

  DenseOutput() = default;
  explicit DenseOutput(int s) : grid(s), cells(static_cast<std::size_t>(s) * s) {}

  Cell& at(int row, int col) { return cells[static_cast<std::size_t>(row) * grid + col]; }
  const Cell& at(int row, int col) const {
    return cells[static_cast<std::size_t>(row) * grid + col];
  }
};

struct DecodeParams {
  double conf_thresh = 0.25;
  double nms_iou = 0.5;
  std::size_t max_detections = 50;
};

// Greedy NMS. Input need not be sorted; output is sorted by descending
// confidence with ties kept in input order.
DetectionSet nms(DetectionSet dets, double nms_iou,
                 std::size_t max_detections = 50);

DetectionSet decode(const DenseOutput& dense, const DecodeParams& params,
                    ImageDims dims = kTrainDims);

// Grid cell responsible for a box center. A center lying exactly on a cell
// boundary belongs to the lower-indexed cell.
int responsible_cell(double center, int grid);

}  // namespace cropsim::det
