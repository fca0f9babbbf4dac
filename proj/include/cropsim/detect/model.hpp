#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cropsim/detect/detection.hpp"
#include "cropsim/geometry.hpp"
#include "json.hpp"

namespace cropsim::det {

// Channels of the dense head output, post-activation.
enum DenseChannel : int { kObj = 0, kCx = 1, kCy = 2, kW = 3, kH = 4, kDenseChannels = 5 };

struct DetectorConfig {
  int grid = 14;         // S; input side must be 16 * S
  int base_width = 16;   // channels of the first stage
};

// Small anchor-free single-class detector: a five-stage stride-16 conv/BN/SiLU
// backbone and a 1x1 head. forward() maps images [B,3,16S,16S] in [-1,1] to a
// dense map [B,5,S,S]: objectness, then (cx, cy, w, h) of the cell's box in
// normalized image coordinates. Every channel lies in [0,1].
class TinyDetectorImpl : public torch::nn::Module {
 public:
  explicit TinyDetectorImpl(DetectorConfig cfg = {});

  torch::Tensor forward(const torch::Tensor& images);

  const DetectorConfig& config() const { return cfg_; }
  int input_size() const { return cfg_.grid * 16; }

 private:
  DetectorConfig cfg_;
  torch::nn::Sequential backbone_{nullptr};
  torch::nn::Conv2d head_{nullptr};
  torch::Tensor cell_x_, cell_y_;
};

TORCH_MODULE(TinyDetector);

// Eval-mode dense prediction; throws ValidationError on a shape mismatch.
torch::Tensor forward_dense(TinyDetector& model, const torch::Tensor& images);

DenseOutput to_dense_output(const torch::Tensor& dense_chw);
torch::Tensor from_dense_output(const DenseOutput& d);

// Eval-mode inference in batches over [N,3,H,W] float images.
std::vector<DetectionSet> predict(TinyDetector& model, const torch::Tensor& images,
                                  const DecodeParams& params, int batch_size = 32);

nlohmann::json to_json(const DetectorConfig& c);
DetectorConfig detector_config_from_json(const nlohmann::json& j);

}  // namespace cropsim::det
