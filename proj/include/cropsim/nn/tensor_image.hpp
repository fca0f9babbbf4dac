#pragma once

#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

namespace cropsim::nn {

// 8-bit BGR HxW -> float [3,H,W] in [-1,1].
torch::Tensor image_to_tensor(const cv::Mat& bgr);

// [3,H,W] in [-1,1] (values outside are clamped) -> 8-bit BGR.
cv::Mat tensor_to_image(const torch::Tensor& chw);

// 8-bit BGR -> uint8 [3,H,W]; compact storage for training sets.
torch::Tensor image_to_u8(const cv::Mat& bgr);

// uint8 [N,3,H,W] -> float in [-1,1].
torch::Tensor u8_to_float(const torch::Tensor& u8);

}  // namespace cropsim::nn
