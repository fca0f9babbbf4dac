#include "cropsim/nn/tensor_image.hpp"

#include <stdexcept>

namespace cropsim::nn {

torch::Tensor image_to_u8(const cv::Mat& bgr) {
  if (bgr.type() != CV_8UC3) throw std::invalid_argument("expected an 8-bit 3-channel image");
  cv::Mat c = bgr.isContinuous() ? bgr : bgr.clone();
  return torch::from_blob(c.data, {c.rows, c.cols, 3}, torch::kUInt8).permute({2, 0, 1}).clone();
}

torch::Tensor u8_to_float(const torch::Tensor& u8) {
  return u8.to(torch::kFloat32).div(127.5).sub(1.0);
}

torch::Tensor image_to_tensor(const cv::Mat& bgr) { return u8_to_float(image_to_u8(bgr)); }

cv::Mat tensor_to_image(const torch::Tensor& chw) {
  auto t = chw.detach().to(torch::kCPU, torch::kFloat32).clamp(-1, 1).add(1).mul(127.5).round()
               .to(torch::kUInt8).permute({1, 2, 0}).contiguous();
  cv::Mat out(static_cast<int>(t.size(0)), static_cast<int>(t.size(1)), CV_8UC3);
  std::memcpy(out.data, t.data_ptr<std::uint8_t>(), static_cast<std::size_t>(t.numel()));
  return out;
}

}  // namespace cropsim::nn
