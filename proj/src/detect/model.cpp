#include "cropsim/detect/model.hpp"

#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "cropsim/error.hpp"

namespace cropsim::det {
namespace {

void conv_bn_silu(torch::nn::Sequential& seq, int in, int out, int stride) {
  seq->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1).bias(false)));
  seq->push_back(torch::nn::BatchNorm2d(torch::nn::BatchNorm2dOptions(out).momentum(0.03).eps(1e-3)));
  seq->push_back(torch::nn::SiLU());
}

double logit(double p) { return std::log(p / (1 - p)); }

}  // namespace

TinyDetectorImpl::TinyDetectorImpl(DetectorConfig cfg) : cfg_(cfg) {
  if (cfg_.grid < 1 || cfg_.base_width < 1) throw ValidationError("bad detector config");
  const int c = cfg_.base_width;
  torch::nn::Sequential seq;
  conv_bn_silu(seq, 3, c, 2);  // 1/2
  conv_bn_silu(seq, c, 2 * c, 2);  // 1/4
  conv_bn_silu(seq, 2 * c, 2 * c, 1);
  conv_bn_silu(seq, 2 * c, 4 * c, 2);  // 1/8
  conv_bn_silu(seq, 4 * c, 4 * c, 1);
  conv_bn_silu(seq, 4 * c, 6 * c, 2);  // 1/16
  conv_bn_silu(seq, 6 * c, 6 * c, 1);
  backbone_ = register_module("backbone", seq);
  head_ = register_module("head", torch::nn::Conv2d(torch::nn::Conv2dOptions(6 * c, kDenseChannels, 1)));
  {
    torch::NoGradGuard g;
    head_->weight.mul_(0.1);
    head_->bias.zero_();
    head_->bias[kObj] = logit(0.01);
    head_->bias[kW] = logit(0.15);
    head_->bias[kH] = logit(0.15);
  }
  const int s = cfg_.grid;
  auto idx = torch::arange(s, torch::kFloat32);
  cell_x_ = register_buffer("cell_x", idx.view({1, 1, s}).expand({1, s, s}).contiguous());
  cell_y_ = register_buffer("cell_y", idx.view({1, s, 1}).expand({1, s, s}).contiguous());
}

torch::Tensor TinyDetectorImpl::forward(const torch::Tensor& images) {
  auto raw = head_(backbone_->forward(images));  // [B,5,S,S]
  auto act = torch::sigmoid(raw);
  const double s = cfg_.grid;
  auto cx = (act.select(1, kCx) + cell_x_.to(act.dtype())) / s;
  auto cy = (act.select(1, kCy) + cell_y_.to(act.dtype())) / s;
  return torch::stack({act.select(1, kObj), cx, cy, act.select(1, kW), act.select(1, kH)}, 1);
}

torch::Tensor forward_dense(TinyDetector& model, const torch::Tensor& images) {
  const int side = model->input_size();
  if (images.dim() != 4 || images.size(1) != 3 || images.size(2) != side || images.size(3) != side)
    throw ValidationError(fmt::format("detector expects [B,3,{0},{0}] input, got {1}", side,
                                      fmt::format("{}", fmt::join(images.sizes().vec(), "x"))));
  model->eval();
  return model->forward(images);
}

DenseOutput to_dense_output(const torch::Tensor& dense_chw) {
  auto t = dense_chw.detach().to(torch::kCPU, torch::kFloat64).contiguous();
  const int s = static_cast<int>(t.size(1));
  DenseOutput d(s);
  auto a = t.accessor<double, 3>();
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c)
      d.at(r, c) = Cell{a[kObj][r][c], BBox{a[kCx][r][c], a[kCy][r][c], a[kW][r][c], a[kH][r][c]}};
  return d;
}

torch::Tensor from_dense_output(const DenseOutput& d) {
  const int s = d.grid;
  auto t = torch::zeros({kDenseChannels, s, s}, torch::kFloat64);
  auto a = t.accessor<double, 3>();
  for (int r = 0; r < s; ++r)
    for (int c = 0; c < s; ++c) {
      const Cell& cell = d.at(r, c);
      a[kObj][r][c] = cell.objectness;
      a[kCx][r][c] = cell.box.cx;
      a[kCy][r][c] = cell.box.cy;
      a[kW][r][c] = cell.box.w;
      a[kH][r][c] = cell.box.h;
    }
  return t;
}

std::vector<DetectionSet> predict(TinyDetector& model, const torch::Tensor& images,
                                  const DecodeParams& params, int batch_size) {
  torch::NoGradGuard no_grad;
  std::vector<DetectionSet> out;
  const ImageDims dims{static_cast<int>(images.size(2)), static_cast<int>(images.size(3))};
  for (std::int64_t i = 0; i < images.size(0); i += batch_size) {
    const auto end = std::min<std::int64_t>(images.size(0), i + batch_size);
    auto dense = forward_dense(model, images.slice(0, i, end));
    for (std::int64_t b = 0; b < dense.size(0); ++b)
      out.push_back(decode(to_dense_output(dense[b]), params, dims));
  }
  return out;
}

nlohmann::json to_json(const DetectorConfig& c) {
  return {{"grid", c.grid}, {"base_width", c.base_width}};
}

DetectorConfig detector_config_from_json(const nlohmann::json& j) {
  DetectorConfig c;
  c.grid = j.value("grid", c.grid);
  c.base_width = j.value("base_width", c.base_width);
  return c;
}

}  // namespace cropsim::det
