#include "cropsim/gan/networks.hpp"

namespace cropsim::gan {
namespace tnn = torch::nn;

namespace {

tnn::InstanceNorm2d inorm(int c) { return tnn::InstanceNorm2d(tnn::InstanceNorm2dOptions(c)); }

}  // namespace

ResidualBlockImpl::ResidualBlockImpl(int c) {
  body_ = register_module(
      "body", tnn::Sequential(tnn::ReflectionPad2d(1), tnn::Conv2d(tnn::Conv2dOptions(c, c, 3)), inorm(c),
                              tnn::ReLU(), tnn::ReflectionPad2d(1),
                              tnn::Conv2d(tnn::Conv2dOptions(c, c, 3)), inorm(c)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

ResnetGeneratorImpl::ResnetGeneratorImpl(GeneratorConfig cfg) : cfg_(cfg) {
  const int c = cfg_.base_width;
  tnn::Sequential s;
  s->push_back(tnn::ReflectionPad2d(2));
  s->push_back(tnn::Conv2d(tnn::Conv2dOptions(3, c, 5)));
  s->push_back(inorm(c));
  s->push_back(tnn::ReLU());
  s->push_back(tnn::Conv2d(tnn::Conv2dOptions(c, 2 * c, 3).stride(2).padding(1)));
  s->push_back(inorm(2 * c));
  s->push_back(tnn::ReLU());
  s->push_back(tnn::Conv2d(tnn::Conv2dOptions(2 * c, 4 * c, 3).stride(2).padding(1)));
  s->push_back(inorm(4 * c));
  s->push_back(tnn::ReLU());
  for (int i = 0; i < cfg_.residual_blocks; ++i) s->push_back(ResidualBlock(4 * c));
  s->push_back(tnn::ConvTranspose2d(
      tnn::ConvTranspose2dOptions(4 * c, 2 * c, 3).stride(2).padding(1).output_padding(1)));
  s->push_back(inorm(2 * c));
  s->push_back(tnn::ReLU());
  s->push_back(tnn::ConvTranspose2d(
      tnn::ConvTranspose2dOptions(2 * c, c, 3).stride(2).padding(1).output_padding(1)));
  s->push_back(inorm(c));
  s->push_back(tnn::ReLU());
  s->push_back(tnn::ReflectionPad2d(2));
  s->push_back(tnn::Conv2d(tnn::Conv2dOptions(c, 3, 5)));
  s->push_back(tnn::Tanh());
  net_ = register_module("net", s);
}

torch::Tensor ResnetGeneratorImpl::forward(const torch::Tensor& x) { return net_->forward(x); }

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorConfig cfg) : cfg_(cfg) {
  const int c = cfg_.base_width;
  auto lrelu = [] { return tnn::LeakyReLU(tnn::LeakyReLUOptions().negative_slope(0.2)); };
  net_ = register_module(
      "net",
      tnn::Sequential(tnn::Conv2d(tnn::Conv2dOptions(3, c, 4).stride(2).padding(1)), lrelu(),
                      tnn::Conv2d(tnn::Conv2dOptions(c, 2 * c, 4).stride(2).padding(1)), inorm(2 * c),
                      lrelu(),
                      tnn::Conv2d(tnn::Conv2dOptions(2 * c, 4 * c, 4).stride(2).padding(1)),
                      inorm(4 * c), lrelu(),
                      tnn::Conv2d(tnn::Conv2dOptions(4 * c, 1, 4).stride(1).padding(1))));
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return net_->forward(x); }

void init_weights(torch::nn::Module& m) {
  torch::NoGradGuard g;
  for (auto& p : m.named_parameters(true)) {
    if (p.key().ends_with("weight") && p.value().dim() > 1) p.value().normal_(0.0, 0.02);
    else if (p.key().ends_with("bias")) p.value().zero_();
  }
}

nlohmann::json to_json(const GeneratorConfig& c) {
  return {{"base_width", c.base_width}, {"residual_blocks", c.residual_blocks}};
}

nlohmann::json to_json(const DiscriminatorConfig& c) { return {{"base_width", c.base_width}}; }

GeneratorConfig generator_config_from_json(const nlohmann::json& j) {
  GeneratorConfig c;
  c.base_width = j.value("base_width", c.base_width);
  c.residual_blocks = j.value("residual_blocks", c.residual_blocks);
  return c;
}

DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j) {
  DiscriminatorConfig c;
  c.base_width = j.value("base_width", c.base_width);
  return c;
}

}  // namespace cropsim::gan
