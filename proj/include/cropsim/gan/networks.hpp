#pragma once

#include <torch/torch.h>

#include "json.hpp"

namespace cropsim::gan {

// ResNet-style translator (conv stem, two stride-2 downsamplers, residual
// blocks, two transposed-conv upsamplers, tanh), narrowed for 224 px input.
struct GeneratorConfig {
  int base_width = 8;
  int residual_blocks = 2;
};

// 70x70-style PatchGAN critic, narrowed; outputs a map of patch scores.
struct DiscriminatorConfig {
  int base_width = 16;
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

class ResnetGeneratorImpl : public torch::nn::Module {
 public:
  explicit ResnetGeneratorImpl(GeneratorConfig cfg = {});
  torch::Tensor forward(const torch::Tensor& x);
  const GeneratorConfig& config() const { return cfg_; }

 private:
  GeneratorConfig cfg_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(ResnetGenerator);

class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(DiscriminatorConfig cfg = {});
  torch::Tensor forward(const torch::Tensor& x);
  const DiscriminatorConfig& config() const { return cfg_; }

 private:
  DiscriminatorConfig cfg_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

// N(0, 0.02) conv weights, zero biases.
void init_weights(torch::nn::Module& m);

nlohmann::json to_json(const GeneratorConfig& c);
nlohmann::json to_json(const DiscriminatorConfig& c);
GeneratorConfig generator_config_from_json(const nlohmann::json& j);
DiscriminatorConfig discriminator_config_from_json(const nlohmann::json& j);

}  // namespace cropsim::gan
