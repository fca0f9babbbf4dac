#pragma once

#include <vector>

#include <torch/torch.h>

namespace cropsim::nn {

// Turns off requires_grad on a module's parameters for the guard's lifetime;
// graphs built meanwhile carry no gradient path into those parameters.
class FreezeParams {
 public:
  explicit FreezeParams(torch::nn::Module* m) {
    if (!m) return;
    for (auto& p : m->parameters()) {
      saved_.emplace_back(p, p.requires_grad());
      p.set_requires_grad(false);
    }
  }
  ~FreezeParams() {
    for (auto& [p, flag] : saved_) p.set_requires_grad(flag);
  }
  FreezeParams(const FreezeParams&) = delete;
  FreezeParams& operator=(const FreezeParams&) = delete;

 private:
  std::vector<std::pair<torch::Tensor, bool>> saved_;
};

}  // namespace cropsim::nn
