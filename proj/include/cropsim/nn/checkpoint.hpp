#pragma once

#include <filesystem>
#include <string>

#include <torch/torch.h>

#include "json.hpp"

namespace cropsim::nn {

// Versioned checkpoint file:
//   line 1  "CROPSIM-CKPT <format version>"
//   line 2  one-line JSON header {kind, version, meta, tensors:[{name, shape}]}
//   rest    float32 little-endian tensor data, concatenated in header order
struct Checkpoint {
  std::string kind;  // e.g. "detector", "gan"
  int version = 0;   // payload schema version for `kind`
  nlohmann::json meta;
  std::vector<std::pair<std::string, torch::Tensor>> tensors;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);

// Throws CheckpointError on malformed files or kind/version mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::string& expected_kind, int expected_version);

// Parameters and buffers of `m`, names prefixed with `prefix`.
void append_module_state(Checkpoint& ckpt, const std::string& prefix,
                         const torch::nn::Module& m);

// Copies tensors named `prefix` + name into m's parameters and buffers;
// every parameter and buffer must be present with a matching shape.
void restore_module_state(const Checkpoint& ckpt, const std::string& prefix,
                          torch::nn::Module& m);

}  // namespace cropsim::nn
