#include "cropsim/nn/checkpoint.hpp"

#include <fstream>
#include <map>

#include <fmt/format.h>

namespace cropsim::nn {
namespace {
constexpr int kFormatVersion = 1;
constexpr const char* kMagic = "CROPSIM-CKPT";
}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["kind"] = ckpt.kind;
  header["version"] = ckpt.version;
  header["meta"] = ckpt.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : ckpt.tensors)
    header["tensors"].push_back({{"name", name}, {"shape", t.sizes().vec()}});

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(fmt::format("cannot write {}", path.string()));
  out << kMagic << ' ' << kFormatVersion << '\n' << header.dump() << '\n';
  for (const auto& [name, t] : ckpt.tensors) {
    auto c = t.detach().to(torch::kCPU, torch::kFloat32).contiguous();
    out.write(reinterpret_cast<const char*>(c.data_ptr<float>()),
              static_cast<std::streamsize>(c.numel() * sizeof(float)));
  }
  if (!out) throw CheckpointError(fmt::format("write failed for {}", path.string()));
}

Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::string& expected_kind, int expected_version) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(fmt::format("cannot open checkpoint {}", path.string()));
  std::string magic_line, header_line;
  std::getline(in, magic_line);
  if (magic_line != fmt::format("{} {}", kMagic, kFormatVersion))
    throw CheckpointError(fmt::format("{}: not a checkpoint (or unsupported format)", path.string()));
  std::getline(in, header_line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(fmt::format("{}: bad header: {}", path.string(), e.what()));
  }
  Checkpoint ckpt;
  ckpt.kind = header.value("kind", "");
  ckpt.version = header.value("version", 0);
  if (ckpt.kind != expected_kind)
    throw CheckpointError(fmt::format("{}: checkpoint kind '{}', expected '{}'", path.string(),
                                      ckpt.kind, expected_kind));
  if (ckpt.version != expected_version)
    throw CheckpointError(fmt::format("{}: {} checkpoint version {}, expected {}", path.string(),
                                      ckpt.kind, ckpt.version, expected_version));
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& jt : header.at("tensors")) {
    const auto shape = jt.at("shape").get<std::vector<std::int64_t>>();
    auto t = torch::empty(shape, torch::kFloat32);
    in.read(reinterpret_cast<char*>(t.data_ptr<float>()),
            static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!in) throw CheckpointError(fmt::format("{}: truncated tensor data", path.string()));
    ckpt.tensors.emplace_back(jt.at("name").get<std::string>(), std::move(t));
  }
  return ckpt;
}

void append_module_state(Checkpoint& ckpt, const std::string& prefix,
                         const torch::nn::Module& m) {
  for (const auto& p : m.named_parameters(true)) ckpt.tensors.emplace_back(prefix + p.key(), p.value());
  for (const auto& b : m.named_buffers(true)) ckpt.tensors.emplace_back(prefix + b.key(), b.value());
}

void restore_module_state(const Checkpoint& ckpt, const std::string& prefix,
                          torch::nn::Module& m) {
  std::map<std::string, const torch::Tensor*> by_name;
  for (const auto& [name, t] : ckpt.tensors) by_name[name] = &t;
  torch::NoGradGuard no_grad;
  auto copy = [&](const std::string& key, torch::Tensor& dst) {
    auto it = by_name.find(prefix + key);
    if (it == by_name.end())
      throw CheckpointError(fmt::format("checkpoint lacks tensor {}{}", prefix, key));
    if (it->second->sizes() != dst.sizes())
      throw CheckpointError(fmt::format("checkpoint tensor {}{} has the wrong shape", prefix, key));
    dst.copy_(it->second->to(dst.dtype()));
  };
  for (auto& p : m.named_parameters(true)) copy(p.key(), p.value());
  for (auto& b : m.named_buffers(true)) copy(b.key(), b.value());
}

}  // namespace cropsim::nn
