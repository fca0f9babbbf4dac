#include "cropsim/detect/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <fmt/format.h>

#include "cropsim/error.hpp"
#include "cropsim/nn/checkpoint.hpp"
#include "cropsim/nn/tensor_image.hpp"

namespace cropsim::det {
namespace {
constexpr int kCheckpointVersion = 1;
}  // namespace

void TrainHyper::validate() const {
  if (epochs < 0) throw ValidationError("detector: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("detector: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("detector: learning_rate must be > 0");
  if (!(weight_decay > 0)) throw ValidationError("detector: weight_decay must be > 0");
  if (momentum < 0 || momentum >= 1) throw ValidationError("detector: momentum must be in [0,1)");
  if (!(final_lr_fraction > 0) || final_lr_fraction > 1)
    throw ValidationError("detector: final_lr_fraction must be in (0,1]");
  if (warmup_epochs < 0) throw ValidationError("detector: warmup_epochs must be >= 0");
}

nlohmann::json to_json(const TrainHyper& h) {
  return {{"epochs", h.epochs},
          {"batch_size", h.batch_size},
          {"learning_rate", h.learning_rate},
          {"weight_decay", h.weight_decay},
          {"scheduler", h.scheduler == Scheduler::cosine ? "cosine" : "constant"},
          {"seed", h.seed},
          {"momentum", h.momentum},
          {"final_lr_fraction", h.final_lr_fraction},
          {"warmup_epochs", h.warmup_epochs},
          {"augment_flips", h.augment_flips}};
}

TrainHyper train_hyper_from_json(const nlohmann::json& j) {
  TrainHyper h;
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.weight_decay = j.value("weight_decay", h.weight_decay);
  const auto sched = j.value("scheduler", std::string("cosine"));
  if (sched == "cosine") h.scheduler = Scheduler::cosine;
  else if (sched == "constant") h.scheduler = Scheduler::constant;
  else throw ValidationError(fmt::format("detector: unknown scheduler '{}'", sched));
  h.seed = j.value("seed", h.seed);
  h.momentum = j.value("momentum", h.momentum);
  h.final_lr_fraction = j.value("final_lr_fraction", h.final_lr_fraction);
  h.warmup_epochs = j.value("warmup_epochs", h.warmup_epochs);
  h.augment_flips = j.value("augment_flips", h.augment_flips);
  return h;
}

torch::Tensor load_images_u8(const data::DatasetManifest& m) {
  std::vector<torch::Tensor> imgs;
  imgs.reserve(m.entries.size());
  for (const auto& e : m.entries) imgs.push_back(nn::image_to_u8(data::read_image(m, e)));
  if (imgs.empty()) throw ValidationError(fmt::format("dataset {} is empty", m.root.string()));
  return torch::stack(imgs);
}

TrainingSet load_training_set(const data::DatasetManifest& m, const std::string& stage,
                              data::LabelAudit* audit) {
  TrainingSet s;
  s.boxes = data::read_labels(m, data::LabelUse::training, stage, audit);
  s.images_u8 = load_images_u8(m);
  s.dataset_hash = m.content_hash;
  return s;
}

DetectionLossParts detection_loss_parts(const torch::Tensor& dense,
                                        const std::vector<std::vector<BBox>>& gts) {
  if (dense.dim() != 4 || dense.size(1) != kDenseChannels)
    throw ValidationError("detection_loss expects a [B,5,S,S] dense map");
  const auto B = dense.size(0);
  const int S = static_cast<int>(dense.size(2));
  if (static_cast<std::int64_t>(gts.size()) != B)
    throw ValidationError("detection_loss: batch size and ground-truth count differ");

  auto obj_target = torch::zeros({B, S, S}, dense.options().requires_grad(false));
  std::vector<std::int64_t> bi, ri, ci;
  std::vector<double> gt_flat;
  std::vector<std::vector<bool>> taken(static_cast<std::size_t>(B),
                                       std::vector<bool>(static_cast<std::size_t>(S) * S, false));
  for (std::int64_t b = 0; b < B; ++b) {
    for (const auto& g : gts[static_cast<std::size_t>(b)]) {
      const int r = responsible_cell(g.cy, S), c = responsible_cell(g.cx, S);
      auto&& slot = taken[static_cast<std::size_t>(b)][static_cast<std::size_t>(r) * S + c];
      if (slot) continue;
      slot = true;
      bi.push_back(b);
      ri.push_back(r);
      ci.push_back(c);
      gt_flat.insert(gt_flat.end(), {g.cx, g.cy, g.w, g.h});
    }
  }

  DetectionLossParts parts;
  const auto n = static_cast<std::int64_t>(bi.size());
  if (n > 0) {
    auto opts_i = torch::TensorOptions().dtype(torch::kInt64);
    auto tb = torch::tensor(bi, opts_i), tr = torch::tensor(ri, opts_i), tc = torch::tensor(ci, opts_i);
    obj_target.index_put_({tb, tr, tc}, 1.0);
    auto gt = torch::tensor(gt_flat, torch::kFloat64).view({n, 4}).to(dense.dtype());
    // [n,5] predictions at the assigned cells.
    auto pred = dense.permute({0, 2, 3, 1}).index({tb, tr, tc});
    auto px0 = pred.select(1, kCx) - pred.select(1, kW) / 2, px1 = pred.select(1, kCx) + pred.select(1, kW) / 2;
    auto py0 = pred.select(1, kCy) - pred.select(1, kH) / 2, py1 = pred.select(1, kCy) + pred.select(1, kH) / 2;
    auto gx0 = gt.select(1, 0) - gt.select(1, 2) / 2, gx1 = gt.select(1, 0) + gt.select(1, 2) / 2;
    auto gy0 = gt.select(1, 1) - gt.select(1, 3) / 2, gy1 = gt.select(1, 1) + gt.select(1, 3) / 2;
    auto iw = (torch::min(px1, gx1) - torch::max(px0, gx0)).clamp_min(0);
    auto ih = (torch::min(py1, gy1) - torch::max(py0, gy0)).clamp_min(0);
    auto inter = iw * ih;
    auto uni = pred.select(1, kW) * pred.select(1, kH) + gt.select(1, 2) * gt.select(1, 3) - inter;
    parts.iou_term = (1 - inter / uni).mean();
  } else {
    parts.iou_term = torch::zeros({}, dense.options());
  }
  parts.obj_term = torch::binary_cross_entropy(dense.select(1, kObj), obj_target);
  parts.total = parts.iou_term + parts.obj_term;
  return parts;
}

torch::Tensor detection_loss(const torch::Tensor& dense,
                             const std::vector<std::vector<BBox>>& gts) {
  return detection_loss_parts(dense, gts).total;
}

double detection_loss(const DenseOutput& dense, const std::vector<BBox>& gts) {
  auto t = from_dense_output(dense).unsqueeze(0);
  return detection_loss(t, {gts}).item<double>();
}

std::unique_ptr<torch::optim::SGD> make_detector_optimizer(TinyDetector& model,
                                                           const TrainHyper& h, double lr) {
  std::vector<torch::Tensor> decay, no_decay;
  for (auto& p : model->named_parameters(true)) {
    if (p.value().dim() > 1) decay.push_back(p.value());
    else no_decay.push_back(p.value());
  }
  auto base = torch::optim::SGDOptions(lr).momentum(h.momentum).nesterov(h.momentum > 0);
  std::vector<torch::optim::OptimizerParamGroup> groups;
  groups.emplace_back(decay, std::make_unique<torch::optim::SGDOptions>(
                                 torch::optim::SGDOptions(base).weight_decay(h.weight_decay)));
  groups.emplace_back(no_decay, std::make_unique<torch::optim::SGDOptions>(
                                    torch::optim::SGDOptions(base).weight_decay(0)));
  return std::make_unique<torch::optim::SGD>(std::move(groups), base);
}

TrainReport train_detector(TinyDetector& model, const TrainingSet& set,
                           const TrainHyper& hyper, const TrainOptions& options) {
  hyper.validate();
  if (set.size() == 0) throw ValidationError("train_detector: empty dataset");
  TrainReport report;
  if (hyper.epochs == 0) {
    if (options.checkpoint) save_detector(*options.checkpoint, model, hyper, set.dataset_hash);
    return report;
  }

  torch::manual_seed(hyper.seed);
  std::mt19937_64 rng(hyper.seed);
  auto opt = make_detector_optimizer(model, hyper, hyper.learning_rate);

  const auto n = set.size();
  const std::int64_t batches = (n + hyper.batch_size - 1) / hyper.batch_size;
  const std::int64_t total_iters = batches * hyper.epochs;
  const std::int64_t warmup_iters =
      std::min<std::int64_t>(static_cast<std::int64_t>(std::llround(hyper.warmup_epochs * batches)),
                             total_iters / 3);
  std::vector<std::int64_t> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::bernoulli_distribution coin(0.5);

  std::int64_t iter = 0;
  for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
    model->train();
    const double progress = static_cast<double>(epoch) / hyper.epochs;
    const double f = hyper.final_lr_fraction;
    const double epoch_lr =
        hyper.scheduler == Scheduler::cosine
            ? hyper.learning_rate * (f + (1 - f) * 0.5 * (1 + std::cos(std::numbers::pi * progress)))
            : hyper.learning_rate;
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    for (std::int64_t b = 0; b < batches; ++b, ++iter) {
      const double lr = iter < warmup_iters ? epoch_lr * static_cast<double>(iter + 1) / warmup_iters
                                            : epoch_lr;
      for (auto& g : opt->param_groups()) static_cast<torch::optim::SGDOptions&>(g.options()).lr(lr);

      const auto lo = b * hyper.batch_size, hi = std::min(n, lo + hyper.batch_size);
      std::vector<torch::Tensor> imgs;
      std::vector<std::vector<BBox>> gts;
      for (auto k = lo; k < hi; ++k) {
        const auto idx = order[static_cast<std::size_t>(k)];
        auto img = set.images_u8[idx];
        auto boxes = set.boxes[static_cast<std::size_t>(idx)];
        if (hyper.augment_flips) {
          if (coin(rng)) {
            img = img.flip({2});
            for (auto& bx : boxes) bx.cx = 1 - bx.cx;
          }
          if (coin(rng)) {
            img = img.flip({1});
            for (auto& bx : boxes) bx.cy = 1 - bx.cy;
          }
        }
        imgs.push_back(img);
        gts.push_back(std::move(boxes));
      }
      auto x = nn::u8_to_float(torch::stack(imgs));
      auto loss = detection_loss(model->forward(x), gts);
      const double v = loss.item<double>();
      if (!std::isfinite(v))
        throw NonFiniteLossError(fmt::format("detector loss is {} at epoch {} batch {}", v, epoch, b));
      opt->zero_grad();
      loss.backward();
      opt->step();
      loss_sum += v;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    if (options.on_epoch) options.on_epoch(epoch, report.epoch_loss.back(), epoch_lr);
  }
  model->eval();
  if (options.checkpoint) save_detector(*options.checkpoint, model, hyper, set.dataset_hash);
  return report;
}

void save_detector(const std::filesystem::path& path, TinyDetector& model,
                   const TrainHyper& hyper, const std::string& dataset_hash) {
  nn::Checkpoint ck;
  ck.kind = "detector";
  ck.version = kCheckpointVersion;
  ck.meta = {{"config", to_json(model->config())},
             {"hyper", to_json(hyper)},
             {"seed", hyper.seed},
             {"dataset_hash", dataset_hash}};
  nn::append_module_state(ck, "", *model);
  nn::save_checkpoint(path, ck);
}

LoadedDetector load_detector(const std::filesystem::path& path) {
  auto ck = nn::load_checkpoint(path, "detector", kCheckpointVersion);
  LoadedDetector out;
  out.model = TinyDetector(detector_config_from_json(ck.meta.at("config")));
  nn::restore_module_state(ck, "", *out.model);
  out.model->eval();
  out.hyper = train_hyper_from_json(ck.meta.at("hyper"));
  out.dataset_hash = ck.meta.value("dataset_hash", "");
  return out;
}

eval::DetectionMetrics evaluate_detector(TinyDetector& model, const data::DatasetManifest& m,
                                         const DecodeParams& decode_params,
                                         const eval::EvalParams& eval_params,
                                         data::LabelAudit* audit) {
  if (m.entries.empty()) throw ValidationError("evaluate_detector: empty dataset");
  auto gts = data::read_labels(m, data::LabelUse::evaluation, "eval", audit);
  auto images = nn::u8_to_float(load_images_u8(m));
  auto dets = predict(model, images, decode_params);
  return eval::evaluate_detections(dets, gts, eval_params);
}

}  // namespace cropsim::det
