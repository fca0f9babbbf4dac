#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cropsim/data/dataset.hpp"
#include "cropsim/detect/model.hpp"
#include "cropsim/eval/metrics.hpp"
#include "json.hpp"

namespace cropsim::det {

enum class Scheduler { cosine, constant };

struct TrainHyper {
  int epochs = 100;
  int batch_size = 64;
  double learning_rate = 1e-2;
  double weight_decay = 5e-4;
  Scheduler scheduler = Scheduler::cosine;
  std::uint64_t seed = 0;
  // Optimizer details not pinned by the training recipe above.
  double momentum = 0.937;
  double final_lr_fraction = 0.01;  // cosine floor, as a fraction of learning_rate
  double warmup_epochs = 3;
  bool augment_flips = true;

  void validate() const;
};

nlohmann::json to_json(const TrainHyper& h);
TrainHyper train_hyper_from_json(const nlohmann::json& j);

// Images kept as uint8 to bound memory; converted per batch.
struct TrainingSet {
  torch::Tensor images_u8;                 // [N,3,H,W]
  std::vector<std::vector<BBox>> boxes;    // per image
  std::string dataset_hash;

  std::int64_t size() const { return images_u8.defined() ? images_u8.size(0) : 0; }
};

// Labeled training set; real-domain manifests are refused.
TrainingSet load_training_set(const data::DatasetManifest& m, const std::string& stage,
                              data::LabelAudit* audit);

// Images only, never touching labels.
torch::Tensor load_images_u8(const data::DatasetManifest& m);

struct DetectionLossParts {
  torch::Tensor iou_term;   // mean (1 - IoU) over assigned cells, 0 if none
  torch::Tensor obj_term;   // mean objectness BCE over all cells
  torch::Tensor total;      // iou_term + obj_term
};

// Each GT is assigned to the cell containing its center (see
// responsible_cell); when two GTs share a cell the earlier one keeps it.
DetectionLossParts detection_loss_parts(const torch::Tensor& dense,
                                        const std::vector<std::vector<BBox>>& gts);

torch::Tensor detection_loss(const torch::Tensor& dense,
                             const std::vector<std::vector<BBox>>& gts);

double detection_loss(const DenseOutput& dense, const std::vector<BBox>& gts);

// One optimizer for the detector with the weight-decay split used by the
// training recipe (decay on conv weights only).
std::unique_ptr<torch::optim::SGD> make_detector_optimizer(TinyDetector& model,
                                                           const TrainHyper& h,
                                                           double lr);

struct TrainReport {
  std::vector<double> epoch_loss;  // mean batch loss per epoch
};

struct TrainOptions {
  std::optional<std::filesystem::path> checkpoint;  // written after training
  std::function<void(int epoch, double loss, double lr)> on_epoch;
};

TrainReport train_detector(TinyDetector& model, const TrainingSet& set,
                           const TrainHyper& hyper, const TrainOptions& options = {});

void save_detector(const std::filesystem::path& path, TinyDetector& model,
                   const TrainHyper& hyper, const std::string& dataset_hash);

struct LoadedDetector {
  TinyDetector model{nullptr};
  TrainHyper hyper;
  std::string dataset_hash;
};

LoadedDetector load_detector(const std::filesystem::path& path);

// Runs the model over a labeled dataset and scores it.
eval::DetectionMetrics evaluate_detector(TinyDetector& model, const data::DatasetManifest& m,
                                         const DecodeParams& decode_params,
                                         const eval::EvalParams& eval_params,
                                         data::LabelAudit* audit = nullptr);

}  // namespace cropsim::det
