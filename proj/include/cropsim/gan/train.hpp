#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <torch/torch.h>

#include "cropsim/data/dataset.hpp"
#include "cropsim/detect/model.hpp"
#include "cropsim/detect/train.hpp"
#include "cropsim/gan/losses.hpp"
#include "cropsim/gan/networks.hpp"
#include "json.hpp"

namespace cropsim::gan {

// Replay buffer of generated images shown to the discriminators. Until full,
// every query is stored and returned; afterwards each image is, with
// probability 1/2, swapped for a random stored one.
class ImagePool {
 public:
  explicit ImagePool(std::size_t capacity = 50, std::uint64_t seed = 0);

  torch::Tensor query(const torch::Tensor& images);
  std::size_t size() const { return images_.size(); }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  std::vector<torch::Tensor> images_;
  std::mt19937_64 rng_;
};

struct GanSchedule {
  int epochs = 5;
  int batch_size = 1;
  double learning_rate = 2e-4;  // Adam, generators and discriminators
  double beta1 = 0.5;
  double beta2 = 0.999;
  int decay_start_epoch = -1;   // linear decay to zero from here; -1 = epochs / 2
  // Detector update period in steps; 0 freezes the detector.
  int detector_update_period = 1;
  double detector_learning_rate = 1e-3;
  std::size_t pool_capacity = 50;

  void validate() const;
  int effective_decay_start() const { return decay_start_epoch < 0 ? epochs / 2 : decay_start_epoch; }
  double lr_factor(int epoch) const;
};

nlohmann::json to_json(const GanSchedule& s);
GanSchedule gan_schedule_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LossWeights& w);
LossWeights loss_weights_from_json(const nlohmann::json& j);

struct GanBundle {
  ResnetGenerator G_r{nullptr};  // sim -> real style
  ResnetGenerator G_s{nullptr};  // real -> sim style
  PatchDiscriminator D_r{nullptr};
  PatchDiscriminator D_s{nullptr};
  ImagePool pool_r, pool_s;
  LossWeights weights;
  GanSchedule schedule;
  std::uint64_t seed = 0;
  std::int64_t step = 0;

  // Freshly initialized networks, deterministic in seed.
  static GanBundle create(const GeneratorConfig& g, const DiscriminatorConfig& d,
                          const LossWeights& w, const GanSchedule& s, std::uint64_t seed);
};

// Generator loss breakdown of the bundle on one batch pair under the given
// weights.
GeneratorLosses total_loss(GanBundle& bundle, det::TinyDetector* detector,
                           const LossWeights& weights, const torch::Tensor& sim_batch,
                           const torch::Tensor& real_batch);

struct StepRecord {
  std::int64_t step = 0;
  int epoch = 0;
  LossBreakdown generator;
  double d_r = 0, d_s = 0;
  std::optional<double> detector;  // detection loss when the detector was updated
};

nlohmann::json to_json(const StepRecord& r);

struct GanTrainOptions {
  std::optional<std::filesystem::path> checkpoint_dir;  // gan_epoch<N>.ckpt + gan.ckpt
  std::optional<std::filesystem::path> loss_log;        // JSON lines, appended per step
  det::TrainHyper detector_hyper;                       // optimizer shape for detector updates
  std::function<void(const StepRecord&)> on_step;
};

struct GanTrainResult {
  std::vector<StepRecord> log;
};

// Joint training. Per step: (1) update D_r, D_s on pooled fakes; (2) update
// G_r, G_s against the weighted total with the detector frozen; (3) every
// detector_update_period steps, update the detector with detection_loss on
// G_r-translated sim images and their boxes. Real images are never paired
// with labels. Reproducible from bundle.seed.
GanTrainResult train_dtmars(GanBundle& bundle, det::TinyDetector* detector,
                            const det::TrainingSet& sim_set, const torch::Tensor& real_images_u8,
                            const GanTrainOptions& options = {});

void save_gan(const std::filesystem::path& path, const GanBundle& bundle);
GanBundle load_gan(const std::filesystem::path& path);

// Loads only the sim->real generator from a GAN checkpoint.
ResnetGenerator load_sim_to_real(const std::filesystem::path& path);

cv::Mat translate_image(ResnetGenerator& g, const cv::Mat& bgr);

// Writes a translated copy of the dataset: pixels through the generator,
// label files and manifest entries copied unchanged.
data::DatasetManifest translate_dataset(ResnetGenerator& g, const data::DatasetManifest& src,
                                        const std::filesystem::path& out_dir);

}  // namespace cropsim::gan
