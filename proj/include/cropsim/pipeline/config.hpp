#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>

#include "cropsim/detect/model.hpp"
#include "cropsim/detect/train.hpp"
#include "cropsim/gan/losses.hpp"
#include "cropsim/gan/networks.hpp"
#include "cropsim/gan/train.hpp"
#include "cropsim/rows/rowgeom.hpp"
#include "cropsim/synth/scene.hpp"
#include "json.hpp"

namespace cropsim::pipeline {

enum class Arm { sim_only, cyclegan, retina_style, dt_mars };

std::string_view to_string(Arm a);
std::optional<Arm> parse_arm(std::string_view s);
// Row label used in the comparison tables.
std::string_view display_name(Arm a);

struct GanConfig {
  gan::LossWeights weights;
  gan::GanSchedule schedule;
  gan::GeneratorConfig generator;
  gan::DiscriminatorConfig discriminator;
};

struct EvalConfig {
  double conf_thresh = 0.25;
  double nms_iou = 0.5;
  int max_detections = 50;
  rows::RansacParams ransac;
};

// One dataset split. The synth template is specialized per split (size,
// domain, seed); an existing dataset at `path` is used as is.
struct SplitConfig {
  std::filesystem::path path;
  int images = 0;
};

struct DatasetsConfig {
  SplitConfig sim{"data/sim", 2400};
  SplitConfig real{"data/real", 2400};   // unlabeled training pool
  SplitConfig test{"data/test", 408};    // labeled pseudo-real held-out set
};

struct PathsConfig {
  std::filesystem::path run_dir = "runs/experiment";
  // Shared write-once artifacts (the pretrained detector); empty disables.
  std::filesystem::path cache;
};

struct ExperimentConfig {
  std::string name = "experiment";
  Arm arm = Arm::dt_mars;
  std::uint64_t master_seed = 0;
  synth::SynthConfig synth;
  DatasetsConfig datasets;
  det::DetectorConfig detector;
  det::TrainHyper detector_hyper;  // pretraining on raw sim
  det::TrainHyper finetune_hyper;  // on translated (or, for sim_only, raw) sim
  std::optional<GanConfig> gan;    // absent for sim_only
  EvalConfig eval;
  PathsConfig paths;
};

// Preset loss weights and detector schedule of each GAN arm:
//   cyclegan      lambda_detector 0,  detector frozen
//   retina_style  lambda_detector 10, detector frozen
//   dt_mars       lambda_detector 10, detector updated every step
// sim_only drops the GAN section.
void apply_arm(ExperimentConfig& cfg, Arm arm);

// Arm consistency and value ranges. With check_paths, every dataset path must
// either hold a manifest or be creatable, and the real split must be
// present or synthesizable for GAN arms.
void validate(const ExperimentConfig& cfg, bool check_paths = false);

// Stage seeds (synth splits, pretraining, GAN, fine-tuning, RANSAC) derived
// from master_seed, so one number pins a run.
void resolve_seeds(ExperimentConfig& cfg);
std::uint64_t gan_seed(const ExperimentConfig& cfg);

synth::SynthConfig split_synth_config(const ExperimentConfig& cfg, std::string_view split);

nlohmann::json to_json(const synth::SynthConfig& c);
synth::SynthConfig synth_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
// Unknown keys are rejected; missing keys keep their defaults.
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

ExperimentConfig parse_config_text(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const ExperimentConfig& c);

// Relative paths in a config file are taken relative to the file.
void resolve_relative_paths(ExperimentConfig& c, const std::filesystem::path& base);

}  // namespace cropsim::pipeline
