#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cropsim/data/dataset.hpp"
#include "cropsim/detect/model.hpp"
#include "cropsim/eval/metrics.hpp"
#include "cropsim/pipeline/config.hpp"
#include "cropsim/rows/rowgeom.hpp"
#include "json.hpp"

namespace cropsim::pipeline {

// Wraps generate_dataset.
data::DatasetManifest cmd_synth(const synth::SynthConfig& cfg, const std::filesystem::path& out_dir);

// Manifest of split "sim", "real" or "test", generated from the config when
// the split directory holds no manifest. The real split is opened image-only.
data::DatasetManifest ensure_split(const ExperimentConfig& cfg, std::string_view split);

struct RowFrame {
  std::string stem;
  rows::OffsetSignal truth;
  std::optional<rows::OffsetSignal> lsq, ransac;  // empty when the fit failed
};

struct RowFitSummary {
  rows::RowMetrics mae;  // over frames where the fit succeeded
  int fitted = 0;
  int failed = 0;
};

struct RowReport {
  std::vector<RowFrame> frames;
  RowFitSummary lsq, ransac;
};

struct RowOptions {
  det::DecodeParams decode;
  rows::RansacParams ransac;
};

// Fits both row estimators per frame and scores them against the manifest's
// row truth. With detector == nullptr the ground-truth boxes stand in for
// detections. Throws ValidationError when an entry has no row truth.
RowReport cmd_rows(det::TinyDetector* detector, const data::DatasetManifest& m,
                   const RowOptions& options, data::LabelAudit* audit = nullptr);

enum class Fitter { lsq, ransac };

// `frame_id theta_deg L_px` per frame; failed fits are skipped.
void write_offset_records(const std::filesystem::path& path, const RowReport& r, Fitter f);

nlohmann::json to_json(const RowReport& r);

struct ArmResult {
  Arm arm = Arm::sim_only;
  eval::DetectionMetrics metrics;
  std::optional<RowReport> rows;
  nlohmann::json record;  // the metrics record written to metrics.jsonl
  std::filesystem::path run_dir;
};

struct RunOptions {
  std::function<void(const std::string&)> log;  // progress lines
};

// Full stage sequence of one arm:
//   synth -> pretrain (raw sim) -> [gan -> translate] -> finetune -> eval
// The run directory receives config.json, run_record.json, metrics.jsonl,
// audit.log, loss_log.jsonl and the stage checkpoints. Stage failures are
// rethrown with the stage name prefixed.
ArmResult cmd_run_arm(const ExperimentConfig& cfg, const RunOptions& options = {});

// Runs several arms under <run_dir>/<arm>, sharing datasets and the cache.
std::vector<ArmResult> run_arms(const ExperimentConfig& base, std::span<const Arm> arms,
                                const RunOptions& options = {});

// Methods x (P, R, mAP50, mAP50-95).
std::string detection_table(std::span<const ArmResult> results);

struct NamedRowReport {
  std::string method;
  RowReport report;
};

// Methods x (RANSAC angle/dist MAE, line-fit angle/dist MAE).
std::string row_table(std::span<const NamedRowReport> rows);

}  // namespace cropsim::pipeline
