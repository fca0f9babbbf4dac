#include "cropsim/pipeline/run.hpp"

#include <algorithm>
#include <fstream>
#include <tuple>

#include <fmt/format.h>

#include "cropsim/detect/train.hpp"
#include "cropsim/error.hpp"
#include "cropsim/gan/train.hpp"
#include "cropsim/nn/tensor_image.hpp"
#include "cropsim/synth/generate.hpp"

namespace cropsim::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kTrainingStages[] = {"pretrain", "gan", "finetune"};

// Runs one stage, prefixing the stage name to any error while keeping its
// validation/runtime classification.
template <typename F>
auto stage(const char* name, const RunOptions& opt, F&& fn) {
  if (opt.log) opt.log(fmt::format("stage {}", name));
  try {
    return fn();
  } catch (const ValidationError& e) {
    throw ValidationError(fmt::format("stage {}: {}", name, e.what()));
  } catch (const std::exception& e) {
    throw Error(fmt::format("stage {}: {}", name, e.what()));
  }
}

fs::path split_path(const ExperimentConfig& cfg, std::string_view split) {
  if (split == "sim") return cfg.datasets.sim.path;
  if (split == "real") return cfg.datasets.real.path;
  if (split == "test") return cfg.datasets.test.path;
  throw ValidationError(fmt::format("unknown split '{}'", split));
}

json metrics_json(const eval::DetectionMetrics& m) {
  return {{"precision", m.precision},
          {"recall", m.recall},
          {"map50", m.map50},
          {"map50_95", m.map50_95},
          {"zero_gt_warning", m.zero_gt_warning}};
}

json summary_json(const RowFitSummary& s) {
  return {{"mae_theta_deg", s.mae.mae_theta_deg},
          {"mae_dist_px", s.mae.mae_dist_px},
          {"fitted", s.fitted},
          {"failed", s.failed}};
}

RowFitSummary summarize(const std::vector<RowFrame>& frames, Fitter f) {
  std::vector<rows::OffsetSignal> pred, truth;
  RowFitSummary s;
  for (const auto& fr : frames) {
    const auto& p = f == Fitter::lsq ? fr.lsq : fr.ransac;
    if (!p) {
      ++s.failed;
      continue;
    }
    pred.push_back(*p);
    truth.push_back(fr.truth);
  }
  s.fitted = static_cast<int>(pred.size());
  if (!pred.empty()) s.mae = rows::row_mae(pred, truth);
  return s;
}

std::string short_hash(const json& j) { return data::sha256_hex(j.dump()).substr(0, 16); }

// Writes to a temporary name, then renames, so readers never see a partial
// file.
void publish(const fs::path& from, const fs::path& to) {
  fs::create_directories(to.parent_path());
  const auto tmp = to.string() + ".tmp";
  fs::copy_file(from, tmp, fs::copy_options::overwrite_existing);
  fs::rename(tmp, to);
}

void write_json_file(const fs::path& p, const json& j, int indent) {
  std::ofstream out(p);
  if (!out) throw IoError(fmt::format("cannot write {}", p.string()));
  out << j.dump(indent) << '\n';
}

}  // namespace

data::DatasetManifest cmd_synth(const synth::SynthConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  return synth::generate_dataset(cfg, out_dir);
}

data::DatasetManifest ensure_split(const ExperimentConfig& cfg, std::string_view split) {
  const auto path = split_path(cfg, split);
  if (!fs::exists(path / "manifest.json")) cmd_synth(split_synth_config(cfg, split), path);
  if (split == "real") return data::open_unlabeled(path);
  return data::load_yolo_dataset(path);
}

RowReport cmd_rows(det::TinyDetector* detector, const data::DatasetManifest& m,
                   const RowOptions& options, data::LabelAudit* audit) {
  options.ransac.validate();
  if (m.entries.empty()) throw ValidationError("rows: empty dataset");
  for (const auto& e : m.entries)
    if (!e.row) throw ValidationError(fmt::format("rows: entry {} has no row ground truth", e.stem));

  std::vector<det::DetectionSet> dets;
  if (detector) {
    auto images = nn::u8_to_float(det::load_images_u8(m));
    dets = det::predict(*detector, images, options.decode);
  } else {
    auto gts = data::read_labels(m, data::LabelUse::evaluation, "rows-oracle", audit);
    for (const auto& boxes : gts) {
      det::DetectionSet s;
      s.image_dims = kTrainDims;
      for (const auto& b : boxes) s.detections.push_back({b, 1.0});
      dets.push_back(std::move(s));
    }
  }

  RowReport r;
  for (std::size_t i = 0; i < m.entries.size(); ++i) {
    const auto& e = m.entries[i];
    RowFrame fr;
    fr.stem = e.stem;
    fr.truth = {e.row->angle_deg, e.row->offset_px};
    const auto dims = dets[i].image_dims;
    const auto pts = rows::centers(dets[i]);
    try {
      fr.lsq = rows::offsets(rows::fit_line_lsq(pts, dims), dims);
    } catch (const Error&) {
    }
    try {
      fr.ransac = rows::offsets(rows::fit_line_ransac(pts, options.ransac, dims), dims);
    } catch (const Error&) {
    }
    r.frames.push_back(std::move(fr));
  }
  r.lsq = summarize(r.frames, Fitter::lsq);
  r.ransac = summarize(r.frames, Fitter::ransac);
  return r;
}

void write_offset_records(const fs::path& path, const RowReport& r, Fitter f) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  for (const auto& fr : r.frames) {
    const auto& p = f == Fitter::lsq ? fr.lsq : fr.ransac;
    if (p) out << rows::format_offset_record(fr.stem, *p) << '\n';
  }
}

json to_json(const RowReport& r) {
  return {{"lsq", summary_json(r.lsq)}, {"ransac", summary_json(r.ransac)}};
}

ArmResult cmd_run_arm(const ExperimentConfig& input, const RunOptions& options) {
  ExperimentConfig cfg = input;
  resolve_seeds(cfg);
  validate(cfg, true);

  const fs::path run_dir = cfg.paths.run_dir;
  fs::create_directories(run_dir);
  save_config(run_dir / "config.json", cfg);
  torch::set_num_threads(1);

  data::LabelAudit audit;
  const bool with_gan = cfg.arm != Arm::sim_only;

  auto [sim, test, real] = stage("synth", options, [&] {
    auto s = ensure_split(cfg, "sim");
    auto t = ensure_split(cfg, "test");
    std::optional<data::DatasetManifest> r;
    if (with_gan) r = ensure_split(cfg, "real");
    return std::tuple{s, t, r};
  });

  const auto sim_set = stage("load", options, [&] { return det::load_training_set(sim, "pretrain", &audit); });

  // Pretraining depends only on the sim data and the detector settings, so
  // arms sharing them share the checkpoint.
  const auto pretrain_key = short_hash(
      {{"sim", sim.content_hash}, {"detector", det::to_json(cfg.detector)}, {"hyper", det::to_json(cfg.detector_hyper)}});
  const fs::path pretrain_ckpt = run_dir / "detector_pretrain.ckpt";
  stage("pretrain", options, [&] {
    const fs::path cached = cfg.paths.cache.empty()
                                ? fs::path{}
                                : cfg.paths.cache / fmt::format("pretrain_{}.ckpt", pretrain_key);
    if (!cached.empty() && fs::exists(cached)) {
      if (options.log) options.log(fmt::format("reusing {}", cached.string()));
      fs::copy_file(cached, pretrain_ckpt, fs::copy_options::overwrite_existing);
      return 0;
    }
    torch::manual_seed(cfg.detector_hyper.seed);
    det::TinyDetector model(cfg.detector);
    det::TrainOptions topt;
    topt.checkpoint = pretrain_ckpt;
    topt.on_epoch = [&](int epoch, double loss, double lr) {
      if (options.log) options.log(fmt::format("pretrain epoch {} loss {:.5f} lr {:.5g}", epoch, loss, lr));
    };
    det::train_detector(model, sim_set, cfg.detector_hyper, topt);
    if (!cached.empty()) publish(pretrain_ckpt, cached);
    return 0;
  });
  auto detector = det::load_detector(pretrain_ckpt).model;

  json stages = json::array({"synth", "pretrain"});
  data::DatasetManifest finetune_data = sim;
  std::string real_hash;
  if (with_gan) {
    real_hash = real->content_hash;
    auto bundle = stage("gan", options, [&] {
      const auto& g = *cfg.gan;
      auto b = gan::GanBundle::create(g.generator, g.discriminator, g.weights, g.schedule, gan_seed(cfg));
      auto real_u8 = det::load_images_u8(*real);
      gan::GanTrainOptions gopt;
      gopt.checkpoint_dir = run_dir / "gan";
      gopt.loss_log = run_dir / "loss_log.jsonl";
      gopt.detector_hyper = cfg.detector_hyper;
      const auto steps = b.schedule.epochs == 0 ? 0 : std::max(sim_set.size(), real_u8.size(0));
      gopt.on_step = [&](const gan::StepRecord& r) {
        if (options.log && steps > 0 && (r.step + 1) % steps == 0)
          options.log(fmt::format("gan epoch {} total {:.5f} d_r {:.5f} d_s {:.5f}", r.epoch,
                                  r.generator.total, r.d_r, r.d_s));
      };
      auto d = detector;
      gan::train_dtmars(b, &d, sim_set, real_u8, gopt);
      det::save_detector(run_dir / "detector_gan.ckpt", detector, cfg.detector_hyper, sim.content_hash);
      gan::save_gan(run_dir / "gan.ckpt", b);
      return b;
    });
    finetune_data = stage("translate", options, [&] {
      return gan::translate_dataset(bundle.G_r, sim, run_dir / "translated");
    });
    stages.push_back("gan");
    stages.push_back("translate");
  }

  stage("finetune", options, [&] {
    auto set = det::load_training_set(finetune_data, "finetune", &audit);
    det::TrainOptions topt;
    topt.checkpoint = run_dir / "detector_final.ckpt";
    topt.on_epoch = [&](int epoch, double loss, double lr) {
      if (options.log) options.log(fmt::format("finetune epoch {} loss {:.5f} lr {:.5g}", epoch, loss, lr));
    };
    det::train_detector(detector, set, cfg.finetune_hyper, topt);
    return 0;
  });
  stages.push_back("finetune");

  ArmResult result;
  result.arm = cfg.arm;
  result.run_dir = run_dir;
  const det::DecodeParams decode{cfg.eval.conf_thresh, cfg.eval.nms_iou,
                                  static_cast<std::size_t>(cfg.eval.max_detections)};
  stage("eval", options, [&] {
    result.metrics = det::evaluate_detector(detector, test, decode, {cfg.eval.conf_thresh}, &audit);
    const bool has_rows =
        std::all_of(test.entries.begin(), test.entries.end(), [](const auto& e) { return e.row.has_value(); });
    if (has_rows) {
      result.rows = cmd_rows(&detector, test, {decode, cfg.eval.ransac}, &audit);
      write_offset_records(run_dir / "offsets_lsq.txt", *result.rows, Fitter::lsq);
      write_offset_records(run_dir / "offsets_ransac.txt", *result.rows, Fitter::ransac);
    }
    return 0;
  });
  stages.push_back("eval");

  bool real_labels_in_training = false;
  for (const char* s : kTrainingStages) real_labels_in_training |= audit.any_real_label_read_in(s);
  if (real_labels_in_training)
    throw data::ZeroShotViolation("audit: a real-domain label was read during training");
  audit.write(run_dir / "audit.log");

  json record{{"method", display_name(cfg.arm)},
              {"arm", to_string(cfg.arm)},
              {"name", cfg.name},
              {"seed", cfg.master_seed},
              {"dataset_hash", test.content_hash},
              {"train_hash", finetune_data.content_hash},
              {"metrics", metrics_json(result.metrics)},
              {"conf_thresh", cfg.eval.conf_thresh},
              {"nms_iou", cfg.eval.nms_iou},
              {"ap_interpolation", "101-point"}};
  if (result.rows) record["rows"] = to_json(*result.rows);
  result.record = record;
  {
    std::ofstream out(run_dir / "metrics.jsonl", std::ios::trunc);
    if (!out) throw IoError(fmt::format("cannot write {}", (run_dir / "metrics.jsonl").string()));
    out << record.dump() << '\n';
  }

  json seeds{{"master", cfg.master_seed},
             {"sim", split_synth_config(cfg, "sim").master_seed},
             {"test", split_synth_config(cfg, "test").master_seed},
             {"pretrain", cfg.detector_hyper.seed},
             {"finetune", cfg.finetune_hyper.seed},
             {"ransac", cfg.eval.ransac.seed}};
  if (with_gan) {
    seeds["real"] = split_synth_config(cfg, "real").master_seed;
    seeds["gan"] = gan_seed(cfg);
  }
  json hashes{{"sim", sim.content_hash}, {"test", test.content_hash}};
  if (with_gan) {
    hashes["real"] = real_hash;
    hashes["translated"] = finetune_data.content_hash;
  }
  json checkpoints = json::array({"detector_pretrain.ckpt", "detector_final.ckpt"});
  if (with_gan) {
    checkpoints.push_back("gan.ckpt");
    checkpoints.push_back("detector_gan.ckpt");
  }
  write_json_file(run_dir / "run_record.json",
                  {{"config", to_json(cfg)},
                   {"seeds", seeds},
                   {"dataset_hashes", hashes},
                   {"pretrain_key", pretrain_key},
                   {"stages", stages},
                   {"checkpoints", checkpoints},
                   {"audit", {{"label_reads", audit.records().size()}, {"real_labels_in_training", false}}},
                   {"metrics", record}},
                  2);
  return result;
}

std::vector<ArmResult> run_arms(const ExperimentConfig& base, std::span<const Arm> arms,
                                const RunOptions& options) {
  std::vector<ArmResult> out;
  for (Arm a : arms) {
    ExperimentConfig cfg = base;
    apply_arm(cfg, a);
    cfg.paths.run_dir = base.paths.run_dir / std::string(to_string(a));
    if (options.log) options.log(fmt::format("arm {}", to_string(a)));
    out.push_back(cmd_run_arm(cfg, options));
  }
  return out;
}

std::string detection_table(std::span<const ArmResult> results) {
  std::string s = fmt::format("{:<20}{:>8}{:>8}{:>8}{:>10}\n", "Methods", "P", "R", "mAP50", "mAP50-95");
  for (const auto& r : results)
    s += fmt::format("{:<20}{:>8.3f}{:>8.3f}{:>8.3f}{:>10.3f}\n", display_name(r.arm), r.metrics.precision,
                     r.metrics.recall, r.metrics.map50, r.metrics.map50_95);
  return s;
}

std::string row_table(std::span<const NamedRowReport> rows) {
  std::string s = fmt::format("{:<20}{:^24}{:^24}\n", "Method", "MAE with RANSAC", "MAE with Linefit");
  s += fmt::format("{:<20}{:>12}{:>12}{:>12}{:>12}\n", "", "Angle(deg)", "Dist(px)", "Angle(deg)", "Dist(px)");
  for (const auto& r : rows) {
    auto cells = [](const RowFitSummary& f) {
      return f.fitted == 0 ? fmt::format("{:>12}{:>12}", "n/a", "n/a")
                           : fmt::format("{:>12.2f}{:>12.2f}", f.mae.mae_theta_deg, f.mae.mae_dist_px);
    };
    s += fmt::format("{:<20}{}{}", r.method, cells(r.report.ransac), cells(r.report.lsq));
    if (r.report.ransac.failed > 0 || r.report.lsq.failed > 0)
      s += fmt::format("  (failed fits: ransac {}, linefit {})", r.report.ransac.failed, r.report.lsq.failed);
    s += '\n';
  }
  return s;
}

}  // namespace cropsim::pipeline
