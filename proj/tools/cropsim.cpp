// Command-line front end: dataset synthesis, training, translation,
// inference, evaluation and full experiment arms.

#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>

#include "CLI11.hpp"
#include "cropsim/data/dataset.hpp"
#include "cropsim/detect/train.hpp"
#include "cropsim/error.hpp"
#include "cropsim/gan/train.hpp"
#include "cropsim/nn/tensor_image.hpp"
#include "cropsim/pipeline/config.hpp"
#include "cropsim/pipeline/run.hpp"

namespace fs = std::filesystem;
using namespace cropsim;

namespace {

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw IoError(fmt::format("cannot open {}", p.string()));
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(fmt::format("{}: {}", p.string(), e.what()));
  }
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

det::DecodeParams decode_params(double conf, double nms) {
  det::DecodeParams d;
  d.conf_thresh = conf;
  d.nms_iou = nms;
  return d;
}

void print_metrics(const eval::DetectionMetrics& m) {
  std::cout << fmt::format("P {:.4f}  R {:.4f}  mAP50 {:.4f}  mAP50-95 {:.4f}{}\n", m.precision, m.recall,
                           m.map50, m.map50_95, m.zero_gt_warning ? "  (warning: no ground truth)" : "");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cropsim: simulated crop data, sim-to-real translation and crop detection"};
  app.require_subcommand(1);
  torch::set_num_threads(1);

  // synth
  auto* synth_cmd = app.add_subcommand("synth", "Generate a YOLO-format synthetic dataset");
  std::string synth_config, synth_out, synth_domain;
  int synth_n = -1;
  std::int64_t synth_seed = -1;
  bool synth_rows = false;
  std::vector<std::string> synth_species, synth_stages;
  synth_cmd->add_option("-c,--config", synth_config, "SynthConfig JSON file");
  synth_cmd->add_option("-o,--out", synth_out, "Output directory")->required();
  synth_cmd->add_option("-n,--images", synth_n, "Number of images");
  synth_cmd->add_option("--seed", synth_seed, "Master seed");
  synth_cmd->add_option("--domain", synth_domain, "sim or real")->check(CLI::IsMember({"sim", "real"}));
  synth_cmd->add_flag("--rows", synth_rows, "Place crops along a row line");
  synth_cmd->add_option("--species", synth_species, "Species filter");
  synth_cmd->add_option("--stages", synth_stages, "Growth-stage filter");

  // train-detector
  auto* td_cmd = app.add_subcommand("train-detector", "Train the detector on a labeled sim dataset");
  std::string td_data, td_out, td_init, td_hyper;
  det::TrainHyper td;
  td_cmd->add_option("-d,--data", td_data, "Dataset directory")->required();
  td_cmd->add_option("-o,--out", td_out, "Checkpoint path")->required();
  td_cmd->add_option("--init", td_init, "Start from this checkpoint");
  td_cmd->add_option("--hyper", td_hyper, "TrainHyper JSON file");
  td_cmd->add_option("--epochs", td.epochs);
  td_cmd->add_option("--batch", td.batch_size);
  td_cmd->add_option("--lr", td.learning_rate);
  td_cmd->add_option("--seed", td.seed);

  // train-gan
  auto* tg_cmd = app.add_subcommand("train-gan", "Train the translation GAN, optionally jointly with a detector");
  std::string tg_sim, tg_real, tg_detector, tg_out;
  pipeline::GanConfig tg;
  std::uint64_t tg_seed = 0;
  tg_cmd->add_option("--sim", tg_sim, "Labeled sim dataset")->required();
  tg_cmd->add_option("--real", tg_real, "Unlabeled real dataset")->required();
  tg_cmd->add_option("--detector", tg_detector, "Detector checkpoint");
  tg_cmd->add_option("-o,--out", tg_out, "Output directory")->required();
  tg_cmd->add_option("--epochs", tg.schedule.epochs);
  tg_cmd->add_option("--lambda-gan", tg.weights.gan);
  tg_cmd->add_option("--lambda-cyc", tg.weights.cyc);
  tg_cmd->add_option("--lambda-identity", tg.weights.identity);
  tg_cmd->add_option("--lambda-detector", tg.weights.detector);
  tg_cmd->add_option("--detector-period", tg.schedule.detector_update_period, "0 freezes the detector");
  tg_cmd->add_option("--seed", tg_seed);

  // translate
  auto* tr_cmd = app.add_subcommand("translate", "Translate a sim dataset with the sim-to-real generator");
  std::string tr_gan, tr_data, tr_out;
  tr_cmd->add_option("--gan", tr_gan, "GAN checkpoint")->required();
  tr_cmd->add_option("-d,--data", tr_data, "Source dataset")->required();
  tr_cmd->add_option("-o,--out", tr_out, "Output directory")->required();

  // detect
  auto* dt_cmd = app.add_subcommand("detect", "Run the detector on images");
  std::string dt_model, dt_data, dt_image;
  double dt_conf = 0.25, dt_nms = 0.5;
  dt_cmd->add_option("-m,--model", dt_model, "Detector checkpoint")->required();
  auto* dt_src = dt_cmd->add_option_group("source");
  dt_src->add_option("-d,--data", dt_data, "Dataset directory");
  dt_src->add_option("-i,--image", dt_image, "Single image");
  dt_src->require_option(1);
  dt_cmd->add_option("--conf", dt_conf);
  dt_cmd->add_option("--nms", dt_nms);

  // rows
  auto* rw_cmd = app.add_subcommand("rows", "Crop-row offsets and MAE on a row dataset");
  std::string rw_model, rw_data, rw_fitter = "both", rw_offsets;
  bool rw_oracle = false;
  double rw_conf = 0.25, rw_nms = 0.5;
  rows::RansacParams rw_ransac;
  rw_cmd->add_option("-d,--data", rw_data, "Dataset with row ground truth")->required();
  auto* rw_src = rw_cmd->add_option_group("source");
  rw_src->add_option("-m,--model", rw_model, "Detector checkpoint");
  rw_src->add_flag("--oracle", rw_oracle, "Use ground-truth boxes as detections");
  rw_src->require_option(1);
  rw_cmd->add_option("--fitter", rw_fitter)->check(CLI::IsMember({"lsq", "ransac", "both"}));
  rw_cmd->add_option("--offsets", rw_offsets, "Write per-frame offset records here");
  rw_cmd->add_option("--conf", rw_conf);
  rw_cmd->add_option("--nms", rw_nms);
  rw_cmd->add_option("--ransac-iterations", rw_ransac.iterations);
  rw_cmd->add_option("--ransac-threshold", rw_ransac.inlier_threshold);
  rw_cmd->add_option("--ransac-seed", rw_ransac.seed);

  // eval
  auto* ev_cmd = app.add_subcommand("eval", "Score a detector on a labeled dataset");
  std::string ev_model, ev_data;
  double ev_conf = 0.25, ev_nms = 0.5;
  bool ev_json = false;
  ev_cmd->add_option("-m,--model", ev_model)->required();
  ev_cmd->add_option("-d,--data", ev_data)->required();
  ev_cmd->add_option("--conf", ev_conf);
  ev_cmd->add_option("--nms", ev_nms);
  ev_cmd->add_flag("--json", ev_json, "Print a JSON record");

  // run-arm
  auto* ra_cmd = app.add_subcommand("run-arm", "Run one or more experiment arms end to end");
  std::string ra_config, ra_run_dir;
  std::vector<std::string> ra_arms;
  std::int64_t ra_seed = -1;
  ra_cmd->add_option("-c,--config", ra_config, "Experiment config JSON")->required();
  ra_cmd->add_option("--arm", ra_arms, "sim_only, cyclegan, retina_style, dt_mars or all");
  ra_cmd->add_option("--seed", ra_seed, "Override master_seed");
  ra_cmd->add_option("--run-dir", ra_run_dir, "Override paths.run_dir");

  // validate
  auto* va_cmd = app.add_subcommand("validate", "Check a dataset directory or an experiment config");
  std::string va_data, va_config;
  auto* va_src = va_cmd->add_option_group("target");
  va_src->add_option("-d,--data", va_data);
  va_src->add_option("-c,--config", va_config);
  va_src->require_option(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*synth_cmd) {
      synth::SynthConfig cfg = synth_rows ? synth::row_scene_defaults() : synth::SynthConfig{};
      if (!synth_config.empty()) cfg = pipeline::synth_config_from_json(read_json(synth_config));
      if (synth_n >= 0) cfg.n_images = synth_n;
      if (synth_seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(synth_seed);
      if (!synth_domain.empty()) cfg.domain = *synth::parse_domain(synth_domain);
      if (synth_rows) cfg.row_mode = true;
      for (const auto& s : synth_species) {
        auto v = synth::parse_species(s);
        if (!v) throw ValidationError(fmt::format("unknown species '{}'", s));
        cfg.assets.species.push_back(*v);
      }
      for (const auto& s : synth_stages) {
        auto v = synth::parse_growth_stage(s);
        if (!v) throw ValidationError(fmt::format("unknown growth stage '{}'", s));
        cfg.assets.stages.push_back(*v);
      }
      auto m = pipeline::cmd_synth(cfg, synth_out);
      std::cout << fmt::format("{} images written to {}\ncontent hash {}\n", m.entries.size(), synth_out,
                               m.content_hash);
    } else if (*td_cmd) {
      det::TrainHyper h = td_hyper.empty() ? det::TrainHyper{} : det::train_hyper_from_json(read_json(td_hyper));
      if (td_cmd->count("--epochs")) h.epochs = td.epochs;
      if (td_cmd->count("--batch")) h.batch_size = td.batch_size;
      if (td_cmd->count("--lr")) h.learning_rate = td.learning_rate;
      if (td_cmd->count("--seed")) h.seed = td.seed;
      h.validate();
      auto m = data::load_yolo_dataset(td_data);
      data::LabelAudit audit;
      auto set = det::load_training_set(m, "train-detector", &audit);
      torch::manual_seed(h.seed);
      det::TinyDetector model = td_init.empty() ? det::TinyDetector() : det::load_detector(td_init).model;
      det::TrainOptions opt;
      opt.checkpoint = fs::path(td_out);
      opt.on_epoch = [](int e, double loss, double lr) {
        log_line(fmt::format("epoch {} loss {:.5f} lr {:.5g}", e, loss, lr));
      };
      det::train_detector(model, set, h, opt);
      std::cout << "checkpoint " << td_out << '\n';
    } else if (*tg_cmd) {
      auto sim = data::load_yolo_dataset(tg_sim);
      auto real = data::open_unlabeled(tg_real);
      data::LabelAudit audit;
      auto sim_set = det::load_training_set(sim, "train-gan", &audit);
      det::TinyDetector detector{nullptr};
      det::TrainHyper dh;
      if (!tg_detector.empty()) {
        auto loaded = det::load_detector(tg_detector);
        detector = loaded.model;
        dh = loaded.hyper;
      }
      auto bundle = gan::GanBundle::create(tg.generator, tg.discriminator, tg.weights, tg.schedule, tg_seed);
      gan::GanTrainOptions opt;
      opt.checkpoint_dir = fs::path(tg_out);
      opt.loss_log = fs::path(tg_out) / "loss_log.jsonl";
      opt.detector_hyper = dh;
      gan::train_dtmars(bundle, detector ? &detector : nullptr, sim_set, det::load_images_u8(real), opt);
      if (detector) det::save_detector(fs::path(tg_out) / "detector.ckpt", detector, dh, sim.content_hash);
      std::cout << "checkpoint " << (fs::path(tg_out) / "gan.ckpt").string() << '\n';
    } else if (*tr_cmd) {
      auto g = gan::load_sim_to_real(tr_gan);
      auto m = gan::translate_dataset(g, data::load_yolo_dataset(tr_data), tr_out);
      std::cout << fmt::format("{} images translated into {}\n", m.entries.size(), tr_out);
    } else if (*dt_cmd) {
      auto model = det::load_detector(dt_model).model;
      const auto params = decode_params(dt_conf, dt_nms);
      std::vector<std::string> names;
      torch::Tensor images;
      if (!dt_image.empty()) {
        cv::Mat img = cv::imread(dt_image, cv::IMREAD_COLOR);
        if (img.empty()) throw IoError(fmt::format("cannot read {}", dt_image));
        images = nn::image_to_tensor(img).unsqueeze(0);
        names.push_back(fs::path(dt_image).stem().string());
      } else {
        auto m = data::open_unlabeled(dt_data);
        images = nn::u8_to_float(det::load_images_u8(m));
        for (const auto& e : m.entries) names.push_back(e.stem);
      }
      auto dets = det::predict(model, images, params);
      for (std::size_t i = 0; i < dets.size(); ++i)
        for (const auto& d : dets[i].detections)
          std::cout << fmt::format("{} {:.6f} {:.6f} {:.6f} {:.6f} {:.6f}\n", names[i], d.confidence, d.box.cx,
                                   d.box.cy, d.box.w, d.box.h);
    } else if (*rw_cmd) {
      auto m = data::load_yolo_dataset(rw_data);
      pipeline::RowOptions opt{decode_params(rw_conf, rw_nms), rw_ransac};
      det::TinyDetector model{nullptr};
      if (!rw_oracle) model = det::load_detector(rw_model).model;
      auto report = pipeline::cmd_rows(rw_oracle ? nullptr : &model, m, opt);
      if (!rw_offsets.empty()) {
        const auto f = rw_fitter == "ransac" ? pipeline::Fitter::ransac : pipeline::Fitter::lsq;
        pipeline::write_offset_records(rw_offsets, report, f);
      }
      if (rw_fitter == "both") {
        std::vector<pipeline::NamedRowReport> rowsv{{rw_oracle ? "oracle" : fs::path(rw_model).stem().string(), report}};
        std::cout << pipeline::row_table(rowsv);
      } else {
        const auto& s = rw_fitter == "lsq" ? report.lsq : report.ransac;
        std::cout << fmt::format("{}: MAE angle {:.4f} deg, dist {:.4f} px over {} frames ({} failed)\n", rw_fitter,
                                 s.mae.mae_theta_deg, s.mae.mae_dist_px, s.fitted, s.failed);
      }
    } else if (*ev_cmd) {
      auto model = det::load_detector(ev_model).model;
      auto m = data::load_yolo_dataset(ev_data);
      auto metrics = det::evaluate_detector(model, m, decode_params(ev_conf, ev_nms), {ev_conf});
      if (ev_json) {
        std::cout << nlohmann::json{{"precision", metrics.precision},
                                    {"recall", metrics.recall},
                                    {"map50", metrics.map50},
                                    {"map50_95", metrics.map50_95},
                                    {"zero_gt_warning", metrics.zero_gt_warning},
                                    {"dataset_hash", m.content_hash}}
                         .dump()
                  << '\n';
      } else {
        print_metrics(metrics);
      }
    } else if (*ra_cmd) {
      auto cfg = pipeline::load_config(ra_config);
      if (ra_seed >= 0) cfg.master_seed = static_cast<std::uint64_t>(ra_seed);
      if (!ra_run_dir.empty()) cfg.paths.run_dir = ra_run_dir;
      std::vector<pipeline::Arm> arms;
      for (const auto& a : ra_arms) {
        if (a == "all") {
          arms = {pipeline::Arm::sim_only, pipeline::Arm::cyclegan, pipeline::Arm::retina_style,
                  pipeline::Arm::dt_mars};
          continue;
        }
        auto v = pipeline::parse_arm(a);
        if (!v) throw ValidationError(fmt::format("unknown arm '{}'", a));
        arms.push_back(*v);
      }
      pipeline::RunOptions opt{log_line};
      std::vector<pipeline::ArmResult> results;
      if (arms.empty()) {
        results.push_back(pipeline::cmd_run_arm(cfg, opt));
      } else {
        results = pipeline::run_arms(cfg, arms, opt);
      }
      const auto table = pipeline::detection_table(results);
      std::cout << table;
      std::vector<pipeline::NamedRowReport> row_reports;
      for (const auto& r : results)
        if (r.rows) row_reports.push_back({std::string(pipeline::display_name(r.arm)), *r.rows});
      if (!row_reports.empty()) std::cout << '\n' << pipeline::row_table(row_reports);
      if (results.size() > 1) {
        std::ofstream(cfg.paths.run_dir / "table_detection.txt") << table;
        if (!row_reports.empty()) std::ofstream(cfg.paths.run_dir / "table_rows.txt") << pipeline::row_table(row_reports);
      }
    } else if (*va_cmd) {
      if (!va_config.empty()) {
        auto cfg = pipeline::load_config(va_config);
        pipeline::validate(cfg, true);
        std::cout << "config ok\n";
        return 0;
      }
      auto report = data::validate_dataset(va_data);
      for (const auto& f : report.findings) {
        if (f.line > 0)
          std::cout << fmt::format("{}:{}: {}: {}\n", f.file, f.line, f.kind, f.message);
        else
          std::cout << fmt::format("{}: {}: {}\n", f.file, f.kind, f.message);
      }
      if (!report.ok()) {
        std::cout << fmt::format("{} finding(s)\n", report.findings.size());
        return 1;
      }
      std::cout << "dataset ok\n";
    }
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
