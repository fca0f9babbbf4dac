#include "cropsim/pipeline/config.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cropsim/error.hpp"
#include "cropsim/seed.hpp"

namespace cropsim::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Stream salts for derive_seed.
constexpr std::uint64_t kSaltSplit = 0x73706c6974ULL;      // "split"
constexpr std::uint64_t kSaltPretrain = 0x707265ULL;       // "pre"
constexpr std::uint64_t kSaltFinetune = 0x66696eULL;       // "fin"
constexpr std::uint64_t kSaltGan = 0x67616eULL;            // "gan"
constexpr std::uint64_t kSaltRansac = 0x72616eULL;         // "ran"

void check_keys(const json& j, const json& reference, std::string_view where) {
  if (!j.is_object()) throw ValidationError(fmt::format("config: '{}' must be an object", where));
  for (const auto& [key, value] : j.items()) {
    if (!reference.contains(key))
      throw ValidationError(fmt::format("config: unknown key '{}' in '{}'", key, where));
  }
}

json range_json(synth::Range r) { return json::array({r.lo, r.hi}); }
json range_json(synth::IntRange r) { return json::array({r.lo, r.hi}); }

template <typename R>
R range_from(const json& j, R fallback, std::string_view key) {
  if (!j.contains(key)) return fallback;
  const auto& v = j.at(key);
  if (!v.is_array() || v.size() != 2)
    throw ValidationError(fmt::format("config: '{}' must be a [lo, hi] pair", key));
  R r;
  r.lo = v[0].get<decltype(r.lo)>();
  r.hi = v[1].get<decltype(r.hi)>();
  return r;
}

json split_json(const SplitConfig& s) { return {{"path", s.path.string()}, {"images", s.images}}; }

SplitConfig split_from(const json& j, SplitConfig fallback, std::string_view where) {
  check_keys(j, split_json(fallback), where);
  fallback.path = j.value("path", fallback.path.string());
  fallback.images = j.value("images", fallback.images);
  return fallback;
}

json ransac_json(const rows::RansacParams& p) {
  return {{"iterations", p.iterations},
          {"inlier_threshold", p.inlier_threshold},
          {"min_inliers", p.min_inliers},
          {"seed", p.seed}};
}

json eval_json(const EvalConfig& e) {
  return {{"conf_thresh", e.conf_thresh},
          {"nms_iou", e.nms_iou},
          {"max_detections", e.max_detections},
          {"ransac", ransac_json(e.ransac)}};
}

json gan_json(const GanConfig& g) {
  return {{"weights", gan::to_json(g.weights)},
          {"schedule", gan::to_json(g.schedule)},
          {"generator", gan::to_json(g.generator)},
          {"discriminator", gan::to_json(g.discriminator)}};
}

bool can_create(const fs::path& p) {
  std::error_code ec;
  for (auto q = fs::absolute(p, ec); !q.empty(); q = q.parent_path()) {
    if (fs::exists(q, ec)) return fs::is_directory(q, ec);
    if (q == q.parent_path()) break;
  }
  return false;
}

void check_split_path(const SplitConfig& s, std::string_view name) {
  if (s.path.empty()) throw ValidationError(fmt::format("config: datasets.{}.path is empty", name));
  if (fs::exists(s.path / "manifest.json")) return;
  if (s.images < 1)
    throw ValidationError(fmt::format("config: datasets.{} has no manifest at {} and images < 1",
                                      name, s.path.string()));
  if (!can_create(s.path))
    throw ValidationError(fmt::format("config: datasets.{} path {} cannot be created", name,
                                      s.path.string()));
}

}  // namespace

std::string_view to_string(Arm a) {
  switch (a) {
    case Arm::sim_only: return "sim_only";
    case Arm::cyclegan: return "cyclegan";
    case Arm::retina_style: return "retina_style";
    case Arm::dt_mars: return "dt_mars";
  }
  return "?";
}

std::optional<Arm> parse_arm(std::string_view s) {
  for (Arm a : {Arm::sim_only, Arm::cyclegan, Arm::retina_style, Arm::dt_mars})
    if (s == to_string(a)) return a;
  return std::nullopt;
}

std::string_view display_name(Arm a) {
  switch (a) {
    case Arm::sim_only: return "Sim-Only";
    case Arm::cyclegan: return "CycleGAN";
    case Arm::retina_style: return "RetinaGAN";
    case Arm::dt_mars: return "DT/MARS-CycleGAN";
  }
  return "?";
}

void apply_arm(ExperimentConfig& cfg, Arm arm) {
  cfg.arm = arm;
  if (arm == Arm::sim_only) {
    cfg.gan.reset();
    return;
  }
  if (!cfg.gan) cfg.gan = GanConfig{};
  auto& g = *cfg.gan;
  const double lambda_det = g.weights.detector > 0 ? g.weights.detector : gan::LossWeights{}.detector;
  switch (arm) {
    case Arm::cyclegan:
      g.weights.detector = 0;
      g.schedule.detector_update_period = 0;
      break;
    case Arm::retina_style:
      g.weights.detector = lambda_det;
      g.schedule.detector_update_period = 0;
      break;
    case Arm::dt_mars:
      g.weights.detector = lambda_det;
      if (g.schedule.detector_update_period == 0) g.schedule.detector_update_period = 1;
      break;
    case Arm::sim_only:
      break;
  }
}

void validate(const ExperimentConfig& cfg, bool check_paths) {
  if (cfg.name.empty()) throw ValidationError("config: name is empty");
  cfg.synth.validate();
  cfg.detector_hyper.validate();
  cfg.finetune_hyper.validate();
  if (cfg.detector.grid < 1 || cfg.detector.base_width < 1)
    throw ValidationError("config: detector grid and base_width must be >= 1");
  if (cfg.detector.grid * 16 != kTrainDims.width || kTrainDims.width != kTrainDims.height)
    throw ValidationError(fmt::format("config: detector input {0}x{0} does not match image size {1}x{2}",
                                      cfg.detector.grid * 16, kTrainDims.width, kTrainDims.height));
  if (!(cfg.eval.conf_thresh >= 0 && cfg.eval.conf_thresh <= 1))
    throw ValidationError("config: eval.conf_thresh must lie in [0,1]");
  if (!(cfg.eval.nms_iou >= 0 && cfg.eval.nms_iou <= 1))
    throw ValidationError("config: eval.nms_iou must lie in [0,1]");
  if (cfg.eval.max_detections < 1) throw ValidationError("config: eval.max_detections must be >= 1");
  cfg.eval.ransac.validate();

  if (cfg.arm == Arm::sim_only) {
    if (cfg.gan) throw ValidationError("config: arm sim_only takes no gan section");
  } else {
    if (!cfg.gan) throw ValidationError(fmt::format("config: arm {} needs a gan section", to_string(cfg.arm)));
    const auto& g = *cfg.gan;
    g.weights.validate();
    g.schedule.validate();
    const bool frozen = g.schedule.detector_update_period == 0;
    switch (cfg.arm) {
      case Arm::cyclegan:
        if (g.weights.detector != 0 || !frozen)
          throw ValidationError("config: arm cyclegan needs lambda_detector 0 and a frozen detector");
        break;
      case Arm::retina_style:
        if (g.weights.detector <= 0 || !frozen)
          throw ValidationError(
              "config: arm retina_style needs lambda_detector > 0 and a frozen detector");
        break;
      case Arm::dt_mars:
        if (g.weights.detector <= 0 || frozen)
          throw ValidationError(
              "config: arm dt_mars needs lambda_detector > 0 and detector updates");
        break;
      case Arm::sim_only:
        break;
    }
  }

  if (check_paths) {
    check_split_path(cfg.datasets.sim, "sim");
    check_split_path(cfg.datasets.test, "test");
    if (cfg.arm != Arm::sim_only) check_split_path(cfg.datasets.real, "real");
    if (cfg.paths.run_dir.empty()) throw ValidationError("config: paths.run_dir is empty");
    if (!can_create(cfg.paths.run_dir))
      throw ValidationError(fmt::format("config: run_dir {} cannot be created", cfg.paths.run_dir.string()));
    if (!cfg.paths.cache.empty() && !can_create(cfg.paths.cache))
      throw ValidationError(fmt::format("config: cache {} cannot be created", cfg.paths.cache.string()));
  }
}

void resolve_seeds(ExperimentConfig& cfg) {
  const auto m = cfg.master_seed;
  cfg.detector_hyper.seed = derive_seed(m, 0, kSaltPretrain);
  cfg.finetune_hyper.seed = derive_seed(m, 0, kSaltFinetune);
  cfg.eval.ransac.seed = derive_seed(m, 0, kSaltRansac);
  cfg.synth.master_seed = m;
}

synth::SynthConfig split_synth_config(const ExperimentConfig& cfg, std::string_view split) {
  auto s = cfg.synth;
  std::uint64_t index = 0;
  if (split == "sim") {
    s.domain = synth::Domain::sim;
    s.n_images = cfg.datasets.sim.images;
    index = 0;
  } else if (split == "real") {
    s.domain = synth::Domain::real;
    s.n_images = cfg.datasets.real.images;
    index = 1;
  } else if (split == "test") {
    s.domain = synth::Domain::real;
    s.n_images = cfg.datasets.test.images;
    index = 2;
  } else {
    throw ValidationError(fmt::format("unknown split '{}'", split));
  }
  s.master_seed = derive_seed(cfg.master_seed, index, kSaltSplit);
  return s;
}

std::uint64_t gan_seed(const ExperimentConfig& cfg) { return derive_seed(cfg.master_seed, 0, kSaltGan); }

json to_json(const synth::SynthConfig& c) {
  json species = json::array(), stages = json::array();
  for (auto s : c.assets.species) species.push_back(synth::to_string(s));
  for (auto g : c.assets.stages) stages.push_back(synth::to_string(g));
  return {{"backgrounds", c.backgrounds},
          {"procedural_backgrounds", c.procedural_backgrounds},
          {"assets_dir", c.assets_dir},
          {"species", species},
          {"growth_stages", stages},
          {"asset_variants", c.asset_variants},
          {"n_images", c.n_images},
          {"objects_per_image", range_json(c.objects_per_image)},
          {"scale_jitter", range_json(c.scale_jitter)},
          {"rotation_deg", range_json(c.rotation_deg)},
          {"overlap_max_iou", c.overlap_max_iou},
          {"placement_attempts", c.placement_attempts},
          {"row_mode", c.row_mode},
          {"row_angle_deg", range_json(c.row_angle_deg)},
          {"row_offset_px", range_json(c.row_offset_px)},
          {"row_jitter_px", c.row_jitter_px},
          {"domain", synth::to_string(c.domain)},
          {"master_seed", c.master_seed}};
}

synth::SynthConfig synth_config_from_json(const json& j) {
  synth::SynthConfig c;
  check_keys(j, to_json(c), "synth");
  c.backgrounds = j.value("backgrounds", c.backgrounds);
  c.procedural_backgrounds = j.value("procedural_backgrounds", c.procedural_backgrounds);
  c.assets_dir = j.value("assets_dir", c.assets_dir);
  for (const auto& s : j.value("species", json::array())) {
    auto v = synth::parse_species(s.get<std::string>());
    if (!v) throw ValidationError(fmt::format("config: unknown species '{}'", s.get<std::string>()));
    c.assets.species.push_back(*v);
  }
  for (const auto& s : j.value("growth_stages", json::array())) {
    auto v = synth::parse_growth_stage(s.get<std::string>());
    if (!v) throw ValidationError(fmt::format("config: unknown growth stage '{}'", s.get<std::string>()));
    c.assets.stages.push_back(*v);
  }
  c.asset_variants = j.value("asset_variants", c.asset_variants);
  c.n_images = j.value("n_images", c.n_images);
  c.objects_per_image = range_from(j, c.objects_per_image, "objects_per_image");
  c.scale_jitter = range_from(j, c.scale_jitter, "scale_jitter");
  c.rotation_deg = range_from(j, c.rotation_deg, "rotation_deg");
  c.overlap_max_iou = j.value("overlap_max_iou", c.overlap_max_iou);
  c.placement_attempts = j.value("placement_attempts", c.placement_attempts);
  c.row_mode = j.value("row_mode", c.row_mode);
  c.row_angle_deg = range_from(j, c.row_angle_deg, "row_angle_deg");
  c.row_offset_px = range_from(j, c.row_offset_px, "row_offset_px");
  c.row_jitter_px = j.value("row_jitter_px", c.row_jitter_px);
  if (j.contains("domain")) {
    auto d = synth::parse_domain(j.at("domain").get<std::string>());
    if (!d) throw ValidationError("config: synth.domain must be 'sim' or 'real'");
    c.domain = *d;
  }
  c.master_seed = j.value("master_seed", c.master_seed);
  return c;
}

json to_json(const ExperimentConfig& c) {
  return {{"name", c.name},
          {"arm", to_string(c.arm)},
          {"master_seed", c.master_seed},
          {"synth", to_json(c.synth)},
          {"datasets",
           {{"sim", split_json(c.datasets.sim)},
            {"real", split_json(c.datasets.real)},
            {"test", split_json(c.datasets.test)}}},
          {"detector", det::to_json(c.detector)},
          {"detector_hyper", det::to_json(c.detector_hyper)},
          {"finetune_hyper", det::to_json(c.finetune_hyper)},
          {"gan", c.gan ? gan_json(*c.gan) : json(nullptr)},
          {"eval", eval_json(c.eval)},
          {"paths", {{"run_dir", c.paths.run_dir.string()}, {"cache", c.paths.cache.string()}}}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  ExperimentConfig c;
  {
    auto reference = to_json(c);
    check_keys(j, reference, "config");
  }
  c.name = j.value("name", c.name);
  if (j.contains("arm")) {
    auto a = parse_arm(j.at("arm").get<std::string>());
    if (!a) throw ValidationError(fmt::format("config: unknown arm '{}'", j.at("arm").get<std::string>()));
    c.arm = *a;
  }
  c.master_seed = j.value("master_seed", c.master_seed);
  if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"));
  if (j.contains("datasets")) {
    const auto& d = j.at("datasets");
    check_keys(d, json{{"sim", 0}, {"real", 0}, {"test", 0}}, "datasets");
    if (d.contains("sim")) c.datasets.sim = split_from(d.at("sim"), c.datasets.sim, "datasets.sim");
    if (d.contains("real")) c.datasets.real = split_from(d.at("real"), c.datasets.real, "datasets.real");
    if (d.contains("test")) c.datasets.test = split_from(d.at("test"), c.datasets.test, "datasets.test");
  }
  if (j.contains("detector")) {
    check_keys(j.at("detector"), det::to_json(c.detector), "detector");
    c.detector = det::detector_config_from_json(j.at("detector"));
  }
  if (j.contains("detector_hyper")) {
    check_keys(j.at("detector_hyper"), det::to_json(c.detector_hyper), "detector_hyper");
    c.detector_hyper = det::train_hyper_from_json(j.at("detector_hyper"));
  }
  if (j.contains("finetune_hyper")) {
    check_keys(j.at("finetune_hyper"), det::to_json(c.finetune_hyper), "finetune_hyper");
    c.finetune_hyper = det::train_hyper_from_json(j.at("finetune_hyper"));
  }
  if (j.contains("gan") && !j.at("gan").is_null()) {
    const auto& g = j.at("gan");
    GanConfig gc;
    check_keys(g, gan_json(gc), "gan");
    if (g.contains("weights")) {
      check_keys(g.at("weights"), gan::to_json(gc.weights), "gan.weights");
      gc.weights = gan::loss_weights_from_json(g.at("weights"));
    }
    if (g.contains("schedule")) {
      check_keys(g.at("schedule"), gan::to_json(gc.schedule), "gan.schedule");
      gc.schedule = gan::gan_schedule_from_json(g.at("schedule"));
    }
    if (g.contains("generator")) {
      check_keys(g.at("generator"), gan::to_json(gc.generator), "gan.generator");
      gc.generator = gan::generator_config_from_json(g.at("generator"));
    }
    if (g.contains("discriminator")) {
      check_keys(g.at("discriminator"), gan::to_json(gc.discriminator), "gan.discriminator");
      gc.discriminator = gan::discriminator_config_from_json(g.at("discriminator"));
    }
    c.gan = gc;
  } else if (j.contains("gan")) {
    c.gan.reset();
  }
  if (j.contains("eval")) {
    const auto& e = j.at("eval");
    check_keys(e, eval_json(c.eval), "eval");
    c.eval.conf_thresh = e.value("conf_thresh", c.eval.conf_thresh);
    c.eval.nms_iou = e.value("nms_iou", c.eval.nms_iou);
    c.eval.max_detections = e.value("max_detections", c.eval.max_detections);
    if (e.contains("ransac")) {
      const auto& r = e.at("ransac");
      check_keys(r, ransac_json(c.eval.ransac), "eval.ransac");
      c.eval.ransac.iterations = r.value("iterations", c.eval.ransac.iterations);
      c.eval.ransac.inlier_threshold = r.value("inlier_threshold", c.eval.ransac.inlier_threshold);
      c.eval.ransac.min_inliers = r.value("min_inliers", c.eval.ransac.min_inliers);
      c.eval.ransac.seed = r.value("seed", c.eval.ransac.seed);
    }
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    check_keys(p, json{{"run_dir", ""}, {"cache", ""}}, "paths");
    c.paths.run_dir = p.value("run_dir", c.paths.run_dir.string());
    c.paths.cache = p.value("cache", c.paths.cache.string());
  }
  return c;
}

ExperimentConfig parse_config_text(std::string_view text) {
  try {
    return experiment_config_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ValidationError(fmt::format("config: {}", e.what()));
  }
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(fmt::format("cannot open config {}", path.string()));
  std::stringstream ss;
  ss << in.rdbuf();
  auto c = parse_config_text(ss.str());
  resolve_relative_paths(c, path.parent_path());
  return c;
}

void save_config(const fs::path& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw IoError(fmt::format("cannot write config {}", path.string()));
  out << to_json(c).dump(2) << '\n';
  if (!out) throw IoError(fmt::format("write failed for {}", path.string()));
}

void resolve_relative_paths(ExperimentConfig& c, const fs::path& base) {
  auto fix = [&](fs::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  fix(c.datasets.sim.path);
  fix(c.datasets.real.path);
  fix(c.datasets.test.path);
  fix(c.paths.run_dir);
  fix(c.paths.cache);
  auto fix_str = [&](std::string& s) {
    if (!s.empty() && fs::path(s).is_relative()) s = (base / s).string();
  };
  fix_str(c.synth.backgrounds);
  fix_str(c.synth.assets_dir);
}

}  // namespace cropsim::pipeline
