#include "cropsim/gan/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <fmt/format.h>
#include <opencv2/imgcodecs.hpp>

#include "cropsim/error.hpp"
#include "cropsim/nn/checkpoint.hpp"
#include "cropsim/nn/tensor_image.hpp"
#include "cropsim/seed.hpp"

namespace cropsim::gan {
namespace fs = std::filesystem;

namespace {
constexpr int kCheckpointVersion = 1;

// Training mode with BatchNorm statistics frozen: GAN-stage batches are far
// too small to estimate them.
void train_with_frozen_batchnorm(det::TinyDetector& d) {
  d->train();
  for (auto& m : d->modules(false))
    if (dynamic_cast<torch::nn::BatchNorm2dImpl*>(m.get())) m->eval();
}

std::vector<torch::Tensor> params_of(std::initializer_list<torch::nn::Module*> mods) {
  std::vector<torch::Tensor> out;
  for (auto* m : mods)
    for (auto& p : m->parameters()) out.push_back(p);
  return out;
}

void set_lr(torch::optim::Optimizer& opt, double lr) {
  for (auto& g : opt.param_groups()) g.options().set_lr(lr);
}

// Cyclic index stream over a reshuffled permutation of [0, n).
class Sampler {
 public:
  Sampler(std::int64_t n, std::mt19937_64& rng) : order_(static_cast<std::size_t>(n)), rng_(rng) {
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }
  std::int64_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  std::vector<std::int64_t> order_;
  std::size_t pos_ = 0;
  std::mt19937_64& rng_;
};

bool finite(const LossBreakdown& b) {
  return std::isfinite(b.gan_s) && std::isfinite(b.gan_r) && std::isfinite(b.cyc) &&
         std::isfinite(b.identity) && std::isfinite(b.dt_mars) && std::isfinite(b.total);
}

}  // namespace

ImagePool::ImagePool(std::size_t capacity, std::uint64_t seed) : capacity_(capacity), rng_(seed) {}

torch::Tensor ImagePool::query(const torch::Tensor& images) {
  if (capacity_ == 0) return images;
  std::vector<torch::Tensor> out;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::int64_t i = 0; i < images.size(0); ++i) {
    auto img = images[i].detach().clone();
    if (images_.size() < capacity_) {
      images_.push_back(img);
      out.push_back(img);
    } else if (u(rng_) > 0.5) {
      std::uniform_int_distribution<std::size_t> pick(0, capacity_ - 1);
      const auto k = pick(rng_);
      out.push_back(images_[k]);
      images_[k] = img;
    } else {
      out.push_back(img);
    }
  }
  return torch::stack(out);
}

void GanSchedule::validate() const {
  if (epochs < 0) throw ValidationError("gan: epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("gan: batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ValidationError("gan: learning_rate must be > 0");
  if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
    throw ValidationError("gan: Adam betas must be in [0,1)");
  if (detector_update_period < 0) throw ValidationError("gan: detector_update_period must be >= 0");
  if (!(detector_learning_rate > 0)) throw ValidationError("gan: detector_learning_rate must be > 0");
}

double GanSchedule::lr_factor(int epoch) const {
  const int start = effective_decay_start();
  const int span = epochs - start + 1;
  return 1.0 - std::max(0, epoch + 1 - start) / static_cast<double>(span);
}

nlohmann::json to_json(const GanSchedule& s) {
  return {{"epochs", s.epochs},
          {"batch_size", s.batch_size},
          {"learning_rate", s.learning_rate},
          {"beta1", s.beta1},
          {"beta2", s.beta2},
          {"decay_start_epoch", s.decay_start_epoch},
          {"detector_update_period", s.detector_update_period},
          {"detector_learning_rate", s.detector_learning_rate},
          {"pool_capacity", s.pool_capacity}};
}

GanSchedule gan_schedule_from_json(const nlohmann::json& j) {
  GanSchedule s;
  s.epochs = j.value("epochs", s.epochs);
  s.batch_size = j.value("batch_size", s.batch_size);
  s.learning_rate = j.value("learning_rate", s.learning_rate);
  s.beta1 = j.value("beta1", s.beta1);
  s.beta2 = j.value("beta2", s.beta2);
  s.decay_start_epoch = j.value("decay_start_epoch", s.decay_start_epoch);
  s.detector_update_period = j.value("detector_update_period", s.detector_update_period);
  s.detector_learning_rate = j.value("detector_learning_rate", s.detector_learning_rate);
  s.pool_capacity = j.value("pool_capacity", s.pool_capacity);
  return s;
}

nlohmann::json to_json(const LossWeights& w) {
  return {{"lambda_gan", w.gan}, {"lambda_cyc", w.cyc}, {"lambda_identity", w.identity},
          {"lambda_detector", w.detector}};
}

LossWeights loss_weights_from_json(const nlohmann::json& j) {
  LossWeights w;
  w.gan = j.value("lambda_gan", w.gan);
  w.cyc = j.value("lambda_cyc", w.cyc);
  w.identity = j.value("lambda_identity", w.identity);
  w.detector = j.value("lambda_detector", w.detector);
  return w;
}

GanBundle GanBundle::create(const GeneratorConfig& g, const DiscriminatorConfig& d,
                            const LossWeights& w, const GanSchedule& s, std::uint64_t seed) {
  torch::manual_seed(seed);
  GanBundle b;
  b.G_r = ResnetGenerator(g);
  b.G_s = ResnetGenerator(g);
  b.D_r = PatchDiscriminator(d);
  b.D_s = PatchDiscriminator(d);
  for (torch::nn::Module* m : {static_cast<torch::nn::Module*>(b.G_r.get()),
                               static_cast<torch::nn::Module*>(b.G_s.get()),
                               static_cast<torch::nn::Module*>(b.D_r.get()),
                               static_cast<torch::nn::Module*>(b.D_s.get())})
    init_weights(*m);
  b.pool_r = ImagePool(s.pool_capacity, derive_seed(seed, 1, 0x9001));
  b.pool_s = ImagePool(s.pool_capacity, derive_seed(seed, 2, 0x9001));
  b.weights = w;
  b.schedule = s;
  b.seed = seed;
  return b;
}

GeneratorLosses total_loss(GanBundle& bundle, det::TinyDetector* detector,
                           const LossWeights& weights, const torch::Tensor& sim_batch,
                           const torch::Tensor& real_batch) {
  auto gr = NetRef::of(bundle.G_r), gs = NetRef::of(bundle.G_s);
  auto dr = NetRef::of(bundle.D_r), ds = NetRef::of(bundle.D_s);
  if (!detector) return total_loss(gr, gs, dr, ds, nullptr, weights, sim_batch, real_batch);
  (*detector)->eval();
  auto det = NetRef::of(*detector);
  return total_loss(gr, gs, dr, ds, &det, weights, sim_batch, real_batch);
}

nlohmann::json to_json(const StepRecord& r) {
  nlohmann::json j{{"step", r.step},
                   {"epoch", r.epoch},
                   {"gan_s", r.generator.gan_s},
                   {"gan_r", r.generator.gan_r},
                   {"cyc", r.generator.cyc},
                   {"identity", r.generator.identity},
                   {"dt_mars", r.generator.dt_mars},
                   {"total", r.generator.total},
                   {"d_r", r.d_r},
                   {"d_s", r.d_s}};
  if (r.detector) j["detector"] = *r.detector;
  return j;
}

GanTrainResult train_dtmars(GanBundle& bundle, det::TinyDetector* detector,
                            const det::TrainingSet& sim_set, const torch::Tensor& real_images_u8,
                            const GanTrainOptions& options) {
  const auto& sched = bundle.schedule;
  sched.validate();
  bundle.weights.validate();
  const std::int64_t n_sim = sim_set.size();
  const std::int64_t n_real = real_images_u8.defined() ? real_images_u8.size(0) : 0;
  if (n_sim == 0 || n_real == 0) throw ValidationError("train_dtmars: sim and real sets must be non-empty");
  const bool updates_detector = sched.detector_update_period > 0;
  if ((bundle.weights.detector > 0 || updates_detector) && !detector)
    throw ValidationError("train_dtmars: this configuration needs a detector");

  torch::manual_seed(derive_seed(bundle.seed, 3, 0x9002));
  std::mt19937_64 rng(derive_seed(bundle.seed, 4, 0x9002));
  Sampler sim_sampler(n_sim, rng), real_sampler(n_real, rng);

  auto adam = [&](std::vector<torch::Tensor> ps) {
    return torch::optim::Adam(std::move(ps), torch::optim::AdamOptions(sched.learning_rate)
                                                 .betas({sched.beta1, sched.beta2}));
  };
  auto opt_g = adam(params_of({bundle.G_r.get(), bundle.G_s.get()}));
  auto opt_d = adam(params_of({bundle.D_r.get(), bundle.D_s.get()}));
  std::unique_ptr<torch::optim::SGD> opt_det;
  if (updates_detector)
    opt_det = det::make_detector_optimizer(*detector, options.detector_hyper, sched.detector_learning_rate);

  std::ofstream log_out;
  if (options.loss_log) {
    if (options.loss_log->has_parent_path()) fs::create_directories(options.loss_log->parent_path());
    log_out.open(*options.loss_log, std::ios::trunc);
    if (!log_out) throw IoError(fmt::format("cannot write {}", options.loss_log->string()));
  }
  if (options.checkpoint_dir) fs::create_directories(*options.checkpoint_dir);

  // The loss weighting decides whether the detector enters the generator
  // objective; with lambda_detector = 0 the term is still measured for the log.
  det::TinyDetector* objective_detector = bundle.weights.detector > 0 ? detector : nullptr;

  const std::int64_t steps_per_epoch = (std::max(n_sim, n_real) + sched.batch_size - 1) / sched.batch_size;
  GanTrainResult result;
  for (int epoch = 0; epoch < sched.epochs; ++epoch) {
    const double lr = sched.learning_rate * sched.lr_factor(epoch);
    set_lr(opt_g, lr);
    set_lr(opt_d, lr);
    for (std::int64_t s = 0; s < steps_per_epoch; ++s) {
      std::vector<torch::Tensor> xs, xr;
      std::vector<std::vector<BBox>> boxes;
      for (int k = 0; k < sched.batch_size; ++k) {
        const auto i = sim_sampler.next();
        xs.push_back(sim_set.images_u8[i]);
        boxes.push_back(sim_set.boxes[static_cast<std::size_t>(i)]);
        xr.push_back(real_images_u8[real_sampler.next()]);
      }
      auto x_s = nn::u8_to_float(torch::stack(xs));
      auto x_r = nn::u8_to_float(torch::stack(xr));

      // (1) discriminators on pooled fakes.
      torch::Tensor fake_r, fake_s;
      {
        torch::NoGradGuard g;
        fake_r = bundle.G_r->forward(x_s);
        fake_s = bundle.G_s->forward(x_r);
      }
      auto pooled_r = bundle.pool_r.query(fake_r);
      auto pooled_s = bundle.pool_s.query(fake_s);
      auto d_r = lsgan_discriminator_term(bundle.D_r->forward(x_r), bundle.D_r->forward(pooled_r));
      auto d_s = lsgan_discriminator_term(bundle.D_s->forward(x_s), bundle.D_s->forward(pooled_s));
      opt_d.zero_grad();
      (d_r + d_s).backward();
      opt_d.step();

      // (2) generators.
      auto G = total_loss(bundle, objective_detector, bundle.weights, x_s, x_r);
      opt_g.zero_grad();
      G.total.backward();
      opt_g.step();

      StepRecord rec;
      rec.step = bundle.step;
      rec.epoch = epoch;
      rec.generator = G.values();
      rec.d_r = d_r.item<double>();
      rec.d_s = d_s.item<double>();
      if (!objective_detector && detector) {
        torch::NoGradGuard g;
        (*detector)->eval();
        auto det = NetRef::of(*detector);
        auto gr = NetRef::of(bundle.G_r), gs = NetRef::of(bundle.G_s);
        rec.generator.dt_mars = dtmars_loss(gr, gs, det, x_s, x_r).item<double>();
      }

      // (3) detector on translated sim images with their boxes.
      if (updates_detector && (bundle.step + 1) % sched.detector_update_period == 0) {
        train_with_frozen_batchnorm(*detector);
        auto loss = det::detection_loss((*detector)->forward(G.fake_real.detach()), boxes);
        opt_det->zero_grad();
        loss.backward();
        opt_det->step();
        (*detector)->eval();
        rec.detector = loss.item<double>();
      }

      if (!finite(rec.generator) || !std::isfinite(rec.d_r) || !std::isfinite(rec.d_s) ||
          (rec.detector && !std::isfinite(*rec.detector)))
        throw NonFiniteLossError(fmt::format("GAN loss became non-finite at epoch {} step {}: {}",
                                             epoch, bundle.step, to_json(rec).dump()));
      if (log_out.is_open()) log_out << to_json(rec).dump() << '\n';
      if (options.on_step) options.on_step(rec);
      result.log.push_back(rec);
      ++bundle.step;
    }
    if (log_out.is_open()) log_out.flush();
    if (options.checkpoint_dir) {
      save_gan(*options.checkpoint_dir / fmt::format("gan_epoch{}.ckpt", epoch), bundle);
      save_gan(*options.checkpoint_dir / "gan.ckpt", bundle);
      if (updates_detector)
        det::save_detector(*options.checkpoint_dir / fmt::format("detector_epoch{}.ckpt", epoch),
                           *detector, options.detector_hyper, sim_set.dataset_hash);
    }
  }
  if (detector) (*detector)->eval();
  return result;
}

void save_gan(const fs::path& path, const GanBundle& b) {
  nn::Checkpoint ck;
  ck.kind = "gan";
  ck.version = kCheckpointVersion;
  ck.meta = {{"generator", to_json(b.G_r->config())},
             {"discriminator", to_json(b.D_r->config())},
             {"weights", to_json(b.weights)},
             {"schedule", to_json(b.schedule)},
             {"seed", b.seed},
             {"step", b.step}};
  nn::append_module_state(ck, "G_r.", *b.G_r);
  nn::append_module_state(ck, "G_s.", *b.G_s);
  nn::append_module_state(ck, "D_r.", *b.D_r);
  nn::append_module_state(ck, "D_s.", *b.D_s);
  nn::save_checkpoint(path, ck);
}

GanBundle load_gan(const fs::path& path) {
  auto ck = nn::load_checkpoint(path, "gan", kCheckpointVersion);
  auto b = GanBundle::create(generator_config_from_json(ck.meta.at("generator")),
                             discriminator_config_from_json(ck.meta.at("discriminator")),
                             loss_weights_from_json(ck.meta.at("weights")),
                             gan_schedule_from_json(ck.meta.at("schedule")),
                             ck.meta.at("seed").get<std::uint64_t>());
  b.step = ck.meta.value("step", std::int64_t{0});
  nn::restore_module_state(ck, "G_r.", *b.G_r);
  nn::restore_module_state(ck, "G_s.", *b.G_s);
  nn::restore_module_state(ck, "D_r.", *b.D_r);
  nn::restore_module_state(ck, "D_s.", *b.D_s);
  return b;
}

ResnetGenerator load_sim_to_real(const fs::path& path) {
  auto ck = nn::load_checkpoint(path, "gan", kCheckpointVersion);
  ResnetGenerator g(generator_config_from_json(ck.meta.at("generator")));
  nn::restore_module_state(ck, "G_r.", *g);
  g->eval();
  return g;
}

cv::Mat translate_image(ResnetGenerator& g, const cv::Mat& bgr) {
  torch::NoGradGuard no_grad;
  g->eval();
  auto x = nn::image_to_tensor(bgr).unsqueeze(0);
  return nn::tensor_to_image(g->forward(x)[0]);
}

data::DatasetManifest translate_dataset(ResnetGenerator& g, const data::DatasetManifest& src,
                                        const fs::path& out_dir) {
  fs::create_directories(out_dir / "images");
  fs::create_directories(out_dir / "labels");
  data::DatasetManifest out;
  out.root = out_dir;
  out.entries = src.entries;
  const std::vector<int> png_params{cv::IMWRITE_PNG_COMPRESSION, 3};
  for (const auto& e : src.entries) {
    const cv::Mat translated = translate_image(g, data::read_image(src, e));
    if (!cv::imwrite(out.image_path(e).string(), translated, png_params))
      throw IoError(fmt::format("cannot write {}", out.image_path(e).string()));
    fs::copy_file(src.label_path(e), out.label_path(e), fs::copy_options::overwrite_existing);
  }
  out.content_hash = src.content_hash.empty() ? data::compute_content_hash(out) : src.content_hash;
  data::save_manifest(out);
  return out;
}

}  // namespace cropsim::gan
