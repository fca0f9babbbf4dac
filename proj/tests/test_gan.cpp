#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "cropsim/gan/losses.hpp"
#include "cropsim/gan/networks.hpp"
#include "cropsim/gan/train.hpp"
#include "cropsim/synth/generate.hpp"
#include "temp_dir.hpp"

using namespace cropsim;
using namespace cropsim::gan;

namespace {

NetRef identity_net() {
  return {[](const torch::Tensor& x) { return x; }, nullptr};
}

NetRef constant_critic(double v) {
  return {[v](const torch::Tensor& x) { return torch::full({x.size(0), 1, 4, 4}, v, x.options()); }, nullptr};
}

// A small differentiable stand-in for the detector.
struct ToyDetectorImpl : torch::nn::Module {
  ToyDetectorImpl() : conv(register_module("conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, 5, 3).stride(2)))) {}
  torch::Tensor forward(const torch::Tensor& x) { return torch::sigmoid(conv->forward(x)); }
  torch::nn::Conv2d conv;
};
TORCH_MODULE(ToyDetector);

struct Nets {
  ResnetGenerator G_r{nullptr}, G_s{nullptr};
  PatchDiscriminator D_r{nullptr}, D_s{nullptr};
  ToyDetector det{nullptr};

  explicit Nets(std::uint64_t seed, torch::Dtype dtype = torch::kFloat32) {
    torch::manual_seed(seed);
    G_r = ResnetGenerator(GeneratorConfig{4, 1});
    G_s = ResnetGenerator(GeneratorConfig{4, 1});
    D_r = PatchDiscriminator(DiscriminatorConfig{4});
    D_s = PatchDiscriminator(DiscriminatorConfig{4});
    det = ToyDetector();
    for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{G_r.get(), G_s.get(), D_r.get(), D_s.get()})
      init_weights(*m);
    for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{G_r.get(), G_s.get(), D_r.get(), D_s.get(), det.get()})
      m->to(dtype);
  }
};

det::TrainingSet sim_training_set(const std::filesystem::path& dir, int n, synth::Domain domain) {
  synth::SynthConfig cfg;
  cfg.n_images = n;
  cfg.domain = domain;
  cfg.master_seed = domain == synth::Domain::sim ? 1 : 2;
  auto m = synth::generate_dataset(cfg, dir);
  if (domain == synth::Domain::sim) return det::load_training_set(m, "test", nullptr);
  det::TrainingSet s;
  s.images_u8 = det::load_images_u8(m);
  return s;
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Networks, GeneratorPreservesShapeAndRange) {
  torch::manual_seed(0);
  ResnetGenerator g(GeneratorConfig{4, 1});
  init_weights(*g);
  auto y = g->forward(torch::rand({2, 3, 32, 32}) * 2 - 1);
  EXPECT_EQ(y.sizes(), (std::vector<std::int64_t>{2, 3, 32, 32}));
  EXPECT_LE(y.abs().max().item<double>(), 1.0);
}

TEST(Networks, DefaultGeneratorHandlesTrainingResolution) {
  torch::manual_seed(0);
  ResnetGenerator g;
  EXPECT_EQ(g->forward(torch::zeros({1, 3, 224, 224})).sizes(), (std::vector<std::int64_t>{1, 3, 224, 224}));
}

TEST(Networks, DiscriminatorEmitsPatchMap) {
  torch::manual_seed(0);
  PatchDiscriminator d;
  auto y = d->forward(torch::zeros({2, 3, 224, 224}));
  ASSERT_EQ(y.dim(), 4);
  EXPECT_EQ(y.size(0), 2);
  EXPECT_EQ(y.size(1), 1);
  EXPECT_GT(y.size(2), 1);
}

TEST(Networks, ConfigJsonRoundTrip) {
  GeneratorConfig g{12, 3};
  DiscriminatorConfig d{24};
  EXPECT_EQ(to_json(generator_config_from_json(to_json(g))), to_json(g));
  EXPECT_EQ(to_json(discriminator_config_from_json(to_json(d))), to_json(d));
}

TEST(Losses, IdentityGeneratorsZeroTheReconstructionTerms) {
  torch::manual_seed(1);
  auto xs = torch::rand({2, 3, 16, 16}) * 2 - 1, xr = torch::rand({2, 3, 16, 16}) * 2 - 1;
  auto id = identity_net();
  Nets n(2);
  auto det = NetRef::of(n.det);
  EXPECT_EQ(cycle_loss(id, id, xs, xr).item<double>(), 0.0);
  EXPECT_EQ(identity_loss(id, id, xs, xr).item<double>(), 0.0);
  EXPECT_EQ(dtmars_loss(id, id, det, xs, xr).item<double>(), 0.0);
}

TEST(Losses, ConstantCriticAtOneHalf) {
  auto x = torch::rand({3, 3, 16, 16});
  const auto t = adversarial_loss(identity_net(), constant_critic(0.5), x, x);
  EXPECT_DOUBLE_EQ(t.generator_term.item<double>(), 0.25);
  EXPECT_DOUBLE_EQ(t.discriminator_term.item<double>(), 0.25);
  EXPECT_DOUBLE_EQ(lsgan_generator_term(torch::ones({4})).item<double>(), 0.0);
  EXPECT_DOUBLE_EQ(lsgan_discriminator_term(torch::ones({4}), torch::zeros({4})).item<double>(), 0.0);
}

TEST(Losses, TotalWithIdentityGeneratorsIsTheAdversarialPart) {
  auto x = torch::rand({1, 3, 16, 16});
  auto id = identity_net();
  auto c = constant_critic(0.5);
  LossWeights w{1.5, 5, 2, 10};
  const auto v = total_loss(id, id, c, c, &id, w, x, x).values();
  EXPECT_DOUBLE_EQ(v.total, 1.5 * 0.5);
  EXPECT_EQ(v.cyc, 0.0);
  EXPECT_EQ(v.identity, 0.0);
  EXPECT_EQ(v.dt_mars, 0.0);
}

TEST(Losses, TotalIsTheWeightedSum) {
  Nets n(3);
  auto gr = NetRef::of(n.G_r), gs = NetRef::of(n.G_s), dr = NetRef::of(n.D_r), ds = NetRef::of(n.D_s);
  auto det = NetRef::of(n.det);
  torch::manual_seed(4);
  auto xs = torch::rand({2, 3, 32, 32}) * 2 - 1, xr = torch::rand({2, 3, 32, 32}) * 2 - 1;
  const LossWeights w{0.7, 3.0, 1.25, 9.0};
  const auto L = total_loss(gr, gs, dr, ds, &det, w, xs, xr);
  const auto v = L.values();
  EXPECT_NEAR(v.total, w.gan * (v.gan_s + v.gan_r) + w.cyc * v.cyc + w.identity * v.identity + w.detector * v.dt_mars,
              1e-12 * std::abs(v.total) + 1e-12);
  EXPECT_NEAR(v.gan_r, adversarial_loss(gr, dr, xs, xr).generator_term.item<double>(), 1e-6);
  EXPECT_NEAR(v.cyc, cycle_loss(gr, gs, xs, xr).item<double>(), 1e-6);
  EXPECT_NEAR(v.identity, identity_loss(gr, gs, xs, xr).item<double>(), 1e-6);
  EXPECT_NEAR(v.dt_mars, dtmars_loss(gr, gs, det, xs, xr).item<double>(), 1e-6);
  for (double t : {v.gan_s, v.gan_r, v.cyc, v.identity, v.dt_mars}) EXPECT_GT(t, 0.0);

  const auto L0 = total_loss(gr, gs, dr, ds, nullptr, w, xs, xr);
  EXPECT_EQ(L0.values().dt_mars, 0.0);
}

TEST(Losses, NegativeWeightsAndMismatchedBatchesRejected) {
  auto id = identity_net();
  auto c = constant_critic(0.5);
  auto x = torch::rand({1, 3, 16, 16});
  EXPECT_THROW(total_loss(id, id, c, c, nullptr, LossWeights{1, -1, 1, 1}, x, x), ValidationError);
  EXPECT_THROW(cycle_loss(id, id, x, torch::rand({1, 3, 8, 8})), ValidationError);
  EXPECT_THROW(identity_loss(id, id, x, torch::rand({3, 16, 16})), ValidationError);
}

TEST(Losses, GradientsReachOnlyTheGenerators) {
  Nets n(5);
  auto gr = NetRef::of(n.G_r), gs = NetRef::of(n.G_s), dr = NetRef::of(n.D_r), ds = NetRef::of(n.D_s);
  auto det = NetRef::of(n.det);
  auto xs = torch::rand({1, 3, 32, 32}) * 2 - 1, xr = torch::rand({1, 3, 32, 32}) * 2 - 1;
  total_loss(gr, gs, dr, ds, &det, LossWeights{}, xs, xr).total.backward();
  auto any_grad = [](torch::nn::Module& m) {
    for (const auto& p : m.parameters())
      if (p.grad().defined() && p.grad().abs().sum().item<double>() > 0) return true;
    return false;
  };
  EXPECT_TRUE(any_grad(*n.G_r));
  EXPECT_TRUE(any_grad(*n.G_s));
  EXPECT_FALSE(any_grad(*n.D_r));
  EXPECT_FALSE(any_grad(*n.D_s));
  EXPECT_FALSE(any_grad(*n.det));
  for (const auto& p : n.det->parameters()) EXPECT_TRUE(p.requires_grad());
}

TEST(Losses, GeneratorGradientMatchesFiniteDifferences) {
  Nets n(6, torch::kFloat64);
  auto gr = NetRef::of(n.G_r), gs = NetRef::of(n.G_s), dr = NetRef::of(n.D_r), ds = NetRef::of(n.D_s);
  auto det = NetRef::of(n.det);
  torch::manual_seed(7);
  auto xs = torch::rand({1, 3, 16, 16}, torch::kFloat64) * 2 - 1;
  auto xr = torch::rand({1, 3, 16, 16}, torch::kFloat64) * 2 - 1;
  const LossWeights w{1, 5, 2, 10};
  auto f = [&] { return total_loss(gr, gs, dr, ds, &det, w, xs, xr).total; };
  f().backward();

  const double eps = 1e-6;
  int checked = 0;
  for (auto* g : {n.G_r.get(), n.G_s.get()}) {
    for (auto& p : g->parameters()) {
      if (p.dim() < 4) continue;
      auto flat = p.view(-1);
      for (std::int64_t k : {std::int64_t{0}, flat.size(0) / 2, flat.size(0) - 1}) {
        const double grad = p.grad().view(-1)[k].item<double>();
        torch::NoGradGuard guard;
        const double v = flat[k].item<double>();
        flat[k] = v + eps;
        const double up = f().item<double>();
        flat[k] = v - eps;
        const double down = f().item<double>();
        flat[k] = v;
        const double fd = (up - down) / (2 * eps);
        EXPECT_NEAR(grad, fd, 1e-6 + 1e-4 * std::abs(fd));
        ++checked;
      }
    }
  }
  EXPECT_GT(checked, 10);
}

TEST(Pool, FillsThenMixes) {
  ImagePool pool(3, 11);
  std::vector<torch::Tensor> seen;
  for (int i = 0; i < 3; ++i) {
    auto x = torch::full({1, 3, 2, 2}, static_cast<float>(i));
    EXPECT_TRUE(torch::equal(pool.query(x), x));
    seen.push_back(x[0]);
  }
  EXPECT_EQ(pool.size(), 3u);
  int swapped = 0;
  for (int i = 3; i < 40; ++i) {
    auto x = torch::full({1, 3, 2, 2}, static_cast<float>(i));
    auto y = pool.query(x);
    const float v = y[0][0][0][0].item<float>();
    EXPECT_LE(v, static_cast<float>(i));
    if (v != static_cast<float>(i)) ++swapped;
  }
  EXPECT_GT(swapped, 5);
  EXPECT_LT(swapped, 35);
  EXPECT_EQ(pool.size(), 3u);
}

TEST(Pool, ZeroCapacityPassesThroughAndSeedIsReproducible) {
  ImagePool none(0);
  auto x = torch::rand({2, 3, 2, 2});
  EXPECT_TRUE(torch::equal(none.query(x), x));
  ImagePool a(2, 5), b(2, 5);
  for (int i = 0; i < 20; ++i) {
    auto y = torch::full({1, 1, 1, 1}, static_cast<float>(i));
    EXPECT_TRUE(torch::equal(a.query(y), b.query(y)));
  }
}

TEST(Schedule, LinearDecayAfterStart) {
  GanSchedule s;
  s.epochs = 10;
  s.decay_start_epoch = 5;
  for (int e = 0; e < 5; ++e) EXPECT_DOUBLE_EQ(s.lr_factor(e), 1.0);
  for (int e = 5; e < 10; ++e) EXPECT_DOUBLE_EQ(s.lr_factor(e), 1.0 - (e - 4) / 6.0);
  s.decay_start_epoch = -1;
  EXPECT_EQ(s.effective_decay_start(), 5);
  GanSchedule bad;
  bad.batch_size = 0;
  EXPECT_THROW(bad.validate(), ValidationError);
  bad = {};
  bad.detector_update_period = -1;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Schedule, JsonRoundTrip) {
  GanSchedule s;
  s.epochs = 3;
  s.detector_update_period = 4;
  LossWeights w{2, 3, 4, 5};
  EXPECT_EQ(to_json(gan_schedule_from_json(to_json(s))), to_json(s));
  EXPECT_EQ(to_json(loss_weights_from_json(to_json(w))), to_json(w));
}

class GanTraining : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new test_util::TempDir;
    sim_ = new det::TrainingSet(sim_training_set(dir_->path() / "sim", 3, synth::Domain::sim));
    real_ = new det::TrainingSet(sim_training_set(dir_->path() / "real", 3, synth::Domain::real));
  }
  static void TearDownTestSuite() {
    delete sim_;
    delete real_;
    delete dir_;
  }

  static GanBundle bundle(double lambda_det, int period) {
    GanSchedule s;
    s.epochs = 1;
    s.detector_update_period = period;
    LossWeights w;
    w.detector = lambda_det;
    return GanBundle::create(GeneratorConfig{4, 1}, DiscriminatorConfig{4}, w, s, 21);
  }

  static inline test_util::TempDir* dir_ = nullptr;
  static inline det::TrainingSet* sim_ = nullptr;
  static inline det::TrainingSet* real_ = nullptr;
};

TEST_F(GanTraining, JointStepsAreFiniteAndReproducible) {
  auto run = [&](const std::filesystem::path& out) {
    auto b = bundle(10, 1);
    torch::manual_seed(3);
    det::TinyDetector detector;
    GanTrainOptions o;
    o.checkpoint_dir = out;
    o.loss_log = out / "loss.jsonl";
    auto r = train_dtmars(b, &detector, *sim_, real_->images_u8, o);
    return std::pair{r, b.step};
  };
  const auto [a, steps] = run(dir_->path() / "a");
  const auto [b, steps_b] = run(dir_->path() / "b");
  ASSERT_EQ(a.log.size(), 3u);
  EXPECT_EQ(steps, 3);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(to_json(a.log[i]), to_json(b.log[i]));
    EXPECT_TRUE(a.log[i].detector.has_value());
    EXPECT_TRUE(std::isfinite(a.log[i].generator.total));
  }
  EXPECT_EQ(read_file(dir_->path() / "a" / "loss.jsonl"), read_file(dir_->path() / "b" / "loss.jsonl"));
  for (const char* f : {"gan.ckpt", "gan_epoch0.ckpt", "detector_epoch0.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir_->path() / "a" / f)) << f;
}

TEST_F(GanTraining, FrozenDetectorIsUntouched) {
  auto b = bundle(10, 0);
  torch::manual_seed(3);
  det::TinyDetector detector;
  std::vector<torch::Tensor> before;
  for (const auto& p : detector->parameters()) before.push_back(p.clone());
  for (const auto& p : detector->buffers()) before.push_back(p.clone());
  const auto r = train_dtmars(b, &detector, *sim_, real_->images_u8);
  std::size_t i = 0;
  for (const auto& p : detector->parameters()) EXPECT_TRUE(torch::equal(p, before[i++]));
  for (const auto& p : detector->buffers()) EXPECT_TRUE(torch::equal(p, before[i++]));
  for (const auto& rec : r.log) EXPECT_FALSE(rec.detector.has_value());
}

TEST_F(GanTraining, PlainCycleGanMeasuresButIgnoresTheDetectorTerm) {
  auto b = bundle(0, 0);
  torch::manual_seed(3);
  det::TinyDetector detector;
  const auto r = train_dtmars(b, &detector, *sim_, real_->images_u8);
  for (const auto& rec : r.log) {
    EXPECT_GT(rec.generator.dt_mars, 0.0);
    const auto& g = rec.generator;
    EXPECT_NEAR(g.total, g.gan_s + g.gan_r + 5 * g.cyc + 2 * g.identity, 1e-6 * g.total);
  }
  auto needs_detector = bundle(10, 0);
  EXPECT_THROW(train_dtmars(needs_detector, nullptr, *sim_, real_->images_u8), ValidationError);
}

TEST_F(GanTraining, CheckpointRoundTrip) {
  auto b = bundle(0, 0);
  train_dtmars(b, nullptr, *sim_, real_->images_u8);
  save_gan(dir_->path() / "g.ckpt", b);
  auto l = load_gan(dir_->path() / "g.ckpt");
  EXPECT_EQ(l.step, b.step);
  EXPECT_EQ(l.seed, b.seed);
  EXPECT_EQ(to_json(l.schedule), to_json(b.schedule));
  EXPECT_EQ(to_json(l.weights), to_json(b.weights));
  auto x = torch::rand({1, 3, 32, 32});
  torch::NoGradGuard g;
  EXPECT_TRUE(torch::equal(l.G_r->forward(x), b.G_r->forward(x)));
  EXPECT_TRUE(torch::equal(l.D_s->forward(x), b.D_s->forward(x)));
  auto only = load_sim_to_real(dir_->path() / "g.ckpt");
  EXPECT_TRUE(torch::equal(only->forward(x), b.G_r->forward(x)));
}

TEST_F(GanTraining, TranslationKeepsLabels) {
  synth::SynthConfig cfg;
  cfg.n_images = 2;
  cfg.master_seed = 4;
  const auto src = synth::generate_dataset(cfg, dir_->path() / "src");
  auto b = bundle(0, 0);
  const auto out = translate_dataset(b.G_r, src, dir_->path() / "translated");
  EXPECT_EQ(out.content_hash, src.content_hash);
  ASSERT_EQ(out.entries.size(), src.entries.size());
  for (std::size_t i = 0; i < src.entries.size(); ++i) {
    EXPECT_EQ(read_file(out.label_path(out.entries[i])), read_file(src.label_path(src.entries[i])));
    const auto img = data::read_image(out, out.entries[i]);
    EXPECT_EQ(img.rows, 224);
    EXPECT_EQ(img.cols, 224);
  }
  EXPECT_NO_THROW(data::load_yolo_dataset(dir_->path() / "translated"));
}
