#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "cropsim/detect/model.hpp"
#include "cropsim/detect/train.hpp"
#include "cropsim/nn/checkpoint.hpp"
#include "temp_dir.hpp"

using namespace cropsim;
using namespace cropsim::det;

namespace {

// Dense map whose only object sits in the cell of `b` with exactly `pred`.
torch::Tensor one_object_map(const BBox& b, const BBox& pred, double obj = 1.0) {
  DenseOutput d(14);
  auto& cell = d.at(responsible_cell(b.cy, 14), responsible_cell(b.cx, 14));
  cell.objectness = obj;
  cell.box = pred;
  return from_dense_output(d).unsqueeze(0);
}

TrainingSet random_set(int n, std::uint64_t seed) {
  torch::manual_seed(seed);
  TrainingSet s;
  s.images_u8 = torch::randint(0, 256, {n, 3, 224, 224}, torch::kUInt8);
  for (int i = 0; i < n; ++i) s.boxes.push_back({{0.3 + 0.05 * i, 0.5, 0.2, 0.25}});
  s.dataset_hash = "test";
  return s;
}

bool same_parameters(TinyDetector& a, TinyDetector& b) {
  auto pa = a->named_parameters(true), pb = b->named_parameters(true);
  for (const auto& p : pa)
    if (!torch::equal(p.value(), pb[p.key()])) return false;
  auto ba = a->named_buffers(true), bb = b->named_buffers(true);
  for (const auto& p : ba)
    if (!torch::equal(p.value(), bb[p.key()])) return false;
  return true;
}

}  // namespace

TEST(Detector, OutputShapeAndRange) {
  torch::manual_seed(0);
  TinyDetector m;
  auto out = forward_dense(m, torch::rand({2, 3, 224, 224}) * 2 - 1);
  EXPECT_EQ(out.sizes(), (std::vector<std::int64_t>{2, 5, 14, 14}));
  EXPECT_GE(out.min().item<double>(), 0.0);
  EXPECT_LE(out.max().item<double>(), 1.0);
}

TEST(Detector, RejectsWrongInputShape) {
  TinyDetector m;
  EXPECT_THROW(forward_dense(m, torch::zeros({1, 3, 200, 224})), ValidationError);
  EXPECT_THROW(forward_dense(m, torch::zeros({1, 1, 224, 224})), ValidationError);
}

TEST(Detector, BoxCentersLieNearTheirCell) {
  torch::manual_seed(1);
  TinyDetector m;
  auto d = to_dense_output(forward_dense(m, torch::zeros({1, 3, 224, 224}))[0]);
  for (int r = 0; r < 14; ++r)
    for (int c = 0; c < 14; ++c) {
      const auto& b = d.at(r, c).box;
      EXPECT_GE(b.cx, c / 14.0 - 1e-6);
      EXPECT_LE(b.cx, (c + 1) / 14.0 + 1e-6);
      EXPECT_GE(b.cy, r / 14.0 - 1e-6);
      EXPECT_LE(b.cy, (r + 1) / 14.0 + 1e-6);
    }
}

TEST(Detector, DenseOutputRoundTrip) {
  auto t = torch::rand({5, 14, 14}, torch::kFloat64);
  EXPECT_TRUE(torch::equal(from_dense_output(to_dense_output(t)), t));
}

TEST(DetectionLoss, PerfectPredictionIsZero) {
  const BBox gt{0.52, 0.31, 0.2, 0.15};
  auto dense = one_object_map(gt, gt);
  auto p = detection_loss_parts(dense, {{gt}});
  EXPECT_NEAR(p.iou_term.item<double>(), 0.0, 1e-15);
  EXPECT_NEAR(p.obj_term.item<double>(), 0.0, 1e-15);
}

TEST(DetectionLoss, HalfCellShiftMatchesHandComputation) {
  const BBox gt{0.5, 0.5, 0.2, 0.2};
  const double dx = 0.5 / 14;
  auto dense = one_object_map(gt, {gt.cx + dx, gt.cy, gt.w, gt.h});
  const double inter = (0.2 - dx) * 0.2;
  const double expected = 1 - inter / (0.08 - inter);
  EXPECT_NEAR(detection_loss(dense, {{gt}}).item<double>(), expected, 1e-12);
}

TEST(DetectionLoss, ObjectnessIsMeanBceOverCells) {
  DenseOutput d(14);
  for (auto& c : d.cells) c.objectness = 0.5;
  EXPECT_NEAR(detection_loss(d, {}), std::log(2.0), 1e-12);
}

TEST(DetectionLoss, SharedCellKeepsTheFirstBox) {
  const BBox a{0.52, 0.52, 0.2, 0.2}, b{0.53, 0.54, 0.3, 0.1};
  ASSERT_EQ(responsible_cell(a.cx, 14), responsible_cell(b.cx, 14));
  auto dense = one_object_map(a, {0.5, 0.52, 0.25, 0.2}, 0.7);
  EXPECT_EQ(detection_loss(dense, {{a, b}}).item<double>(), detection_loss(dense, {{a}}).item<double>());
}

TEST(DetectionLoss, BatchAndShapeChecks) {
  auto dense = torch::rand({2, 5, 14, 14});
  EXPECT_THROW(detection_loss(dense, {{}}), ValidationError);
  EXPECT_THROW(detection_loss(torch::rand({2, 4, 14, 14}), {{}, {}}), ValidationError);
}

TEST(DetectionLoss, GradientMatchesFiniteDifferences) {
  torch::manual_seed(3);
  auto dense = (torch::rand({2, 5, 14, 14}, torch::kFloat64) * 0.8 + 0.1);
  // Keep predicted boxes overlapping their targets so the IoU term is smooth.
  const std::vector<std::vector<BBox>> gts{{{0.33, 0.41, 0.2, 0.3}, {0.8, 0.2, 0.1, 0.1}}, {{0.6, 0.6, 0.4, 0.3}}};
  for (std::size_t b = 0; b < gts.size(); ++b)
    for (const auto& g : gts[b]) {
      const auto r = responsible_cell(g.cy, 14), c = responsible_cell(g.cx, 14);
      const auto bi = static_cast<std::int64_t>(b);
      dense[bi][kCx][r][c] = g.cx + 0.013;
      dense[bi][kCy][r][c] = g.cy - 0.02;
      dense[bi][kW][r][c] = g.w * 1.1;
      dense[bi][kH][r][c] = g.h * 0.9;
    }
  auto x = dense.clone().requires_grad_(true);
  detection_loss(x, gts).backward();
  auto grad = x.grad();

  const double eps = 1e-6;
  auto acc = dense.accessor<double, 4>();
  int checked = 0;
  for (std::size_t b = 0; b < gts.size(); ++b)
    for (const auto& g : gts[b]) {
      const auto r = responsible_cell(g.cy, 14), c = responsible_cell(g.cx, 14);
      for (int ch = 0; ch < kDenseChannels; ++ch) {
        const auto bi = static_cast<std::int64_t>(b);
        auto plus = dense.clone(), minus = dense.clone();
        plus[bi][ch][r][c] = acc[bi][ch][r][c] + eps;
        minus[bi][ch][r][c] = acc[bi][ch][r][c] - eps;
        const double fd = (detection_loss(plus, gts).item<double>() - detection_loss(minus, gts).item<double>()) / (2 * eps);
        EXPECT_NEAR(grad[bi][ch][r][c].item<double>(), fd, 1e-7) << "b=" << b << " ch=" << ch;
        ++checked;
      }
    }
  // Box channels of an unassigned cell carry no gradient.
  EXPECT_EQ(grad[0][kCx][0][0].item<double>(), 0.0);
  EXPECT_EQ(checked, 15);
}

TEST(Detector, InputGradientMatchesFiniteDifferences) {
  torch::manual_seed(4);
  TinyDetector m;
  m->to(torch::kFloat64);
  m->eval();
  auto img = torch::rand({1, 3, 224, 224}, torch::kFloat64) * 2 - 1;
  const std::vector<std::vector<BBox>> gts{{{0.4, 0.45, 0.3, 0.3}}};
  auto loss_of = [&](const torch::Tensor& x) { return detection_loss(m->forward(x), gts); };
  auto x = img.clone().requires_grad_(true);
  loss_of(x).backward();
  const double eps = 1e-6;
  const std::vector<std::array<std::int64_t, 3>> pixels{{0, 90, 100}, {1, 100, 90}, {2, 0, 0}, {0, 223, 17}};
  for (const auto& [c, y, xx] : pixels) {
    auto plus = img.clone(), minus = img.clone();
    plus[0][c][y][xx] += eps;
    minus[0][c][y][xx] -= eps;
    torch::NoGradGuard g;
    const double fd = (loss_of(plus).item<double>() - loss_of(minus).item<double>()) / (2 * eps);
    EXPECT_NEAR(x.grad()[0][c][y][xx].item<double>(), fd, 1e-8 + 1e-5 * std::abs(fd));
  }
}

TEST(Training, HyperValidation) {
  TrainHyper h;
  h.epochs = -1;
  EXPECT_THROW(h.validate(), ValidationError);
  h = {};
  h.batch_size = 0;
  EXPECT_THROW(h.validate(), ValidationError);
  h = {};
  h.learning_rate = 0;
  EXPECT_THROW(h.validate(), ValidationError);
}

TEST(Training, HyperJsonRoundTrip) {
  TrainHyper h;
  h.epochs = 7;
  h.learning_rate = 0.003;
  h.scheduler = Scheduler::constant;
  h.augment_flips = false;
  const auto back = train_hyper_from_json(to_json(h));
  EXPECT_EQ(to_json(back), to_json(h));
}

TEST(Training, IsReproducibleFromSeed) {
  const auto set = random_set(4, 9);
  TrainHyper h;
  h.epochs = 2;
  h.batch_size = 2;
  h.seed = 77;
  torch::manual_seed(5);
  TinyDetector a;
  torch::manual_seed(5);
  TinyDetector b;
  const auto ra = train_detector(a, set, h);
  const auto rb = train_detector(b, set, h);
  EXPECT_EQ(ra.epoch_loss, rb.epoch_loss);
  EXPECT_TRUE(same_parameters(a, b));
}

TEST(Training, LossDecreasesOnATinySet) {
  const auto set = random_set(4, 10);
  TrainHyper h;
  h.epochs = 15;
  h.batch_size = 4;
  h.warmup_epochs = 0;
  h.augment_flips = false;
  torch::manual_seed(6);
  TinyDetector m;
  const auto r = train_detector(m, set, h);
  ASSERT_EQ(r.epoch_loss.size(), 15u);
  for (double l : r.epoch_loss) EXPECT_TRUE(std::isfinite(l));
  EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front());
}

TEST(Checkpoint, DetectorRoundTripIncludesBuffers) {
  test_util::TempDir dir;
  const auto set = random_set(2, 11);
  TrainHyper h;
  h.epochs = 1;
  h.batch_size = 2;
  torch::manual_seed(7);
  TinyDetector m;
  train_detector(m, set, h);
  save_detector(dir.path() / "d.ckpt", m, h, "abc");
  auto loaded = load_detector(dir.path() / "d.ckpt");
  EXPECT_EQ(loaded.dataset_hash, "abc");
  EXPECT_EQ(to_json(loaded.hyper), to_json(h));
  EXPECT_TRUE(same_parameters(m, loaded.model));
  auto x = torch::rand({1, 3, 224, 224});
  EXPECT_TRUE(torch::equal(forward_dense(m, x), forward_dense(loaded.model, x)));
}

TEST(Checkpoint, KindAndCorruptionAreDetected) {
  test_util::TempDir dir;
  nn::Checkpoint c;
  c.kind = "gan";
  c.version = 1;
  c.tensors.emplace_back("w", torch::arange(6, torch::kFloat32).view({2, 3}));
  nn::save_checkpoint(dir.path() / "c.ckpt", c);
  const auto back = nn::load_checkpoint(dir.path() / "c.ckpt", "gan", 1);
  ASSERT_EQ(back.tensors.size(), 1u);
  EXPECT_TRUE(torch::equal(back.tensors[0].second, c.tensors[0].second));
  EXPECT_THROW(nn::load_checkpoint(dir.path() / "c.ckpt", "detector", 1), nn::CheckpointError);
  EXPECT_THROW(nn::load_checkpoint(dir.path() / "c.ckpt", "gan", 2), nn::CheckpointError);

  const auto size = std::filesystem::file_size(dir.path() / "c.ckpt");
  std::filesystem::resize_file(dir.path() / "c.ckpt", size - 4);
  EXPECT_THROW(nn::load_checkpoint(dir.path() / "c.ckpt", "gan", 1), nn::CheckpointError);
  std::ofstream(dir.path() / "junk.ckpt") << "not a checkpoint\n";
  EXPECT_THROW(nn::load_checkpoint(dir.path() / "junk.ckpt", "gan", 1), nn::CheckpointError);
  EXPECT_THROW(nn::load_checkpoint(dir.path() / "missing.ckpt", "gan", 1), nn::CheckpointError);
}
