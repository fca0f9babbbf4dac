#include <gtest/gtest.h>

#include <random>

#include "cropsim/geometry.hpp"
#include "oracles.hpp"

using namespace cropsim;

TEST(Iou, HalfOverlappingUnitSquaresGiveOneSeventh) {
  // [0,2]x[0,2] and [1,3]x[1,3]: intersection 1, union 7.
  const PixelRect a{0, 0, 2, 2}, b{1, 1, 3, 3};
  EXPECT_NEAR(iou(a, b), 1.0 / 7.0, 1e-12);
}

TEST(Iou, IdenticalBoxesGiveExactlyOne) {
  const BBox b{0.31, 0.47, 0.123, 0.377};
  EXPECT_EQ(iou(b, b), 1.0);
}

TEST(Iou, DisjointAndZeroAreaGiveZero) {
  EXPECT_EQ(iou(BBox{0.2, 0.2, 0.1, 0.1}, BBox{0.8, 0.8, 0.1, 0.1}), 0.0);
  EXPECT_EQ(iou(PixelRect{1, 1, 1, 5}, PixelRect{0, 0, 4, 4}), 0.0);
}

TEST(Iou, SymmetricBoundedAndMatchesOracle) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 2000; ++i) {
    const BBox a = oracle::random_box(rng), b = oracle::jitter_box(a, rng, 0.6);
    const double v = iou(a, b);
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_DOUBLE_EQ(v, iou(b, a));
    EXPECT_NEAR(v, oracle::iou(a, b), 1e-12);
  }
}

TEST(BBoxTest, RectRoundTrip) {
  const PixelRect r{10.5, 20.25, 110.0, 64.75};
  const BBox b = BBox::from_rect(r, kTrainDims);
  const PixelRect back = b.to_rect(kTrainDims);
  EXPECT_NEAR(back.x0, r.x0, 1e-9);
  EXPECT_NEAR(back.y0, r.y0, 1e-9);
  EXPECT_NEAR(back.x1, r.x1, 1e-9);
  EXPECT_NEAR(back.y1, r.y1, 1e-9);
}

TEST(BBoxTest, Validity) {
  EXPECT_TRUE(is_valid(BBox{0.5, 0.5, 0.2, 0.2}));
  EXPECT_TRUE(is_valid(BBox{0, 0, 0.1, 0.1}));
  EXPECT_FALSE(is_valid(BBox{0.5, 0.5, 0, 0.2}));
  EXPECT_FALSE(is_valid(BBox{1.2, 0.5, 0.2, 0.2}));
  EXPECT_FALSE(is_valid(BBox{0.5, 0.5, 1.5, 0.2}));
  EXPECT_FALSE(describe_invalid(BBox{0.5, -0.1, 0.2, 0.2}).empty());
  EXPECT_TRUE(describe_invalid(BBox{0.5, 0.5, 0.2, 0.2}).empty());
}

TEST(BBoxTest, ClipToFrame) {
  const BBox c = clip_to_frame(BBox{0.95, 0.5, 0.2, 0.2});
  EXPECT_NEAR(c.x1(), 1.0, 1e-12);
  EXPECT_NEAR(c.x0(), 0.85, 1e-12);
  EXPECT_NEAR(c.h, 0.2, 1e-12);
}
