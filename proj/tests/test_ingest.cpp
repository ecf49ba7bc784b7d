#include <gtest/gtest.h>

#include <cmath>

#include "latmap/error.hpp"
#include "latmap/ingest.hpp"
#include "test_util.hpp"

using namespace latmap;
using latmap::testing::make_frame;

TEST(BackProject, IdentityCamera) {
  CameraFrame f = make_frame(1, 1, 4, 1.0f, 1);
  const auto bp = back_project(f);
  ASSERT_EQ(bp.batch.size(), 1);
  EXPECT_EQ(bp.batch.points.col(0), Vec3(0, 0, 1));
}

TEST(BackProject, PureTranslation) {
  CameraFrame f = make_frame(1, 1, 4, 1.0f, 1);
  f.pose.translation = Vec3(1, 2, 3);
  const auto bp = back_project(f);
  EXPECT_EQ(bp.batch.points.col(0), Vec3(1, 2, 4));
}

TEST(BackProject, TargetsAreUnitNorm) {
  const CameraFrame f = make_frame(6, 7, 16, 2.0f, 3);
  const auto bp = back_project(f);
  ASSERT_EQ(bp.batch.size(), 42);
  for (Eigen::Index i = 0; i < bp.batch.size(); ++i) EXPECT_NEAR(bp.batch.targets.col(i).norm(), 1.0, 1e-6);
}

TEST(BackProject, RoundTripWithForwardProjection) {
  Rng rng(11);
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int stride = 1 + static_cast<int>(rng.below(8));
    const int rows = 2 + static_cast<int>(rng.below(4));
    const int cols = 2 + static_cast<int>(rng.below(4));
    CameraFrame f;
    f.intrinsics = {rng.uniform(50, 500), rng.uniform(50, 500), rng.uniform(-5, 40), rng.uniform(-5, 40), stride};
    f.pose = {latmap::testing::random_rotation(rng), Vec3(rng.normal(), rng.normal(), rng.normal())};
    f.depth = DepthImage(rows * stride, cols * stride, 0.0f);
    for (float& d : f.depth.data) d = static_cast<float>(rng.uniform(0.2, 5.0));
    f.embeddings = {rows, cols, 3, std::vector<float>(static_cast<std::size_t>(rows * cols * 3), 1.0f)};
    const auto bp = back_project(f);
    ASSERT_EQ(bp.batch.size(), rows * cols);
    for (Eigen::Index i = 0; i < bp.batch.size(); ++i) {
      const PatchIndex p = bp.batch.patches[static_cast<std::size_t>(i)];
      const Projection pr = forward_project(bp.batch.points.col(i), f.pose, f.intrinsics);
      EXPECT_NEAR(pr.pixel.x(), patch_center(p.col, stride), 1e-9);
      EXPECT_NEAR(pr.pixel.y(), patch_center(p.row, stride), 1e-9);
      const float z = f.depth.at(patch_depth_pixel(p.row, stride), patch_depth_pixel(p.col, stride));
      EXPECT_NEAR(pr.depth, z, 1e-9);
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000);
}

TEST(BackProject, SkipCounts) {
  CameraFrame f = make_frame(3, 3, 4, 1.0f, 2);
  f.depth.at(0, 0) = 0.0f;
  f.depth.at(0, 1) = std::nanf("");
  f.depth.at(0, 2) = -1.0f;
  PatchMask mask(3, 3, 0);
  mask.at(1, 1) = 1;
  f.dynamic_mask = mask;
  std::fill_n(f.embeddings.patch(2, 2), 4, 0.0f);
  const auto bp = back_project(f);
  EXPECT_EQ(bp.skipped.invalid_depth, 3);
  EXPECT_EQ(bp.skipped.masked, 1);
  EXPECT_EQ(bp.skipped.zero_embedding, 1);
  EXPECT_EQ(bp.batch.size(), 9 - 5);
}

TEST(BackProject, AllInvalidGivesEmptyBatch) {
  CameraFrame f = make_frame(2, 2, 4, 0.0f, 2);
  const auto bp = back_project(f);
  EXPECT_TRUE(bp.batch.empty());
  EXPECT_EQ(bp.skipped.invalid_depth, 4);
}

TEST(BackProject, BoundsFilter) {
  CameraFrame f = make_frame(1, 2, 4, 1.0f, 2);
  f.intrinsics = {1.0, 1.0, 0.5, 0.0, 1};  // patch centers at u = 0, 1 -> x = -0.5, 0.5
  const Aabb b{Vec3(-1, -1, 0), Vec3(0, 1, 2)};
  const auto bp = back_project(f, &b);
  EXPECT_EQ(bp.batch.size(), 1);
  EXPECT_EQ(bp.skipped.out_of_bounds, 1);
}

TEST(BackProject, RejectsNonOrthonormalRotation) {
  CameraFrame f = make_frame(1, 1, 4, 1.0f, 1);
  f.pose.rotation(0, 0) = 1.1;
  try {
    back_project(f);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kInvalidFrame);
  }
  f.pose.rotation = Mat3::Identity();
  f.pose.rotation(2, 2) = -1.0;  // reflection
  EXPECT_THROW(back_project(f), Error);
}

TEST(BackProject, RejectsMismatchedShapes) {
  CameraFrame f = make_frame(2, 2, 4, 1.0f, 1);
  f.depth = DepthImage(1, 2, 1.0f);  // smaller than the patch grid needs
  EXPECT_THROW(back_project(f), Error);
  f = make_frame(2, 2, 4, 1.0f, 1);
  f.dynamic_mask = PatchMask(1, 2, 0);
  EXPECT_THROW(back_project(f), Error);
}

TEST(ForwardProject, Examples) {
  const CameraIntrinsics k{1.0, 1.0, 0.0, 0.0, 1};
  CameraPose pose;
  Projection p = forward_project(Vec3(0, 0, 1), pose, k);
  EXPECT_EQ(p.pixel, Eigen::Vector2d(0, 0));
  EXPECT_EQ(p.depth, 1.0);
  pose.translation = Vec3(1, 2, 3);
  p = forward_project(Vec3(1, 2, 4), pose, k);
  EXPECT_EQ(p.pixel, Eigen::Vector2d(0, 0));
  EXPECT_EQ(p.depth, 1.0);
}

TEST(ForwardProject, BehindCamera) {
  const CameraIntrinsics k{1.0, 1.0, 0.0, 0.0, 1};
  EXPECT_THROW(forward_project(Vec3(0, 0, -1), CameraPose{}, k), Error);
  EXPECT_THROW(forward_project(Vec3(1, 0, 0), CameraPose{}, k), Error);
}

TEST(FilterDynamic, Masks) {
  const CameraFrame f = make_frame(2, 2, 4, 1.0f, 5);
  const SampleBatch b = back_project(f).batch;
  EXPECT_EQ(filter_dynamic(b, PatchMask(2, 2, 0)).size(), 4);
  EXPECT_EQ(filter_dynamic(b, PatchMask(2, 2, 1)).size(), 0);
  PatchMask checker(2, 2, 0);
  checker.at(0, 0) = 1;
  checker.at(1, 1) = 1;
  const SampleBatch kept = filter_dynamic(b, checker);
  ASSERT_EQ(kept.size(), 2);
  // Survivors keep their order.
  EXPECT_EQ(kept.patches[0].row, 0);
  EXPECT_EQ(kept.patches[0].col, 1);
  EXPECT_EQ(kept.patches[1].row, 1);
  EXPECT_EQ(kept.patches[1].col, 0);
  EXPECT_THROW(filter_dynamic(b, PatchMask(3, 2, 0)), Error);
}
