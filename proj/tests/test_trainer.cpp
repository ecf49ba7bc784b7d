#include <gtest/gtest.h>

#include <array>
#include <cmath>

#include "latmap/error.hpp"
#include "latmap/gradcheck.hpp"
#include "latmap/trainer.hpp"

using namespace latmap;

namespace {

GridConfig small_grid() {
  GridConfig g;
  g.bounds = {Vec3::Zero(), Vec3::Ones()};
  g.cell_sizes = {0.5, 0.25};
  return g;
}

MlpDecoder small_decoder(int k, std::uint64_t seed = 7) {
  const std::array<int, 1> hidden{32};
  return init_decoder(seed, hidden, 16, k);
}

SampleBatch random_batch(Eigen::Index n, int k, std::uint64_t seed) {
  Rng rng(seed);
  SampleBatch b;
  b.points.resize(3, n);
  b.targets.resize(k, n);
  b.patches.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    b.points.col(i) = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    for (int r = 0; r < k; ++r) b.targets(r, i) = rng.normal();
    b.targets.col(i).normalize();
  }
  return b;
}

}  // namespace

TEST(CosineLoss, Examples) {
  const Eigen::Vector3d y = Eigen::Vector3d(1, 2, 2) / 3.0;
  EXPECT_NEAR(cosine_loss(y, y).loss, 0.0, 1e-15);
  EXPECT_NEAR(cosine_loss(-y, y).loss, 2.0, 1e-15);
  EXPECT_NEAR(cosine_loss(Eigen::Vector3d(2, -1, 0), y).loss, 1.0, 1e-15);
}

TEST(CosineLoss, ZeroPredictionIsFinite) {
  const Eigen::Vector3d y(1, 0, 0);
  const LossEval e = cosine_loss(Eigen::Vector3d::Zero(), y);
  EXPECT_EQ(e.loss, 1.0);
  EXPECT_TRUE(e.grad.allFinite());
}

TEST(CosineLoss, ScaleInvariant) {
  Rng rng(2);
  for (int t = 0; t < 100; ++t) {
    Eigen::VectorXd p(8), y(8);
    for (int i = 0; i < 8; ++i) {
      p[i] = rng.normal();
      y[i] = rng.normal();
    }
    y.normalize();
    const double a = rng.uniform(0.01, 100.0);
    EXPECT_NEAR(cosine_loss(a * p, y).loss, cosine_loss(p, y).loss, 1e-9);
  }
}

TEST(CosineLoss, GradientMatchesFiniteDifferences) {
  Eigen::VectorXd p(5), y(5);
  p << 0.3, -1.2, 0.8, 2.0, -0.1;
  y << 1, 0, 2, -1, 0.5;
  y.normalize();
  const LossEval e = cosine_loss(p, y);
  for (int i = 0; i < 5; ++i) {
    Eigen::VectorXd pp = p, pm = p;
    pp[i] += 1e-6;
    pm[i] -= 1e-6;
    EXPECT_NEAR(e.grad[i], (cosine_loss(pp, y).loss - cosine_loss(pm, y).loss) / 2e-6, 1e-8);
  }
  const LossEval l2 = l2_loss(p, y);
  EXPECT_NEAR(l2.loss, (p - y).squaredNorm(), 1e-15);
  EXPECT_LT((l2.grad - 2.0 * (p - y)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Adam, ZeroGradientLeavesParamsUnchanged) {
  std::vector<double> p{1.0, -2.0, 3.0};
  const std::vector<double> g(3, 0.0);
  AdamMoments m;
  adam_update(p, g, m, 1, 0.1, AdamConfig{});
  EXPECT_EQ(p, (std::vector<double>{1.0, -2.0, 3.0}));
}

TEST(Adam, FirstStepHandCalculation) {
  std::vector<double> p{1.0, -2.0, 0.5};
  const std::vector<double> g{0.3, -4.0, 1e-3};
  AdamMoments m;
  const AdamConfig cfg;
  const double lr = 0.01;
  adam_update(p, g, m, 1, lr, cfg);
  const std::vector<double> p0{1.0, -2.0, 0.5};
  for (std::size_t i = 0; i < 3; ++i) {
    // Bias-corrected first step: mhat = g, vhat = g^2.
    const double mhat = ((1 - cfg.beta1) * g[i]) / (1 - cfg.beta1);
    const double vhat = ((1 - cfg.beta2) * g[i] * g[i]) / (1 - cfg.beta2);
    const double expected = p0[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
    EXPECT_NEAR(p[i], expected, 1e-12);
    EXPECT_NEAR(p[i], p0[i] - lr * (g[i] > 0 ? 1 : -1), 1e-7);
  }
}

TEST(Adam, Stateless) {
  std::vector<double> a{1.0, 2.0}, b{1.0, 2.0};
  const std::vector<double> g{0.5, -0.25};
  AdamMoments ma, mb;
  for (int t = 1; t <= 5; ++t) {
    adam_update(a, g, ma, t, 0.1, AdamConfig{});
    adam_update(b, g, mb, t, 0.1, AdamConfig{});
  }
  EXPECT_EQ(a, b);
  EXPECT_EQ(ma.m, mb.m);
  EXPECT_EQ(ma.v, mb.v);
  EXPECT_THROW(adam_update(a, std::vector<double>{1.0}, ma, 6, 0.1, AdamConfig{}), Error);
}

TEST(TrainStep, EmptyBatchThrows) {
  LatentGrid grid(small_grid());
  MlpDecoder dec = small_decoder(4);
  TrainState state;
  EXPECT_THROW(train_step(grid, dec, SampleBatch{}, TrainConfig{}, state), Error);
}

TEST(TrainStep, OutOfBoundsThrows) {
  LatentGrid grid(small_grid());
  MlpDecoder dec = small_decoder(4);
  TrainState state;
  SampleBatch b = random_batch(2, 4, 1);
  b.points.col(1) = Vec3(2, 0, 0);
  EXPECT_THROW(train_step(grid, dec, b, TrainConfig{}, state), Error);
}

TEST(TrainStep, SingleSampleOverfits) {
  LatentGrid grid(small_grid());
  MlpDecoder dec = small_decoder(16);
  TrainState state;
  const SampleBatch b = random_batch(1, 16, 3);
  double loss = 1.0;
  int steps = 0;
  for (; steps < 500 && loss >= 1e-3; ++steps) {
    train_step(grid, dec, b, TrainConfig{}, state);
    loss = loss_and_gradients(grid, dec, b, LossKind::kCosine, nullptr, nullptr);
  }
  EXPECT_LT(loss, 1e-3);
  EXPECT_LE(steps, 500);
}

TEST(TrainStep, ReturnsPreUpdateLossAndMarksOccupancy) {
  LatentGrid grid(small_grid());
  MlpDecoder dec = small_decoder(4);
  TrainState state;
  const SampleBatch b = random_batch(3, 4, 4);
  const double before = loss_and_gradients(grid, dec, b, LossKind::kCosine, nullptr, nullptr);
  EXPECT_EQ(train_step(grid, dec, b, TrainConfig{}, state), before);
  LatentGrid expected(small_grid());
  for (Eigen::Index i = 0; i < b.size(); ++i) expected.mark_occupied(b.points.col(i));
  EXPECT_EQ(grid.occupancy(), expected.occupancy());
}

TEST(TrainStep, FrozenDecoderUnchanged) {
  LatentGrid grid(small_grid());
  MlpDecoder dec = small_decoder(8);
  const MlpDecoder original = dec;
  TrainConfig cfg;
  cfg.freeze_decoder = true;
  TrainState state;
  const SampleBatch b = random_batch(64, 8, 5);
  for (int s = 0; s < 20; ++s) train_step(grid, dec, b, cfg, state);
  EXPECT_TRUE(dec == original);
  EXPECT_FALSE(grid == LatentGrid(small_grid()));

  cfg.freeze_decoder = false;
  train_step(grid, dec, b, cfg, state);
  EXPECT_FALSE(dec == original);
}

TEST(TrainStep, MonotoneAfterWarmupInMostSeeds) {
  // Fixed batch, full-batch steps: after 50 steps the loss should stop going up.
  const int trials = 20;
  int monotone = 0;
  for (int t = 0; t < trials; ++t) {
    LatentGrid grid(small_grid());
    MlpDecoder dec = small_decoder(8, 100 + static_cast<std::uint64_t>(t));
    TrainState state;
    const SampleBatch b = random_batch(32, 8, 200 + static_cast<std::uint64_t>(t));
    std::vector<double> losses;
    for (int s = 0; s < 200; ++s) losses.push_back(train_step(grid, dec, b, TrainConfig{}, state));
    bool ok = true;
    for (std::size_t s = 51; s < losses.size(); ++s) ok = ok && losses[s] <= losses[s - 1];
    monotone += ok ? 1 : 0;
  }
  EXPECT_GE(monotone, 19) << monotone << " of " << trials;
}

TEST(LossAndGradients, ThreadCountIndependent) {
  LatentGrid grid(small_grid());
  MlpDecoder dec = small_decoder(8);
  const SampleBatch b = random_batch(300, 8, 6);
  GridGradient g1 = grid.make_gradient(), g2 = grid.make_gradient();
  MlpGradient d1 = dec.make_gradient(), d2 = dec.make_gradient();
  const double l1 = loss_and_gradients(grid, dec, b, LossKind::kCosine, &g1, &d1);
  const double l2 = loss_and_gradients(grid, dec, b, LossKind::kCosine, &g2, &d2);
  EXPECT_EQ(l1, l2);
  EXPECT_EQ(g1.levels, g2.levels);
}

TEST(FitScene, Deterministic) {
  const SampleBatch data = random_batch(500, 8, 9);
  TrainConfig cfg;
  cfg.batch_size = 64;
  cfg.steps = 40;
  cfg.seed = 5;
  LatentGrid g1(small_grid()), g2(small_grid());
  MlpDecoder d1 = small_decoder(8), d2 = small_decoder(8);
  const auto h1 = fit_scene(g1, d1, data, cfg);
  const auto h2 = fit_scene(g2, d2, data, cfg);
  ASSERT_EQ(h1.size(), 40u);
  EXPECT_EQ(h1, h2);
  EXPECT_TRUE(g1 == g2);
  EXPECT_TRUE(d1 == d2);

  cfg.seed = 6;
  LatentGrid g3(small_grid());
  MlpDecoder d3 = small_decoder(8);
  EXPECT_NE(fit_scene(g3, d3, data, cfg), h1);
}

TEST(FitScene, EpochsOverrideSteps) {
  const SampleBatch data = random_batch(100, 4, 9);
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.epochs = 2;
  LatentGrid g(small_grid());
  MlpDecoder d = small_decoder(4);
  int calls = 0;
  const auto h = fit_scene(g, d, data, cfg, [&](int step, double) { EXPECT_EQ(step, ++calls); });
  EXPECT_EQ(h.size(), 8u);  // ceil(100 / 32) = 4 batches per epoch
  EXPECT_EQ(calls, 8);
}

TEST(FitScene, EmptyDatasetThrows) {
  LatentGrid g(small_grid());
  MlpDecoder d = small_decoder(4);
  EXPECT_THROW(fit_scene(g, d, SampleBatch{}, TrainConfig{}), Error);
}

TEST(BatchSampler, CoversEachEpoch) {
  BatchSampler s(10, 4, 1);
  EXPECT_EQ(s.batches_per_epoch(), 3);
  std::vector<int> seen(10, 0);
  for (int b = 0; b < 3; ++b) {
    for (auto i : s.next()) ++seen[static_cast<std::size_t>(i)];
  }
  for (int c : seen) EXPECT_EQ(c, 1);
}

TEST(Pretrain, InconsistentDimThrows) {
  const std::vector<SampleBatch> scenes{random_batch(10, 4, 1), random_batch(10, 8, 2)};
  EXPECT_THROW(pretrain_decoder(scenes, {small_grid(), small_grid()}, small_decoder(4), TrainConfig{}), Error);
  EXPECT_THROW(pretrain_decoder({}, {}, small_decoder(4), TrainConfig{}), Error);
}

TEST(Pretrain, OneSceneMatchesFitScene) {
  const SampleBatch data = random_batch(200, 8, 10);
  TrainConfig cfg;
  cfg.batch_size = 50;
  cfg.steps = 30;
  cfg.seed = 3;
  const PretrainResult r = pretrain_decoder({data}, {small_grid()}, small_decoder(8), cfg);
  LatentGrid g(small_grid());
  MlpDecoder d = small_decoder(8);
  const auto h = fit_scene(g, d, data, cfg);
  EXPECT_EQ(r.losses, h);
  ASSERT_EQ(r.grids.size(), 1u);
  EXPECT_TRUE(r.grids[0] == g);
  EXPECT_TRUE(r.decoder == d);
}

TEST(Pretrain, DecoderChangesIffNotFrozen) {
  const std::vector<SampleBatch> scenes{random_batch(100, 8, 1), random_batch(100, 8, 2)};
  TrainConfig cfg;
  cfg.batch_size = 32;
  cfg.steps = 10;
  const MlpDecoder init = small_decoder(8);
  EXPECT_FALSE(pretrain_decoder(scenes, {small_grid(), small_grid()}, init, cfg).decoder == init);
  cfg.freeze_decoder = true;
  const PretrainResult frozen = pretrain_decoder(scenes, {small_grid(), small_grid()}, init, cfg);
  EXPECT_TRUE(frozen.decoder == init);
  EXPECT_EQ(frozen.grids.size(), 2u);
}

TEST(Gradcheck, CompositeGradientMatches) {
  GradcheckConfig cfg;
  cfg.cases = 20;
  const GradcheckReport r = run_gradcheck(99, cfg);
  EXPECT_TRUE(r.ok()) << r.first_failure;
  EXPECT_EQ(r.cases, 20);
  EXPECT_GT(r.grid_params_checked, 0);
  EXPECT_GT(r.decoder_params_checked, 0);
}
