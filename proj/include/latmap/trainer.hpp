#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "latmap/grid.hpp"
#include "latmap/ingest.hpp"
#include "latmap/mlp.hpp"
#include "latmap/random.hpp"

namespace latmap {

enum class LossKind { kCosine, kL2 };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int batch_size = 4096;
  double lr_grid = 1e-2;
  double lr_decoder = 1e-3;
  AdamConfig adam;
  int steps = 3000;
  int epochs = 0;  // when > 0, overrides `steps` with epochs * batches-per-epoch
  bool freeze_decoder = false;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::kCosine;

  void validate() const;
};

inline constexpr double kCosineDenominatorEps = 1e-8;

struct LossEval {
  double loss = 0.0;
  Eigen::VectorXd grad;  // dLoss / dPrediction
};

/// 1 - cos(prediction, target); the denominator is clamped at 1e-8.
LossEval cosine_loss(const Eigen::Ref<const Eigen::VectorXd>& prediction,
                     const Eigen::Ref<const Eigen::VectorXd>& target);
/// Squared Euclidean distance, for ablations.
LossEval l2_loss(const Eigen::Ref<const Eigen::VectorXd>& prediction,
                 const Eigen::Ref<const Eigen::VectorXd>& target);

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
};

/// Moments for a fixed list of parameter tensors plus the shared step count.
struct AdamState {
  std::vector<AdamMoments> tensors;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update of a single tensor at (1-based) step `t`.
/// Entries whose gradient and moments are all zero are left untouched, which
/// is exactly what the dense update would do.
/// With `round_to_f32`, updated entries are rounded to float32 precision.
void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
                 std::int64_t t, double lr, const AdamConfig& cfg, bool round_to_f32 = false);

/// Advances `state` by one step and updates every tensor.
void adam_step(const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state, double lr,
               const AdamConfig& cfg, bool round_to_f32 = false);

/// Buffers reused across steps so a training loop does not reallocate.
struct StepWorkspace {
  std::vector<Interpolation> cache;
  Eigen::MatrixXd encoded;
  MlpTape tape;
  Eigen::MatrixXd upstream;
  Eigen::MatrixXd d_encoded;
  GridGradient grid_grad;
  MlpGradient decoder_grad;
};

/// Optimizer state for one grid and (optionally shared) decoder.
struct TrainState {
  AdamState grid;
  AdamState decoder;
  StepWorkspace workspace;
};

/// Mean loss over `batch` plus, when requested, its gradients with respect to
/// the grid features and decoder parameters. Does not modify anything.
double loss_and_gradients(const LatentGrid& grid, const MlpDecoder& decoder, const SampleBatch& batch,
                          LossKind loss, GridGradient* grid_grad, MlpGradient* decoder_grad,
                          StepWorkspace* workspace = nullptr);

/// One forward/backward pass over `batch` followed by Adam updates of the
/// grid and, unless frozen, the decoder. Marks every sample occupied.
/// Returns the mean loss before the update.
double train_step(LatentGrid& grid, MlpDecoder& decoder, const SampleBatch& batch, const TrainConfig& cfg,
                  TrainState& state, double lr_grid_override = 0.0);

using StepCallback = std::function<void(int step, double loss)>;

/// Seeded shuffled mini-batch optimization of one scene. Returns per-step losses.
std::vector<double> fit_scene(LatentGrid& grid, MlpDecoder& decoder, const SampleBatch& dataset,
                              const TrainConfig& cfg, const StepCallback& on_step = {});

struct PretrainResult {
  MlpDecoder decoder;
  std::vector<LatentGrid> grids;
  std::vector<double> losses;
};

/// Joint optimization of one shared decoder and a grid per scene, with
/// round-robin mini-batches across scenes.
PretrainResult pretrain_decoder(const std::vector<SampleBatch>& scenes, const std::vector<GridConfig>& grids,
                                MlpDecoder decoder, const TrainConfig& cfg, const StepCallback& on_step = {});

/// Draws mini-batches from a dataset, reshuffling at every epoch boundary.
class BatchSampler {
 public:
  BatchSampler(Eigen::Index dataset_size, int batch_size, std::uint64_t seed);
  std::vector<Eigen::Index> next();
  Eigen::Index batches_per_epoch() const;

 private:
  void reshuffle();

  std::vector<Eigen::Index> order_;
  Eigen::Index cursor_ = 0;
  int batch_size_;
  Rng rng_;
};

SampleBatch concat(const std::vector<SampleBatch>& batches);

Eigen::VectorXd decode_point(const LatentGrid& grid, const MlpDecoder& decoder, const Vec3& x);
/// Per-sample cosine similarity between decoded features and targets.
Eigen::VectorXd sample_cosines(const LatentGrid& grid, const MlpDecoder& decoder, const SampleBatch& batch);
double mean_cosine(const LatentGrid& grid, const MlpDecoder& decoder, const SampleBatch& batch);

}  // namespace latmap
