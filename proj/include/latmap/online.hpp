#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "latmap/grid.hpp"
#include "latmap/ingest.hpp"
#include "latmap/mlp.hpp"
#include "latmap/trainer.hpp"

namespace latmap {

struct OnlineConfig {
  int t_update = 5;   // environment steps between updates
  int k_update = 20;  // optimization steps per update
  double eta = 1e-2;  // grid learning rate
  double lr_decoder = 1e-3;  // only used when the decoder is not frozen
  bool freeze_decoder = true;
  int batch_size = 4096;
  std::uint64_t seed = 0;
  AdamConfig adam;

  void validate() const;
};

enum class SkipReason { kNone, kOffTick, kGrasping, kNoFrame, kEmptyFrame };

const char* to_string(SkipReason reason);

struct StepReport {
  std::int64_t tau = 0;
  bool updated = false;
  SkipReason skip = SkipReason::kNone;
  std::int64_t num_samples = 0;
  SkipCounts ingest_skipped;
  std::vector<double> losses;  // one per optimization step

  int optimization_steps() const { return static_cast<int>(losses.size()); }
};

/// Periodic online re-optimization of grid features from streaming frames.
/// The decoder is frozen unless the config says otherwise. Optimizer moments
/// persist across update ticks.
class OnlineMapper {
 public:
  OnlineMapper(LatentGrid grid, MlpDecoder decoder, OnlineConfig config);

  /// Advances tau by one. On update ticks (tau % t_update == 0) with a frame
  /// and no grasp in progress, runs exactly k_update optimization steps on
  /// samples from that frame alone.
  StepReport step(const CameraFrame* frame, bool grasping);

  std::int64_t tau() const { return tau_; }
  const LatentGrid& grid() const { return grid_; }
  const MlpDecoder& decoder() const { return decoder_; }
  const OnlineConfig& config() const { return config_; }
  const std::vector<StepReport>& log() const { return log_; }
  std::int64_t total_optimization_steps() const { return total_steps_; }

  LatentGrid take_grid() && { return std::move(grid_); }

 private:
  LatentGrid grid_;
  MlpDecoder decoder_;
  OnlineConfig config_;
  TrainConfig train_cfg_;
  TrainState state_;
  std::int64_t tau_ = 0;
  std::int64_t total_steps_ = 0;
  std::vector<StepReport> log_;
};

struct StreamStep {
  std::optional<std::string> frame_id;
  bool grasping = false;
};

using FrameProvider = std::function<CameraFrame(const std::string& frame_id)>;

/// Applies `step` over the stream, loading frames on demand.
std::vector<StepReport> replay(OnlineMapper& mapper, const std::vector<StreamStep>& stream,
                               const FrameProvider& frames);

/// CSV rendering of a report log (header + one row per step).
std::string reports_to_csv(const std::vector<StepReport>& reports);

}  // namespace latmap
