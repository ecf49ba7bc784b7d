#pragma once

// End-to-end operations shared by the command-line tool and the Python module.

#include <cstdint>
#include <optional>
#include <vector>

#include "latmap/config.hpp"
#include "latmap/store.hpp"

namespace latmap {

/// Applies a global seed to every seeded stage (training order, online
/// sampling, aggregator initialization).
void apply_seed(PipelineConfig& cfg, std::uint64_t seed);

/// Config bounds when set, otherwise the manifest's; throws when neither is.
Aabb resolve_bounds(const PipelineConfig& cfg, const DatasetManifest& manifest);

struct BuildResult {
  LatentMap map;
  std::vector<double> losses;
  std::int64_t num_samples = 0;
  SkipCounts skipped;
  double train_cosine = 0.0;
  std::optional<double> heldout_cosine;  // absent when the dataset has no held-out frames
};

/// Fits a fresh grid to the manifest's training frames. Uses `decoder` when
/// given (its shape must match), otherwise a seeded initialization.
BuildResult build_map(const DatasetManifest& manifest, PipelineConfig cfg, const Mlp* decoder = nullptr,
                      const StepCallback& on_step = {});

struct ReplayResult {
  LatentMap map;
  std::vector<StepReport> reports;
  std::int64_t updates = 0;
  std::int64_t optimization_steps = 0;
};

/// Runs the online update loop over a recorded stream, reading frames from
/// the stream's dataset directory.
ReplayResult replay_map(LatentMap map, const StreamManifest& stream, const OnlineConfig& cfg);

/// Token of a map with the given (or seeded) aggregator weights. With
/// `allow_empty`, a map without occupied vertices yields a zero token.
MapToken map_token(const LatentMap& map, const AggregatorWeights& weights, bool allow_empty = false);

}  // namespace latmap
