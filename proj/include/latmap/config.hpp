#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "latmap/grid.hpp"
#include "latmap/online.hpp"
#include "latmap/synth.hpp"
#include "latmap/token.hpp"
#include "latmap/trainer.hpp"

namespace latmap {

struct DecoderConfig {
  std::vector<int> hidden{128, 128};
  std::uint64_t seed = 7;
};

/// Everything a pipeline run needs. Missing sections keep their defaults;
/// unknown keys are rejected.
struct PipelineConfig {
  std::optional<Aabb> bounds;  // falls back to the dataset manifest
  GridConfig grid;
  DecoderConfig decoder;
  TrainConfig train;
  OnlineConfig online;
  AggregatorConfig aggregator;
};

PipelineConfig parse_pipeline_config(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
nlohmann::json to_json(const PipelineConfig& cfg);

SynthSpec parse_synth_spec(const nlohmann::json& j);
SynthSpec load_synth_spec(const std::filesystem::path& path);
nlohmann::json to_json(const SynthSpec& spec);

}  // namespace latmap
