#include "latmap/pipeline.hpp"

#include <cmath>

#include "latmap/error.hpp"

namespace latmap {

void apply_seed(PipelineConfig& cfg, std::uint64_t seed) {
  cfg.train.seed = seed;
  cfg.online.seed = seed;
  cfg.aggregator.seed = seed;
}

Aabb resolve_bounds(const PipelineConfig& cfg, const DatasetManifest& manifest) {
  if (cfg.bounds) return *cfg.bounds;
  if (manifest.bounds) return *manifest.bounds;
  throw Error(ErrorKind::kInvalidArgument, "no scene bounds: set grid.bounds in the config or bounds in the manifest");
}

BuildResult build_map(const DatasetManifest& manifest, PipelineConfig cfg, const Mlp* decoder,
                      const StepCallback& on_step) {
  cfg.train.validate();
  cfg.grid.bounds = resolve_bounds(cfg, manifest);
  BuildResult r;
  const SampleBatch data = load_samples(manifest, manifest.frames, &cfg.grid.bounds, &r.skipped);
  if (data.size() == 0) throw Error(ErrorKind::kInvalidFrame, "dataset produced no valid samples");
  r.num_samples = data.size();

  r.map.grid = LatentGrid(cfg.grid);
  if (decoder) {
    if (decoder->in_dim() != r.map.grid.encoded_dim() || decoder->out_dim() != data.dim()) {
      throw Error(ErrorKind::kInvalidArgument, "decoder shape does not match the grid and dataset");
    }
    r.map.decoder = *decoder;
  } else {
    r.map.decoder =
        init_decoder(cfg.decoder.seed, cfg.decoder.hidden, r.map.grid.encoded_dim(), static_cast<int>(data.dim()));
  }
  r.losses = fit_scene(r.map.grid, r.map.decoder, data, cfg.train, on_step);
  r.map.revision = r.losses.size();
  r.train_cosine = mean_cosine(r.map.grid, r.map.decoder, data);
  if (!manifest.heldout.empty()) {
    const SampleBatch h = load_samples(manifest, manifest.heldout, &cfg.grid.bounds);
    if (h.size() > 0) r.heldout_cosine = mean_cosine(r.map.grid, r.map.decoder, h);
  }
  return r;
}

ReplayResult replay_map(LatentMap map, const StreamManifest& stream, const OnlineConfig& cfg) {
  const auto manifest = load_dataset_manifest(stream.dataset);
  OnlineMapper mapper(std::move(map.grid), map.decoder, cfg);
  ReplayResult r;
  r.reports = replay(mapper, stream.steps, [&](const std::string& id) {
    return load_frame(manifest, manifest.find(id));
  });
  for (const auto& rep : r.reports) r.updates += rep.updated ? 1 : 0;
  r.optimization_steps = mapper.total_optimization_steps();
  r.map.revision = map.revision + static_cast<std::uint64_t>(r.optimization_steps);
  r.map.decoder = mapper.decoder();
  r.map.grid = std::move(mapper).take_grid();
  return r;
}

MapToken map_token(const LatentMap& map, const AggregatorWeights& weights, bool allow_empty) {
  if (weights.feature_dim() != map.decoder.out_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "aggregator expects " + std::to_string(weights.feature_dim()) +
                                                 "-d features, map decodes " +
                                                 std::to_string(map.decoder.out_dim()));
  }
  if (map.grid.occupancy().empty()) {
    if (!allow_empty) throw Error(ErrorKind::kEmptyMap, "map has no occupied vertices");
    return zero_token(weights.token_dim(), map.revision);
  }
  return aggregate(decode_occupied(map.grid, map.decoder), weights, map.grid.config().bounds, map.revision);
}

}  // namespace latmap
