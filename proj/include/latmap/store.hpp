#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "latmap/grid.hpp"
#include "latmap/ingest.hpp"
#include "latmap/mlp.hpp"
#include "latmap/online.hpp"
#include "latmap/token.hpp"

namespace latmap {

/// A latent map: scene-specific grid plus the decoder it was fit with.
struct LatentMap {
  LatentGrid grid;
  MlpDecoder decoder;
  std::uint64_t revision = 0;  // number of optimizer steps applied so far
};

inline constexpr std::uint32_t kMapFormatVersion = 1;
inline constexpr std::uint32_t kDecoderFormatVersion = 1;
inline constexpr std::uint32_t kAggregatorFormatVersion = 1;

// Binary formats. Every loader validates the whole payload (including the
// trailing CRC-32 where the format has one) before returning, and throws
// Error{kFormat} with an offset on any problem.
std::vector<std::uint8_t> serialize_map(const LatentMap& map);
LatentMap deserialize_map(std::span<const std::uint8_t> bytes);
void save_map(const LatentMap& map, const std::filesystem::path& path);
LatentMap load_map(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_decoder(const Mlp& decoder);
Mlp deserialize_decoder(std::span<const std::uint8_t> bytes);
void save_decoder(const Mlp& decoder, const std::filesystem::path& path);
Mlp load_decoder(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_aggregator(const AggregatorWeights& weights);
AggregatorWeights deserialize_aggregator(std::span<const std::uint8_t> bytes);
void save_aggregator(const AggregatorWeights& weights, const std::filesystem::path& path);
AggregatorWeights load_aggregator(const std::filesystem::path& path);

std::vector<std::uint8_t> serialize_token(const MapToken& token);
MapToken deserialize_token(std::span<const std::uint8_t> bytes);
std::string token_to_text(const MapToken& token);

// Per-frame files of a dataset directory.
std::vector<std::uint8_t> serialize_depth(const DepthImage& depth);
DepthImage deserialize_depth(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_embeddings(const EmbeddingGrid& grid);
EmbeddingGrid deserialize_embeddings(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> serialize_mask(const PatchMask& mask);
PatchMask deserialize_mask(std::span<const std::uint8_t> bytes);
std::string pose_to_text(const CameraPose& pose);
CameraPose pose_from_text(const std::string& text);
std::string intrinsics_to_text(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_text(const std::string& text);

struct FrameEntry {
  std::string id;
  std::string depth;
  std::string embeddings;
  std::string pose;
  std::string intrinsics;
  std::optional<std::string> mask;
};

struct DatasetManifest {
  std::filesystem::path root;
  std::optional<Aabb> bounds;
  std::vector<FrameEntry> frames;
  std::vector<FrameEntry> heldout;
  std::vector<FrameEntry> stream;  // frames referenced only by stream manifests

  const FrameEntry& find(const std::string& id) const;
};

DatasetManifest load_dataset_manifest(const std::filesystem::path& dir);
void save_dataset_manifest(const DatasetManifest& manifest);
CameraFrame load_frame(const DatasetManifest& manifest, const FrameEntry& entry);
/// Writes the frame's files next to the manifest using `<id>.*` names and
/// returns the entry describing them.
FrameEntry write_frame(const std::filesystem::path& dir, const CameraFrame& frame);

/// Back-projects every listed frame (bounded) and concatenates the samples.
SampleBatch load_samples(const DatasetManifest& manifest, const std::vector<FrameEntry>& entries,
                         const Aabb* bounds, SkipCounts* skipped = nullptr);

struct StreamManifest {
  std::filesystem::path dataset;
  std::vector<StreamStep> steps;
};

StreamManifest load_stream_manifest(const std::filesystem::path& path);
void save_stream_manifest(const StreamManifest& stream, const std::filesystem::path& path);

/// Top principal components of the columns of `features`, via seeded power
/// iteration with deflation. Returns k x components (zero columns where the
/// remaining variance vanishes).
Eigen::MatrixXd principal_components(const Eigen::MatrixXd& features, int components, std::uint64_t seed,
                                     int iterations = 100);

struct ColoredPoint {
  Vec3 position;
  std::array<std::uint8_t, 3> rgb;
};

/// Decodes occupied vertices and colors them by a 3-component PCA of the
/// decoded features, min-max scaled per channel.
std::vector<ColoredPoint> pca_colored_points(const LatentMap& map, std::uint64_t seed = 0);
std::string to_ply(const std::vector<ColoredPoint>& points);
std::size_t export_pca_ply(const LatentMap& map, const std::filesystem::path& path, std::uint64_t seed = 0);

}  // namespace latmap
