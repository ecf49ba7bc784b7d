#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

#include "latmap/grid.hpp"
#include "latmap/mlp.hpp"

namespace latmap {

struct PosEncConfig {
  int num_frequencies = 6;
  Aabb bounds;

  int output_dim() const { return 6 * num_frequencies; }
};

/// Normalizes z into [0,1]^3 with the bounds and emits sin/cos(2^b * pi * u)
/// for b = 0..B-1, axis-major: [sin b0, cos b0, sin b1, cos b1, ...] for x,
/// then y, then z.
Eigen::VectorXd positional_encode(const Vec3& z, const PosEncConfig& cfg);

/// Occupied finest-level vertices with their decoded features, sorted by
/// integer coordinate.
struct DecodedSet {
  std::vector<VertexCoord> coords;
  Eigen::Matrix3Xd positions;
  Eigen::MatrixXd features;  // k x n

  Eigen::Index size() const { return positions.cols(); }
};

DecodedSet decode_occupied(const LatentGrid& grid, const MlpDecoder& decoder);

struct AggregatorConfig {
  std::vector<int> hidden{128, 256};
  int token_dim = 256;
  int num_frequencies = 6;
  std::uint64_t seed = 0;
};

/// Shared per-point network plus the positional-encoding width it expects.
struct AggregatorWeights {
  Mlp mlp;
  int num_frequencies = 6;

  static AggregatorWeights init(const AggregatorConfig& cfg, int feature_dim);
  int feature_dim() const { return mlp.in_dim() - 6 * num_frequencies; }
  int token_dim() const { return mlp.out_dim(); }
};

struct MapToken {
  Eigen::VectorXd values;
  std::int64_t vertex_count = 0;
  std::uint64_t map_revision = 0;
};

/// Per-point network outputs (m x n) before pooling.
Eigen::MatrixXd point_features(const DecodedSet& set, const AggregatorWeights& weights, const Aabb& bounds);

/// Element-wise max over the per-point outputs. Throws kEmptyMap on an empty set.
MapToken aggregate(const DecodedSet& set, const AggregatorWeights& weights, const Aabb& bounds,
                   std::uint64_t map_revision = 0);

/// Fallback token for maps without occupied vertices.
MapToken zero_token(int token_dim, std::uint64_t map_revision = 0);

}  // namespace latmap
