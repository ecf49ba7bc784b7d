#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <set>
#include <span>
#include <vector>

#include "latmap/geometry.hpp"

namespace latmap {

struct GridConfig {
  Aabb bounds;
  std::vector<double> cell_sizes{0.24, 0.12};  // coarse -> fine
  int feature_dim = 8;
  std::uint64_t table_size = std::uint64_t{1} << 18;
  std::uint64_t seed = 1;

  int num_levels() const { return static_cast<int>(cell_sizes.size()); }
  int encoded_dim() const { return num_levels() * feature_dim; }
  void validate() const;
};

enum class StorageMode : std::uint8_t { kDense = 0, kHashed = 1 };

struct GridLevel {
  double cell_size = 0.0;
  std::array<std::int32_t, 3> dims{};  // vertex counts per axis
  StorageMode mode = StorageMode::kDense;
  std::int64_t num_slots = 0;
  std::vector<double> features;  // num_slots x c, slot-major

  std::int64_t vertex_count() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
};

/// The eight vertices of the cell containing a point, with trilinear weights.
/// Corner j has offset (j & 1, (j >> 1) & 1, (j >> 2) & 1).
struct Interpolation {
  std::array<VertexCoord, 8> coords;
  std::array<std::int64_t, 8> slots;
  std::array<double, 8> weights;
};

/// Gradient accumulators, one per level, shaped like the feature storage.
struct GridGradient {
  std::vector<std::vector<double>> levels;

  void zero();
};

struct OccupiedVertex {
  VertexCoord coord;
  Vec3 position;  // vertex position clamped into the grid bounds
};

/// Multiresolution vertex feature store with occupancy tracking at the
/// finest level.
class LatentGrid {
 public:
  LatentGrid() = default;
  explicit LatentGrid(GridConfig config);

  const GridConfig& config() const { return config_; }
  int num_levels() const { return static_cast<int>(levels_.size()); }
  int feature_dim() const { return config_.feature_dim; }
  int encoded_dim() const { return config_.encoded_dim(); }
  const GridLevel& level(int l) const { return levels_.at(static_cast<std::size_t>(l)); }
  GridLevel& level(int l) { return levels_.at(static_cast<std::size_t>(l)); }

  /// Storage index of a vertex: row-major (x fastest) in dense mode, spatial
  /// hash modulo table size otherwise.
  std::int64_t vertex_slot(int l, const VertexCoord& v) const;

  Interpolation interpolation_weights(const Vec3& x, int l) const;

  Eigen::VectorXd level_feature(int l, const Vec3& x) const;
  Eigen::VectorXd encode(const Vec3& x) const;
  /// Encodes columns of `points` into `out` (d x n); when `cache` is non-null
  /// it receives n * L interpolations, sample-major.
  void encode_batch(const Eigen::Matrix3Xd& points, Eigen::MatrixXd& out,
                    std::vector<Interpolation>* cache = nullptr) const;

  std::span<const double> vertex_feature(int l, const VertexCoord& v) const;
  void set_vertex_feature(int l, const VertexCoord& v, std::span<const double> f);
  /// Replaces a level's whole slot storage (size must match).
  void set_level_features(int l, std::vector<double> features);

  GridGradient make_gradient() const;
  /// Adds weight * upstream into the slot accumulators of every corner.
  void accumulate_gradient(GridGradient& grad, int l, const Interpolation& interp,
                           std::span<const double> upstream) const;

  /// Marks the eight finest-level corners of the cell containing x.
  void mark_occupied(const Vec3& x);
  /// Same, from an already computed finest-level interpolation.
  void mark_occupied(const Interpolation& fine);
  std::vector<OccupiedVertex> occupied_vertices() const;
  const std::set<VertexCoord>& occupancy() const { return occupancy_; }
  void insert_occupied(const VertexCoord& v);
  void clear_occupancy() {
    occupancy_.clear();
    occupied_bits_.clear();
  }

  Vec3 vertex_position(int l, const VertexCoord& v) const;

  bool operator==(const LatentGrid& other) const;

 private:
  void check_bounds(const Vec3& x) const;
  void check_coord(int l, const VertexCoord& v) const;
  void occupy(const VertexCoord& v);

  GridConfig config_;
  std::vector<GridLevel> levels_;
  std::set<VertexCoord> occupancy_;
  // Membership bitmap over the finest level (row-major), allocated on first
  // use when the level is small enough; skips redundant set lookups.
  std::vector<bool> occupied_bits_;
};

/// Vertex counts per axis for a level of the given cell size.
std::array<std::int32_t, 3> level_dims(const Aabb& bounds, double cell_size);

}  // namespace latmap
