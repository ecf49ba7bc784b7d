#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "latmap/geometry.hpp"

namespace latmap {

struct CameraIntrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int patch_stride = 1;  // pixels per embedding patch along each axis

  void validate() const;
};

/// world <- camera rigid transform.
struct CameraPose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  /// Throws kInvalidFrame unless the rotation is orthonormal with det +1 (1e-9).
  void validate() const;
};

template <typename T>
struct Grid2D {
  int rows = 0;
  int cols = 0;
  std::vector<T> data;  // row-major

  Grid2D() = default;
  Grid2D(int r, int c, T fill = T{}) : rows(r), cols(c), data(static_cast<std::size_t>(r) * c, fill) {}

  T& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  const T& at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
};

using DepthImage = Grid2D<float>;     // meters; <= 0 or non-finite is invalid
using PatchMask = Grid2D<std::uint8_t>;  // 1 = dynamic

/// Per-patch embeddings, H x W patches of dimension k, patch-major.
struct EmbeddingGrid {
  int rows = 0;
  int cols = 0;
  int dim = 0;
  std::vector<float> data;

  const float* patch(int r, int c) const {
    return data.data() + (static_cast<std::size_t>(r) * cols + c) * dim;
  }
  float* patch(int r, int c) { return data.data() + (static_cast<std::size_t>(r) * cols + c) * dim; }
};

struct CameraFrame {
  std::string id;
  DepthImage depth;
  EmbeddingGrid embeddings;
  CameraPose pose;
  CameraIntrinsics intrinsics;
  std::optional<PatchMask> dynamic_mask;

  void validate() const;
};

struct PatchIndex {
  std::int32_t row = 0;
  std::int32_t col = 0;
};

/// Coordinate-feature pairs. Stored column-wise: column i of `points` and
/// `targets` form one sample; `patches[i]` records its source patch.
struct SampleBatch {
  std::string source_frame_id;
  int patch_rows = 0;
  int patch_cols = 0;
  Eigen::Matrix3Xd points;
  Eigen::MatrixXd targets;  // k x n, unit columns
  std::vector<PatchIndex> patches;

  Eigen::Index size() const { return points.cols(); }
  Eigen::Index dim() const { return targets.rows(); }
  bool empty() const { return size() == 0; }

  void reserve(Eigen::Index k, Eigen::Index n);
  /// Keeps columns listed in `keep` (ascending), preserving order.
  SampleBatch select(const std::vector<Eigen::Index>& keep) const;
  /// Same, writing into `out` so its storage can be reused.
  void select_into(const std::vector<Eigen::Index>& keep, SampleBatch& out) const;
};

struct SkipCounts {
  std::int64_t invalid_depth = 0;
  std::int64_t masked = 0;
  std::int64_t zero_embedding = 0;
  std::int64_t out_of_bounds = 0;

  std::int64_t total() const { return invalid_depth + masked + zero_embedding + out_of_bounds; }
};

struct BackProjection {
  SampleBatch batch;
  SkipCounts skipped;
};

/// Pixel coordinate of a patch center along one axis.
inline double patch_center(int index, int stride) { return (index + 0.5) * stride - 0.5; }

/// Integer pixel used to read depth for a patch (nearest to the center).
int patch_depth_pixel(int index, int stride);

/// Lifts every patch with valid depth into the world frame. When `bounds` is
/// given, samples outside it are dropped and counted.
BackProjection back_project(const CameraFrame& frame, const Aabb* bounds = nullptr);

struct Projection {
  Eigen::Vector2d pixel;
  double depth = 0.0;
};

/// Pinhole projection of a world point; throws kInvalidArgument when the
/// point is not in front of the camera.
Projection forward_project(const Vec3& x, const CameraPose& pose, const CameraIntrinsics& intrinsics);

/// Removes samples whose source patch is flagged in `mask`.
SampleBatch filter_dynamic(const SampleBatch& batch, const PatchMask& mask);

}  // namespace latmap
