#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "latmap/geometry.hpp"
#include "latmap/ingest.hpp"
#include "latmap/online.hpp"

namespace latmap {

struct RelocationSpec {
  int region = 0;
  int to_slot = -1;  // -1: first slot not used by any region
};

struct StreamSpec {
  int length = 100;
  int move_at = 50;  // stream step (1-based tau) from which the relocated layout is rendered
  std::vector<std::pair<int, int>> grasp;  // inclusive 0-based index ranges
  double orbit_period = 40.0;  // stream steps per camera revolution
};

/// Parameters of a synthetic tabletop: axis-aligned boxes on a slot layout,
/// each carrying a unit prototype embedding from a shared vocabulary.
struct SynthSpec {
  std::uint64_t seed = 1;
  int embedding_dim = 64;
  int num_regions = 8;
  int vocabulary_size = 12;
  std::uint64_t vocabulary_seed = 7;
  std::vector<int> classes;  // optional explicit vocabulary index per region
  double noise = 0.0;

  int n_frames = 50;
  int n_heldout = 10;

  int image_rows = 160;
  int image_cols = 160;
  int patch_stride = 5;
  double focal = 100.0;

  double orbit_radius = 2.6;
  double orbit_height = 1.5;
  Vec3 look_at{0.0, 0.0, 0.15};

  Aabb bounds{Vec3(-1.6, -1.2, 0.0), Vec3(1.6, 1.2, 1.0)};
  int slots_x = 4;
  int slots_y = 3;

  std::optional<Aabb> dynamic_box;
  std::optional<RelocationSpec> relocation;
  std::optional<StreamSpec> stream;

  void validate() const;
};

struct SynthRegion {
  Aabb box;
  int vocabulary_index = 0;
  Eigen::VectorXd prototype;
};

/// Ground-truth scene: piecewise-constant feature field over region boxes.
class SynthScene {
 public:
  explicit SynthScene(SynthSpec spec);

  const SynthSpec& spec() const { return spec_; }
  const Eigen::MatrixXd& vocabulary() const { return vocabulary_; }
  /// Region layout for a phase: 0 = initial, 1 = after relocation.
  const std::vector<SynthRegion>& regions(int phase = 0) const;
  int moved_region() const;

  /// Prototype of the region containing x, or of the nearest region.
  Eigen::VectorXd oracle(const Vec3& x, int phase = 0) const;
  /// Index of the region containing or nearest to x.
  int region_at(const Vec3& x, int phase = 0) const;

  CameraIntrinsics intrinsics() const;
  CameraPose train_pose(int i) const;
  CameraPose heldout_pose(int j) const;
  CameraPose stream_pose(int step) const;

  CameraFrame render(const CameraPose& pose, int phase, const std::string& id, std::uint64_t noise_seed) const;

 private:
  CameraPose orbit_pose(double angle) const;

  SynthSpec spec_;
  Eigen::MatrixXd vocabulary_;  // k x V
  std::vector<SynthRegion> regions_;
  std::vector<SynthRegion> moved_;
  Eigen::VectorXd dynamic_prototype_;
};

struct SynthDataset {
  std::vector<CameraFrame> train;
  std::vector<CameraFrame> heldout;
  std::vector<CameraFrame> stream_frames;  // one per stream step
  std::vector<StreamStep> stream;
};

SynthDataset synth_dataset(const SynthScene& scene);

/// Writes frames, manifest.json, scene.json, region_centers.{txt,ref} and,
/// when the spec has a stream, stream.json.
void write_synth_dataset(const SynthScene& scene, const SynthDataset& data, const std::filesystem::path& dir);

CameraPose look_at_pose(const Vec3& eye, const Vec3& target);

}  // namespace latmap
