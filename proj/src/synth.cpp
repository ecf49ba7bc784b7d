#include "latmap/synth.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "latmap/binary_io.hpp"
#include "latmap/error.hpp"
#include "latmap/parallel.hpp"
#include "latmap/random.hpp"
#include "latmap/store.hpp"

namespace latmap {

namespace {

constexpr double kPi = std::numbers::pi;

// Slab test; returns the entry distance along `dir` or +inf when missed.
double ray_box(const Vec3& origin, const Vec3& dir, const Aabb& box) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(dir[a]) < 1e-15) {
      if (origin[a] < box.min[a] || origin[a] > box.max[a]) return std::numeric_limits<double>::infinity();
      continue;
    }
    double ta = (box.min[a] - origin[a]) / dir[a];
    double tb = (box.max[a] - origin[a]) / dir[a];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
    if (t0 > t1) return std::numeric_limits<double>::infinity();
  }
  return t0 > 0.0 ? t0 : std::numeric_limits<double>::infinity();
}

Eigen::VectorXd random_unit(Rng& rng, int k) {
  Eigen::VectorXd v(k);
  for (int i = 0; i < k; ++i) v[i] = rng.normal();
  v.normalize();
  for (int i = 0; i < k; ++i) v[i] = round_f32(v[i]);
  return v;
}

}  // namespace

void SynthSpec::validate() const {
  auto bad = [](const std::string& m) { throw Error(ErrorKind::kInvalidArgument, "synth: " + m); };
  if (embedding_dim < 1) bad("embedding_dim must be >= 1");
  if (num_regions < 1) bad("num_regions must be >= 1");
  if (slots_x < 1 || slots_y < 1) bad("slot layout must be at least 1x1");
  const int slots = slots_x * slots_y;
  if (num_regions > slots) bad("more regions than slots");
  if (relocation && num_regions >= slots && relocation->to_slot < 0) bad("no free slot for relocation");
  if (relocation && (relocation->region < 0 || relocation->region >= num_regions)) bad("relocation region out of range");
  if (relocation && relocation->to_slot >= slots) bad("relocation slot out of range");
  if (!classes.empty()) {
    if (static_cast<int>(classes.size()) != num_regions) bad("classes must list one entry per region");
    for (int c : classes) {
      if (c < 0 || c >= vocabulary_size) bad("class index out of vocabulary range");
    }
  } else if (vocabulary_size < num_regions) {
    bad("vocabulary smaller than region count");
  }
  if (noise < 0.0) bad("noise must be >= 0");
  if (n_frames < 1) bad("degenerate trajectory: n_frames must be >= 1");
  if (n_heldout < 0) bad("n_heldout must be >= 0");
  if (!(orbit_radius > 0.0)) bad("degenerate trajectory: orbit_radius must be positive");
  if (patch_stride < 1 || image_rows < patch_stride || image_cols < patch_stride) bad("invalid image geometry");
  if (!(focal > 0.0)) bad("focal must be positive");
  if (bounds.degenerate()) bad("bounds must be non-degenerate");
  if (stream) {
    if (stream->length < 0) bad("stream length must be >= 0");
    if (!(stream->orbit_period > 0.0)) bad("stream orbit_period must be positive");
  }
}

CameraPose look_at_pose(const Vec3& eye, const Vec3& target) {
  const Vec3 up(0.0, 0.0, 1.0);
  const Vec3 f = (target - eye);
  if (f.norm() < 1e-9) throw Error(ErrorKind::kInvalidArgument, "synth: degenerate trajectory (eye at target)");
  const Vec3 fwd = f.normalized();
  const Vec3 right_raw = fwd.cross(up);
  if (right_raw.norm() < 1e-6) {
    throw Error(ErrorKind::kInvalidArgument, "synth: degenerate trajectory (view direction parallel to up)");
  }
  const Vec3 right = right_raw.normalized();
  const Vec3 down = fwd.cross(right);
  CameraPose p;
  p.rotation.col(0) = right;
  p.rotation.col(1) = down;
  p.rotation.col(2) = fwd;
  p.translation = eye;
  return p;
}

SynthScene::SynthScene(SynthSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const int k = spec_.embedding_dim;
  Rng vocab_rng(spec_.vocabulary_seed);
  vocabulary_.resize(k, spec_.vocabulary_size);
  for (int v = 0; v < spec_.vocabulary_size; ++v) vocabulary_.col(v) = random_unit(vocab_rng, k);
  dynamic_prototype_ = random_unit(vocab_rng, k);

  Rng rng(spec_.seed);
  const int slots = spec_.slots_x * spec_.slots_y;
  std::vector<int> slot_order(static_cast<std::size_t>(slots));
  std::iota(slot_order.begin(), slot_order.end(), 0);
  rng.shuffle(slot_order.begin(), slot_order.end());

  std::vector<int> classes = spec_.classes;
  if (classes.empty()) {
    std::vector<int> all(static_cast<std::size_t>(spec_.vocabulary_size));
    std::iota(all.begin(), all.end(), 0);
    rng.shuffle(all.begin(), all.end());
    classes.assign(all.begin(), all.begin() + spec_.num_regions);
  }

  const Vec3 ext = spec_.bounds.extent();
  const double pitch_x = ext.x() / spec_.slots_x;
  const double pitch_y = ext.y() / spec_.slots_y;
  auto slot_center = [&](int s) {
    const int ix = s % spec_.slots_x;
    const int iy = s / spec_.slots_x;
    return Vec3(spec_.bounds.min.x() + (ix + 0.5) * pitch_x, spec_.bounds.min.y() + (iy + 0.5) * pitch_y,
                spec_.bounds.min.z());
  };
  const double max_half = 0.1875 * std::min(pitch_x, pitch_y);
  const double min_half = 0.125 * std::min(pitch_x, pitch_y);
  for (int r = 0; r < spec_.num_regions; ++r) {
    const Vec3 c = slot_center(slot_order[static_cast<std::size_t>(r)]);
    const double hx = rng.uniform(min_half, max_half);
    const double hy = rng.uniform(min_half, max_half);
    const double h = std::min(rng.uniform(0.2, 0.5), 0.9 * ext.z());
    SynthRegion reg;
    reg.box.min = Vec3(c.x() - hx, c.y() - hy, c.z());
    reg.box.max = Vec3(c.x() + hx, c.y() + hy, c.z() + h);
    reg.vocabulary_index = classes[static_cast<std::size_t>(r)];
    reg.prototype = vocabulary_.col(reg.vocabulary_index);
    regions_.push_back(std::move(reg));
  }
  moved_ = regions_;
  if (spec_.relocation) {
    const int target = spec_.relocation->to_slot >= 0 ? spec_.relocation->to_slot
                                                      : slot_order[static_cast<std::size_t>(spec_.num_regions)];
    for (int r = 0; r < spec_.num_regions; ++r) {
      if (r != spec_.relocation->region && slot_order[static_cast<std::size_t>(r)] == target) {
        throw Error(ErrorKind::kInvalidArgument, "synth: relocation target slot is occupied");
      }
    }
    auto& box = moved_[static_cast<std::size_t>(spec_.relocation->region)].box;
    const Vec3 shift = slot_center(target) - Vec3(box.center().x(), box.center().y(), box.min.z());
    box.min += shift;
    box.max += shift;
  }
}

const std::vector<SynthRegion>& SynthScene::regions(int phase) const { return phase == 0 ? regions_ : moved_; }

int SynthScene::moved_region() const { return spec_.relocation ? spec_.relocation->region : -1; }

int SynthScene::region_at(const Vec3& x, int phase) const {
  const auto& regs = regions(phase);
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < regs.size(); ++i) {
    const double d = regs[i].box.distance(x);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

Eigen::VectorXd SynthScene::oracle(const Vec3& x, int phase) const {
  return regions(phase)[static_cast<std::size_t>(region_at(x, phase))].prototype;
}

CameraIntrinsics SynthScene::intrinsics() const {
  return {spec_.focal, spec_.focal, 0.5 * (spec_.image_cols - 1), 0.5 * (spec_.image_rows - 1), spec_.patch_stride};
}

CameraPose SynthScene::orbit_pose(double angle) const {
  const double radius = spec_.orbit_radius * (1.0 + 0.08 * std::cos(2.0 * angle));
  const double height = spec_.orbit_height + 0.3 * std::sin(3.0 * angle);
  const Vec3 eye(spec_.look_at.x() + radius * std::cos(angle), spec_.look_at.y() + radius * std::sin(angle),
                 height);
  return look_at_pose(eye, spec_.look_at);
}

CameraPose SynthScene::train_pose(int i) const { return orbit_pose(2.0 * kPi * i / spec_.n_frames + 0.3); }

CameraPose SynthScene::heldout_pose(int j) const {
  const int n = std::max(spec_.n_heldout, 1);
  return orbit_pose(2.0 * kPi * (j + 0.5) / n + 0.3 + 0.11);
}

CameraPose SynthScene::stream_pose(int step) const {
  const double period = spec_.stream ? spec_.stream->orbit_period : 40.0;
  return orbit_pose(2.0 * kPi * step / period + 0.3 + 0.05);
}

CameraFrame SynthScene::render(const CameraPose& pose, int phase, const std::string& id,
                               std::uint64_t noise_seed) const {
  const auto K = intrinsics();
  const auto& regs = regions(phase);
  const int k = spec_.embedding_dim;
  const int s = spec_.patch_stride;
  CameraFrame f;
  f.id = id;
  f.pose = pose;
  f.intrinsics = K;
  f.depth = DepthImage(spec_.image_rows, spec_.image_cols, 0.0f);
  const int pr = spec_.image_rows / s;
  const int pc = spec_.image_cols / s;
  f.embeddings.rows = pr;
  f.embeddings.cols = pc;
  f.embeddings.dim = k;
  f.embeddings.data.assign(static_cast<std::size_t>(pr) * pc * k, 0.0f);
  if (spec_.dynamic_box) f.dynamic_mask = PatchMask(pr, pc, 0);

  // hit index: -1 miss, -2 dynamic box, else region.
  auto cast = [&](double u, double v, double* depth) {
    const Vec3 dir = pose.rotation * Vec3((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
    double best = std::numeric_limits<double>::infinity();
    int hit = -1;
    for (std::size_t i = 0; i < regs.size(); ++i) {
      const double t = ray_box(pose.translation, dir, regs[i].box);
      if (t < best) {
        best = t;
        hit = static_cast<int>(i);
      }
    }
    if (spec_.dynamic_box) {
      const double t = ray_box(pose.translation, dir, *spec_.dynamic_box);
      if (t < best) {
        best = t;
        hit = -2;
      }
    }
    *depth = hit == -1 ? 0.0 : best;
    return hit;
  };

  for (int r = 0; r < spec_.image_rows; ++r) {
    for (int c = 0; c < spec_.image_cols; ++c) {
      double d;
      cast(c, r, &d);
      f.depth.at(r, c) = static_cast<float>(d);
    }
  }

  Rng noise(noise_seed);
  for (int r = 0; r < pr; ++r) {
    for (int c = 0; c < pc; ++c) {
      double d;
      const int hit = cast(patch_center(c, s), patch_center(r, s), &d);
      if (hit == -1) continue;
      Eigen::VectorXd e = hit == -2 ? dynamic_prototype_ : regs[static_cast<std::size_t>(hit)].prototype;
      if (hit == -2) f.dynamic_mask->at(r, c) = 1;
      if (spec_.noise > 0.0) {
        for (int i = 0; i < k; ++i) e[i] += spec_.noise * noise.normal();
        e.normalize();
      }
      float* dst = f.embeddings.patch(r, c);
      for (int i = 0; i < k; ++i) dst[i] = static_cast<float>(e[i]);
    }
  }
  return f;
}

SynthDataset synth_dataset(const SynthScene& scene) {
  const auto& spec = scene.spec();
  SynthDataset out;
  char id[32];
  out.train.resize(static_cast<std::size_t>(spec.n_frames));
  parallel_for(spec.n_frames, [&](Eigen::Index i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "train_%04d", static_cast<int>(i));
    out.train[static_cast<std::size_t>(i)] =
        scene.render(scene.train_pose(static_cast<int>(i)), 0, buf, spec.seed * 1000003u + static_cast<std::uint64_t>(i));
  });
  out.heldout.resize(static_cast<std::size_t>(spec.n_heldout));
  parallel_for(spec.n_heldout, [&](Eigen::Index j) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "heldout_%04d", static_cast<int>(j));
    out.heldout[static_cast<std::size_t>(j)] = scene.render(
        scene.heldout_pose(static_cast<int>(j)), 0, buf, spec.seed * 2000003u + static_cast<std::uint64_t>(j));
  });
  if (spec.stream) {
    const auto& st = *spec.stream;
    out.stream_frames.resize(static_cast<std::size_t>(st.length));
    parallel_for(st.length, [&](Eigen::Index i) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "stream_%04d", static_cast<int>(i));
      const int tau = static_cast<int>(i) + 1;
      const int phase = (spec.relocation && tau >= st.move_at) ? 1 : 0;
      out.stream_frames[static_cast<std::size_t>(i)] =
          scene.render(scene.stream_pose(tau), phase, buf, spec.seed * 3000017u + static_cast<std::uint64_t>(i));
    });
    for (int i = 0; i < st.length; ++i) {
      StreamStep step;
      std::snprintf(id, sizeof(id), "stream_%04d", i);
      step.frame_id = id;
      for (const auto& [lo, hi] : st.grasp) step.grasping = step.grasping || (i >= lo && i <= hi);
      out.stream.push_back(step);
    }
  }
  return out;
}

void write_synth_dataset(const SynthScene& scene, const SynthDataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.root = dir;
  m.bounds = scene.spec().bounds;
  for (const auto& f : data.train) m.frames.push_back(write_frame(dir, f));
  for (const auto& f : data.heldout) m.heldout.push_back(write_frame(dir, f));
  for (const auto& f : data.stream_frames) m.stream.push_back(write_frame(dir, f));
  save_dataset_manifest(m);

  if (!data.stream.empty()) {
    StreamManifest s;
    s.dataset = dir;
    s.steps = data.stream;
    save_stream_manifest(s, dir / "stream.json");
  }

  using json = nlohmann::json;
  json scene_json{{"embedding_dim", scene.spec().embedding_dim}, {"moved_region", scene.moved_region()}};
  for (int phase = 0; phase < 2; ++phase) {
    json regs = json::array();
    for (const auto& r : scene.regions(phase)) {
      regs.push_back({{"min", {r.box.min.x(), r.box.min.y(), r.box.min.z()}},
                      {"max", {r.box.max.x(), r.box.max.y(), r.box.max.z()}},
                      {"class", r.vocabulary_index}});
    }
    scene_json[phase == 0 ? "regions" : "regions_moved"] = regs;
  }
  io::write_text_file(dir / "scene.json", scene_json.dump(2) + "\n");

  std::string pts;
  std::string ref;
  char buf[96];
  for (const auto& r : scene.regions(0)) {
    const Vec3 c = r.box.center();
    std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g\n", c.x(), c.y(), c.z());
    pts += buf;
    for (Eigen::Index i = 0; i < r.prototype.size(); ++i) {
      std::snprintf(buf, sizeof(buf), i + 1 < r.prototype.size() ? "%.9g " : "%.9g\n", r.prototype[i]);
      ref += buf;
    }
  }
  io::write_text_file(dir / "region_centers.txt", pts);
  io::write_text_file(dir / "region_centers.ref", ref);
}

}  // namespace latmap
