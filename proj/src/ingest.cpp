#include "latmap/ingest.hpp"

#include <cmath>

#include "latmap/error.hpp"

namespace latmap {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy)) {
    throw Error(ErrorKind::kInvalidFrame, "intrinsics: focal lengths must be positive");
  }
  if (!std::isfinite(cx) || !std::isfinite(cy)) {
    throw Error(ErrorKind::kInvalidFrame, "intrinsics: principal point must be finite");
  }
  if (patch_stride < 1) throw Error(ErrorKind::kInvalidFrame, "intrinsics: patch_stride must be >= 1");
}

void CameraPose::validate() const {
  constexpr double kTol = 1e-9;
  if (!rotation.allFinite() || !translation.allFinite()) {
    throw Error(ErrorKind::kInvalidFrame, "pose: non-finite entries");
  }
  const double ortho = (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff();
  const double det = rotation.determinant();
  if (ortho > kTol || std::abs(det - 1.0) > kTol) {
    throw Error(ErrorKind::kInvalidFrame, "pose: rotation is not orthonormal with det +1 (err " +
                                              std::to_string(ortho) + ", det " + std::to_string(det) +
                                              ")");
  }
}

void CameraFrame::validate() const {
  intrinsics.validate();
  pose.validate();
  const auto& e = embeddings;
  if (e.rows <= 0 || e.cols <= 0 || e.dim <= 0) {
    throw Error(ErrorKind::kInvalidFrame, "frame " + id + ": empty embedding grid");
  }
  if (e.data.size() != static_cast<std::size_t>(e.rows) * e.cols * e.dim) {
    throw Error(ErrorKind::kInvalidFrame, "frame " + id + ": embedding payload size mismatch");
  }
  if (depth.data.size() != static_cast<std::size_t>(depth.rows) * depth.cols) {
    throw Error(ErrorKind::kInvalidFrame, "frame " + id + ": depth payload size mismatch");
  }
  const int s = intrinsics.patch_stride;
  if (static_cast<long>(e.rows) * s > depth.rows || static_cast<long>(e.cols) * s > depth.cols) {
    throw Error(ErrorKind::kInvalidFrame,
                "frame " + id + ": patch grid " + std::to_string(e.rows) + "x" + std::to_string(e.cols) +
                    " with stride " + std::to_string(s) + " exceeds depth image " +
                    std::to_string(depth.rows) + "x" + std::to_string(depth.cols));
  }
  if (dynamic_mask && (dynamic_mask->rows != e.rows || dynamic_mask->cols != e.cols)) {
    throw Error(ErrorKind::kInvalidFrame, "frame " + id + ": dynamic mask shape mismatch");
  }
}

void SampleBatch::reserve(Eigen::Index k, Eigen::Index n) {
  points.resize(3, n);
  targets.resize(k, n);
  patches.resize(static_cast<std::size_t>(n));
}

SampleBatch SampleBatch::select(const std::vector<Eigen::Index>& keep) const {
  SampleBatch out;
  select_into(keep, out);
  return out;
}

void SampleBatch::select_into(const std::vector<Eigen::Index>& keep, SampleBatch& out) const {
  out.source_frame_id = source_frame_id;
  out.patch_rows = patch_rows;
  out.patch_cols = patch_cols;
  out.reserve(dim(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    const Eigen::Index i = keep[j];
    out.points.col(static_cast<Eigen::Index>(j)) = points.col(i);
    out.targets.col(static_cast<Eigen::Index>(j)) = targets.col(i);
    out.patches[j] = patches[static_cast<std::size_t>(i)];
  }
}

int patch_depth_pixel(int index, int stride) {
  return static_cast<int>(std::floor(patch_center(index, stride) + 0.5));
}

BackProjection back_project(const CameraFrame& frame, const Aabb* bounds) {
  frame.validate();
  const auto& K = frame.intrinsics;
  const auto& G = frame.embeddings;
  const Mat3& R = frame.pose.rotation;
  const Vec3& t = frame.pose.translation;

  BackProjection out;
  SampleBatch& batch = out.batch;
  batch.source_frame_id = frame.id;
  batch.patch_rows = G.rows;
  batch.patch_cols = G.cols;
  batch.reserve(G.dim, static_cast<Eigen::Index>(G.rows) * G.cols);

  Eigen::Index n = 0;
  for (int r = 0; r < G.rows; ++r) {
    for (int c = 0; c < G.cols; ++c) {
      if (frame.dynamic_mask && frame.dynamic_mask->at(r, c) != 0) {
        ++out.skipped.masked;
        continue;
      }
      const double z = frame.depth.at(patch_depth_pixel(r, K.patch_stride),
                                      patch_depth_pixel(c, K.patch_stride));
      if (!std::isfinite(z) || z <= 0.0) {
        ++out.skipped.invalid_depth;
        continue;
      }
      const double u = patch_center(c, K.patch_stride);
      const double v = patch_center(r, K.patch_stride);
      const Vec3 ray((u - K.cx) / K.fx, (v - K.cy) / K.fy, 1.0);
      const Vec3 x = R * (ray * z) + t;
      if (bounds && !bounds->contains(x)) {
        ++out.skipped.out_of_bounds;
        continue;
      }
      const Eigen::Map<const Eigen::VectorXf> g(G.patch(r, c), G.dim);
      const double norm = g.cast<double>().norm();
      if (!(norm > 0.0) || !std::isfinite(norm)) {
        ++out.skipped.zero_embedding;
        continue;
      }
      batch.points.col(n) = x;
      batch.targets.col(n) = g.cast<double>() / norm;
      batch.patches[static_cast<std::size_t>(n)] = {r, c};
      ++n;
    }
  }
  batch.points.conservativeResize(3, n);
  batch.targets.conservativeResize(G.dim, n);
  batch.patches.resize(static_cast<std::size_t>(n));
  return out;
}

Projection forward_project(const Vec3& x, const CameraPose& pose, const CameraIntrinsics& K) {
  const Vec3 pc = pose.rotation.transpose() * (x - pose.translation);
  if (!(pc.z() > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "forward_project: point is behind the camera");
  }
  Projection p;
  p.depth = pc.z();
  p.pixel = {K.fx * pc.x() / pc.z() + K.cx, K.fy * pc.y() / pc.z() + K.cy};
  return p;
}

SampleBatch filter_dynamic(const SampleBatch& batch, const PatchMask& mask) {
  if (mask.rows != batch.patch_rows || mask.cols != batch.patch_cols ||
      mask.data.size() != static_cast<std::size_t>(mask.rows) * mask.cols) {
    throw Error(ErrorKind::kInvalidArgument,
                "filter_dynamic: mask " + std::to_string(mask.rows) + "x" + std::to_string(mask.cols) +
                    " does not match patch grid " + std::to_string(batch.patch_rows) + "x" +
                    std::to_string(batch.patch_cols));
  }
  std::vector<Eigen::Index> keep;
  keep.reserve(static_cast<std::size_t>(batch.size()));
  for (Eigen::Index i = 0; i < batch.size(); ++i) {
    const auto& p = batch.patches[static_cast<std::size_t>(i)];
    if (mask.at(p.row, p.col) == 0) keep.push_back(i);
  }
  return batch.select(keep);
}

}  // namespace latmap
