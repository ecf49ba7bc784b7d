#include "latmap/grid.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "latmap/error.hpp"
#include "latmap/random.hpp"

namespace latmap {

namespace {

constexpr std::uint32_t kPrime1 = 1u;
constexpr std::uint32_t kPrime2 = 2654435761u;
constexpr std::uint32_t kPrime3 = 805459861u;

std::string fmt_point(const Vec3& x) {
  return "(" + std::to_string(x.x()) + ", " + std::to_string(x.y()) + ", " + std::to_string(x.z()) + ")";
}

}  // namespace

void GridConfig::validate() const {
  if (!bounds.min.allFinite() || !bounds.max.allFinite() || bounds.degenerate()) {
    throw Error(ErrorKind::kInvalidArgument, "grid: bounds must be finite and non-degenerate");
  }
  if (cell_sizes.empty()) throw Error(ErrorKind::kInvalidArgument, "grid: at least one level required");
  for (std::size_t i = 0; i < cell_sizes.size(); ++i) {
    if (!(cell_sizes[i] > 0.0) || !std::isfinite(cell_sizes[i])) {
      throw Error(ErrorKind::kInvalidArgument, "grid: cell sizes must be positive");
    }
    if (i > 0 && !(cell_sizes[i] < cell_sizes[i - 1])) {
      throw Error(ErrorKind::kInvalidArgument, "grid: cell sizes must be strictly decreasing");
    }
  }
  if (feature_dim < 1) throw Error(ErrorKind::kInvalidArgument, "grid: feature_dim must be >= 1");
  if (table_size < 1) throw Error(ErrorKind::kInvalidArgument, "grid: table_size must be >= 1");
}

std::array<std::int32_t, 3> level_dims(const Aabb& bounds, double cell_size) {
  std::array<std::int32_t, 3> dims{};
  for (int a = 0; a < 3; ++a) {
    const double cells = std::max(1.0, std::ceil(bounds.extent()[a] / cell_size - 1e-9));
    if (cells + 1.0 > 2147483647.0) throw Error(ErrorKind::kInvalidArgument, "grid: level too large");
    dims[static_cast<std::size_t>(a)] = static_cast<std::int32_t>(cells) + 1;
  }
  return dims;
}

void GridGradient::zero() {
  for (auto& g : levels) std::fill(g.begin(), g.end(), 0.0);
}

LatentGrid::LatentGrid(GridConfig config) : config_(std::move(config)) {
  config_.validate();
  Rng rng(config_.seed);
  const int c = config_.feature_dim;
  for (double cell : config_.cell_sizes) {
    GridLevel lv;
    lv.cell_size = cell;
    lv.dims = level_dims(config_.bounds, cell);
    const std::int64_t m = lv.vertex_count();
    if (static_cast<std::uint64_t>(m) <= config_.table_size) {
      lv.mode = StorageMode::kDense;
      lv.num_slots = m;
    } else {
      lv.mode = StorageMode::kHashed;
      lv.num_slots = static_cast<std::int64_t>(config_.table_size);
    }
    lv.features.resize(static_cast<std::size_t>(lv.num_slots) * c);
    for (double& f : lv.features) f = round_f32(rng.uniform(-1e-4, 1e-4));
    levels_.push_back(std::move(lv));
  }
}

void LatentGrid::check_bounds(const Vec3& x) const {
  if (!x.allFinite() || !config_.bounds.contains(x)) {
    throw Error(ErrorKind::kOutOfBounds, "point " + fmt_point(x) + " outside grid bounds");
  }
}

void LatentGrid::check_coord(int l, const VertexCoord& v) const {
  const auto& d = level(l).dims;
  for (int a = 0; a < 3; ++a) {
    if (v[static_cast<std::size_t>(a)] < 0 || v[static_cast<std::size_t>(a)] >= d[static_cast<std::size_t>(a)]) {
      throw Error(ErrorKind::kOutOfBounds, "vertex (" + std::to_string(v[0]) + ", " + std::to_string(v[1]) +
                                               ", " + std::to_string(v[2]) + ") outside level " +
                                               std::to_string(l) + " dims");
    }
  }
}

std::int64_t LatentGrid::vertex_slot(int l, const VertexCoord& v) const {
  check_coord(l, v);
  const GridLevel& lv = level(l);
  if (lv.mode == StorageMode::kDense) {
    return static_cast<std::int64_t>(v[0]) +
           static_cast<std::int64_t>(lv.dims[0]) * (v[1] + static_cast<std::int64_t>(lv.dims[1]) * v[2]);
  }
  const std::uint32_t h = (static_cast<std::uint32_t>(v[0]) * kPrime1) ^
                          (static_cast<std::uint32_t>(v[1]) * kPrime2) ^
                          (static_cast<std::uint32_t>(v[2]) * kPrime3);
  return static_cast<std::int64_t>(h % config_.table_size);
}

Interpolation LatentGrid::interpolation_weights(const Vec3& x, int l) const {
  check_bounds(x);
  const GridLevel& lv = level(l);
  std::array<std::int32_t, 3> base{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const auto ua = static_cast<std::size_t>(a);
    const double u = (x[a] - config_.bounds.min[a]) / lv.cell_size;
    // Points on the max face clamp into the last cell.
    const auto cell = std::clamp(static_cast<std::int32_t>(std::floor(u)), 0, lv.dims[ua] - 2);
    base[ua] = cell;
    frac[ua] = std::clamp(u - cell, 0.0, 1.0);
  }
  Interpolation out;
  for (int j = 0; j < 8; ++j) {
    const auto uj = static_cast<std::size_t>(j);
    const int dx = j & 1, dy = (j >> 1) & 1, dz = (j >> 2) & 1;
    out.coords[uj] = {base[0] + dx, base[1] + dy, base[2] + dz};
    out.weights[uj] = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                      (dz ? frac[2] : 1.0 - frac[2]);
    out.slots[uj] = vertex_slot(l, out.coords[uj]);
  }
  return out;
}

Eigen::VectorXd LatentGrid::level_feature(int l, const Vec3& x) const {
  const Interpolation it = interpolation_weights(x, l);
  const int c = feature_dim();
  const auto& feats = level(l).features;
  Eigen::VectorXd f = Eigen::VectorXd::Zero(c);
  for (std::size_t j = 0; j < 8; ++j) {
    const double* fv = feats.data() + it.slots[j] * c;
    for (int i = 0; i < c; ++i) f[i] += it.weights[j] * fv[i];
  }
  return f;
}

Eigen::VectorXd LatentGrid::encode(const Vec3& x) const {
  const int c = feature_dim();
  Eigen::VectorXd out(encoded_dim());
  for (int l = 0; l < num_levels(); ++l) out.segment(l * c, c) = level_feature(l, x);
  return out;
}

void LatentGrid::encode_batch(const Eigen::Matrix3Xd& points, Eigen::MatrixXd& out,
                              std::vector<Interpolation>* cache) const {
  const int c = feature_dim();
  const int L = num_levels();
  const Eigen::Index n = points.cols();
  out.setZero(encoded_dim(), n);
  if (cache) cache->resize(static_cast<std::size_t>(n * L));
  for (Eigen::Index s = 0; s < n; ++s) {
    const Vec3 x = points.col(s);
    for (int l = 0; l < L; ++l) {
      const Interpolation it = interpolation_weights(x, l);
      const auto& feats = level(l).features;
      double* dst = out.col(s).data() + l * c;
      for (std::size_t j = 0; j < 8; ++j) {
        const double w = it.weights[j];
        const double* fv = feats.data() + it.slots[j] * c;
        for (int i = 0; i < c; ++i) dst[i] += w * fv[i];
      }
      if (cache) (*cache)[static_cast<std::size_t>(s * L + l)] = it;
    }
  }
}

std::span<const double> LatentGrid::vertex_feature(int l, const VertexCoord& v) const {
  const std::int64_t slot = vertex_slot(l, v);
  const int c = feature_dim();
  return {level(l).features.data() + slot * c, static_cast<std::size_t>(c)};
}

void LatentGrid::set_vertex_feature(int l, const VertexCoord& v, std::span<const double> f) {
  if (static_cast<int>(f.size()) != feature_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "set_vertex_feature: width mismatch");
  }
  const std::int64_t slot = vertex_slot(l, v);
  std::copy(f.begin(), f.end(), level(l).features.begin() + slot * feature_dim());
}

void LatentGrid::set_level_features(int l, std::vector<double> features) {
  auto& lv = level(l);
  if (features.size() != lv.features.size()) {
    throw Error(ErrorKind::kInvalidArgument, "set_level_features: size mismatch");
  }
  lv.features = std::move(features);
}

GridGradient LatentGrid::make_gradient() const {
  GridGradient g;
  for (const auto& lv : levels_) g.levels.emplace_back(lv.features.size(), 0.0);
  return g;
}

void LatentGrid::accumulate_gradient(GridGradient& grad, int l, const Interpolation& interp,
                                     std::span<const double> upstream) const {
  const int c = feature_dim();
  auto& g = grad.levels.at(static_cast<std::size_t>(l));
  for (std::size_t j = 0; j < 8; ++j) {
    const double w = interp.weights[j];
    if (w == 0.0) continue;
    double* dst = g.data() + interp.slots[j] * c;
    for (int i = 0; i < c; ++i) dst[i] += w * upstream[static_cast<std::size_t>(i)];
  }
}

void LatentGrid::occupy(const VertexCoord& v) {
  constexpr std::int64_t kMaxBitmap = std::int64_t{1} << 27;
  const GridLevel& fine = levels_.back();
  const std::int64_t m = fine.vertex_count();
  if (m > kMaxBitmap) {
    occupancy_.insert(v);
    return;
  }
  if (occupied_bits_.empty()) occupied_bits_.assign(static_cast<std::size_t>(m), false);
  const auto idx = static_cast<std::size_t>(
      (static_cast<std::int64_t>(v[2]) * fine.dims[1] + v[1]) * fine.dims[0] + v[0]);
  if (occupied_bits_[idx]) return;
  occupied_bits_[idx] = true;
  occupancy_.insert(v);
}

void LatentGrid::mark_occupied(const Vec3& x) { mark_occupied(interpolation_weights(x, num_levels() - 1)); }

void LatentGrid::mark_occupied(const Interpolation& fine) {
  for (const auto& v : fine.coords) occupy(v);
}

void LatentGrid::insert_occupied(const VertexCoord& v) {
  check_coord(num_levels() - 1, v);
  occupy(v);
}

Vec3 LatentGrid::vertex_position(int l, const VertexCoord& v) const {
  const double h = level(l).cell_size;
  return config_.bounds.min + h * Vec3(v[0], v[1], v[2]);
}

std::vector<OccupiedVertex> LatentGrid::occupied_vertices() const {
  std::vector<OccupiedVertex> out;
  out.reserve(occupancy_.size());
  const int fine = num_levels() - 1;
  const Aabb& b = config_.bounds;
  for (const auto& v : occupancy_) {
    // The last vertex along an axis can sit past the max face when the extent
    // is not a multiple of the cell size.
    out.push_back({v, vertex_position(fine, v).cwiseMax(b.min).cwiseMin(b.max)});
  }
  return out;
}

bool LatentGrid::operator==(const LatentGrid& other) const {
  if (levels_.size() != other.levels_.size() || occupancy_ != other.occupancy_) return false;
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const auto& a = levels_[l];
    const auto& b = other.levels_[l];
    if (a.mode != b.mode || a.dims != b.dims || a.cell_size != b.cell_size || a.features != b.features) {
      return false;
    }
  }
  const auto& ca = config_;
  const auto& cb = other.config_;
  return ca.bounds.min == cb.bounds.min && ca.bounds.max == cb.bounds.max && ca.cell_sizes == cb.cell_sizes &&
         ca.feature_dim == cb.feature_dim && ca.table_size == cb.table_size && ca.seed == cb.seed;
}

}  // namespace latmap
