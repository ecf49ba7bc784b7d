#include "latmap/token.hpp"

#include <cmath>
#include <numbers>

#include "latmap/error.hpp"
#include "latmap/parallel.hpp"

namespace latmap {

Eigen::VectorXd positional_encode(const Vec3& z, const PosEncConfig& cfg) {
  if (cfg.num_frequencies < 1) throw Error(ErrorKind::kInvalidArgument, "posenc: num_frequencies must be >= 1");
  if (!z.allFinite() || !cfg.bounds.contains(z)) {
    throw Error(ErrorKind::kOutOfBounds, "posenc: point outside bounds");
  }
  const int B = cfg.num_frequencies;
  Eigen::VectorXd out(6 * B);
  const Vec3 u = (z - cfg.bounds.min).cwiseQuotient(cfg.bounds.extent());
  for (int a = 0; a < 3; ++a) {
    double freq = std::numbers::pi;
    for (int b = 0; b < B; ++b) {
      out[a * 2 * B + 2 * b] = std::sin(freq * u[a]);
      out[a * 2 * B + 2 * b + 1] = std::cos(freq * u[a]);
      freq *= 2.0;
    }
  }
  return out;
}

DecodedSet decode_occupied(const LatentGrid& grid, const MlpDecoder& decoder) {
  const auto verts = grid.occupied_vertices();
  DecodedSet out;
  const auto n = static_cast<Eigen::Index>(verts.size());
  out.coords.reserve(verts.size());
  out.positions.resize(3, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    out.coords.push_back(verts[static_cast<std::size_t>(i)].coord);
    out.positions.col(i) = verts[static_cast<std::size_t>(i)].position;
  }
  out.features.resize(decoder.out_dim(), n);
  constexpr Eigen::Index kChunk = 4096;
  const Eigen::Index chunks = (n + kChunk - 1) / kChunk;
  // Each chunk writes a disjoint column range, so the result does not depend
  // on the thread count.
  parallel_for(chunks, [&](Eigen::Index c) {
    const Eigen::Index start = c * kChunk;
    const Eigen::Index len = std::min(kChunk, n - start);
    Eigen::MatrixXd encoded;
    grid.encode_batch(out.positions.middleCols(start, len), encoded);
    out.features.middleCols(start, len) = decoder.forward_batch(encoded);
  });
  return out;
}

AggregatorWeights AggregatorWeights::init(const AggregatorConfig& cfg, int feature_dim) {
  if (cfg.num_frequencies < 1 || cfg.token_dim < 1 || feature_dim < 1) {
    throw Error(ErrorKind::kInvalidArgument, "aggregator: dimensions must be positive");
  }
  AggregatorWeights w;
  w.num_frequencies = cfg.num_frequencies;
  w.mlp = Mlp::init(cfg.seed, cfg.hidden, feature_dim + 6 * cfg.num_frequencies, cfg.token_dim);
  return w;
}

Eigen::MatrixXd point_features(const DecodedSet& set, const AggregatorWeights& weights, const Aabb& bounds) {
  if (set.size() > 0 && set.features.rows() != weights.feature_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "aggregator: expects features of dim " +
                                                 std::to_string(weights.feature_dim()) + ", got " +
                                                 std::to_string(set.features.rows()));
  }
  const PosEncConfig pe{weights.num_frequencies, bounds};
  const int pe_dim = pe.output_dim();
  Eigen::MatrixXd input(pe_dim + set.features.rows(), set.size());
  for (Eigen::Index i = 0; i < set.size(); ++i) {
    input.col(i).head(pe_dim) = positional_encode(set.positions.col(i), pe);
    input.col(i).tail(set.features.rows()) = set.features.col(i);
  }
  // Column by column: blocked GEMM kernels may round a column differently
  // depending on where it sits in the batch, which would break bit-exact
  // permutation invariance of the pooled token.
  Eigen::MatrixXd out(weights.token_dim(), set.size());
  for (Eigen::Index i = 0; i < set.size(); ++i) out.col(i) = weights.mlp.forward(input.col(i));
  return out;
}

MapToken aggregate(const DecodedSet& set, const AggregatorWeights& weights, const Aabb& bounds,
                   std::uint64_t map_revision) {
  if (set.size() == 0) throw Error(ErrorKind::kEmptyMap, "aggregate: map has no occupied vertices");
  const Eigen::MatrixXd per_point = point_features(set, weights, bounds);
  MapToken t;
  t.values = per_point.rowwise().maxCoeff();
  t.vertex_count = set.size();
  t.map_revision = map_revision;
  return t;
}

MapToken zero_token(int token_dim, std::uint64_t map_revision) {
  MapToken t;
  t.values = Eigen::VectorXd::Zero(token_dim);
  t.map_revision = map_revision;
  return t;
}

}  // namespace latmap
