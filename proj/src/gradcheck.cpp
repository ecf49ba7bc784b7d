#include "latmap/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "latmap/grid.hpp"
#include "latmap/mlp.hpp"
#include "latmap/random.hpp"
#include "latmap/trainer.hpp"

namespace latmap {

namespace {

struct Toy {
  LatentGrid grid;
  Mlp decoder;
  SampleBatch batch;
};

Toy make_case(std::uint64_t seed, int batch) {
  Rng rng(seed);
  GridConfig gc;
  gc.bounds = {Vec3::Zero(), Vec3::Ones()};
  gc.cell_sizes = {0.5, 0.25};
  gc.feature_dim = 2 + static_cast<int>(rng.below(3));
  gc.table_size = 64;  // coarse 27 vertices dense, fine 125 vertices hashed
  gc.seed = rng.next();
  Toy t{LatentGrid(gc), {}, {}};
  for (int l = 0; l < t.grid.num_levels(); ++l) {
    std::vector<double> f(t.grid.level(l).features.size());
    for (double& v : f) v = 0.5 * rng.normal();
    t.grid.set_level_features(l, std::move(f));
  }
  const int k = 3 + static_cast<int>(rng.below(4));
  const int hidden[] = {6 + static_cast<int>(rng.below(6)), 6 + static_cast<int>(rng.below(6))};
  t.decoder = Mlp::init(rng.next(), hidden, t.grid.encoded_dim(), k);
  // Non-zero biases so the rectifiers are not all aligned at the origin.
  std::vector<DenseLayer> layers = t.decoder.layers();
  for (auto& l : layers) {
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) l.bias[i] = 0.1 * rng.normal();
  }
  t.decoder = Mlp(std::move(layers));
  t.batch.reserve(k, batch);
  t.batch.patch_rows = 1;
  t.batch.patch_cols = batch;
  for (int i = 0; i < batch; ++i) {
    t.batch.points.col(i) = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    Eigen::VectorXd y(k);
    for (int j = 0; j < k; ++j) y[j] = rng.normal();
    t.batch.targets.col(i) = y.normalized();
    t.batch.patches[static_cast<std::size_t>(i)] = {0, i};
  }
  return t;
}

}  // namespace

GradcheckReport run_gradcheck(std::uint64_t seed, const GradcheckConfig& cfg) {
  GradcheckReport report;
  const double h = cfg.step;
  auto compare = [&](double analytic, double numeric, const std::string& where) {
    const double scale = std::max(std::abs(analytic), std::abs(numeric));
    const double err = std::abs(analytic - numeric);
    if (scale > 1e-6) report.max_rel_error = std::max(report.max_rel_error, err / scale);
    if (err > cfg.rel_tol * scale + cfg.abs_tol) {
      if (report.failures == 0) {
        std::ostringstream os;
        os.precision(12);
        os << where << ": analytic " << analytic << " numeric " << numeric;
        report.first_failure = os.str();
      }
      ++report.failures;
    }
  };

  for (int c = 0; c < cfg.cases; ++c) {
    Toy t = make_case(seed * 7919u + static_cast<std::uint64_t>(c), cfg.batch);
    GridGradient gg = t.grid.make_gradient();
    MlpGradient dg = t.decoder.make_gradient();
    loss_and_gradients(t.grid, t.decoder, t.batch, LossKind::kCosine, &gg, &dg);
    auto loss = [&] { return loss_and_gradients(t.grid, t.decoder, t.batch, LossKind::kCosine, nullptr, nullptr); };

    for (int l = 0; l < t.grid.num_levels(); ++l) {
      auto& feats = t.grid.level(l).features;
      for (std::size_t i = 0; i < feats.size(); ++i) {
        const double orig = feats[i];
        feats[i] = orig + h;
        const double up = loss();
        feats[i] = orig - h;
        const double down = loss();
        feats[i] = orig;
        compare(gg.levels[static_cast<std::size_t>(l)][i], (up - down) / (2.0 * h),
                "case " + std::to_string(c) + " grid level " + std::to_string(l) + " entry " + std::to_string(i));
        ++report.grid_params_checked;
      }
    }
    auto params = t.decoder.parameter_spans();
    auto grads = gradient_spans(dg);
    for (std::size_t p = 0; p < params.size(); ++p) {
      for (std::size_t i = 0; i < params[p].size(); ++i) {
        const double orig = params[p][i];
        params[p][i] = orig + h;
        const double up = loss();
        params[p][i] = orig - h;
        const double down = loss();
        params[p][i] = orig;
        compare(grads[p][i], (up - down) / (2.0 * h),
                "case " + std::to_string(c) + " decoder tensor " + std::to_string(p) + " entry " + std::to_string(i));
        ++report.decoder_params_checked;
      }
    }
    ++report.cases;
  }
  return report;
}

}  // namespace latmap
