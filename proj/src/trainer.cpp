#include "latmap/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "latmap/error.hpp"

namespace latmap {

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::kInvalidArgument, "train: batch_size must be >= 1");
  if (!(lr_grid > 0.0) || !(lr_decoder > 0.0)) {
    throw Error(ErrorKind::kInvalidArgument, "train: learning rates must be positive");
  }
  if (!(adam.beta1 > 0.0 && adam.beta1 < 1.0) || !(adam.beta2 > 0.0 && adam.beta2 < 1.0)) {
    throw Error(ErrorKind::kInvalidArgument, "train: adam betas must lie in (0, 1)");
  }
  if (!(adam.eps > 0.0)) throw Error(ErrorKind::kInvalidArgument, "train: adam eps must be positive");
  if (steps < 0 || epochs < 0) throw Error(ErrorKind::kInvalidArgument, "train: steps/epochs must be >= 0");
}

namespace {

// Writes scale * dLoss/dPrediction into `grad` and returns the loss.
double cosine_into(const Eigen::Ref<const Eigen::VectorXd>& prediction,
                   const Eigen::Ref<const Eigen::VectorXd>& target, double scale,
                   Eigen::Ref<Eigen::VectorXd> grad) {
  const double np = prediction.norm();
  const double nt = target.norm();
  const double dot = prediction.dot(target);
  const double prod = np * nt;
  if (prod > kCosineDenominatorEps) {
    grad = (scale * dot / (np * np * prod)) * prediction - (scale / prod) * target;
    return 1.0 - dot / prod;
  }
  grad = (-scale / kCosineDenominatorEps) * target;
  return 1.0 - dot / kCosineDenominatorEps;
}

double l2_into(const Eigen::Ref<const Eigen::VectorXd>& prediction,
               const Eigen::Ref<const Eigen::VectorXd>& target, double scale, Eigen::Ref<Eigen::VectorXd> grad) {
  grad = (2.0 * scale) * (prediction - target);
  return (prediction - target).squaredNorm();
}

}  // namespace

LossEval cosine_loss(const Eigen::Ref<const Eigen::VectorXd>& prediction,
                     const Eigen::Ref<const Eigen::VectorXd>& target) {
  if (prediction.size() != target.size()) {
    throw Error(ErrorKind::kInvalidArgument, "cosine_loss: dimension mismatch");
  }
  LossEval out;
  out.grad.resize(prediction.size());
  out.loss = cosine_into(prediction, target, 1.0, out.grad);
  return out;
}

LossEval l2_loss(const Eigen::Ref<const Eigen::VectorXd>& prediction,
                 const Eigen::Ref<const Eigen::VectorXd>& target) {
  if (prediction.size() != target.size()) {
    throw Error(ErrorKind::kInvalidArgument, "l2_loss: dimension mismatch");
  }
  LossEval out;
  out.grad.resize(prediction.size());
  out.loss = l2_into(prediction, target, 1.0, out.grad);
  return out;
}

void adam_update(std::span<double> params, std::span<const double> grads, AdamMoments& moments,
                 std::int64_t t, double lr, const AdamConfig& cfg, bool round_to_f32) {
  const std::size_t n = params.size();
  if (grads.size() != n) throw Error(ErrorKind::kInvalidArgument, "adam: gradient shape mismatch");
  if (moments.m.empty() && moments.v.empty()) {
    moments.m.assign(n, 0.0);
    moments.v.assign(n, 0.0);
  }
  if (moments.m.size() != n || moments.v.size() != n) {
    throw Error(ErrorKind::kInvalidArgument, "adam: moment shape mismatch");
  }
  const double b1 = cfg.beta1;
  const double b2 = cfg.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  double* m = moments.m.data();
  double* v = moments.v.data();
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grads[i];
    if (g == 0.0 && m[i] == 0.0 && v[i] == 0.0) continue;
    m[i] = b1 * m[i] + (1.0 - b1) * g;
    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    double p = params[i] - lr * mhat / (std::sqrt(vhat) + cfg.eps);
    if (round_to_f32) p = round_f32(p);
    params[i] = p;
  }
}

void adam_step(const std::vector<std::span<double>>& params,
               const std::vector<std::span<const double>>& grads, AdamState& state, double lr,
               const AdamConfig& cfg, bool round_to_f32) {
  if (params.size() != grads.size()) throw Error(ErrorKind::kInvalidArgument, "adam: tensor count mismatch");
  if (state.tensors.empty()) state.tensors.resize(params.size());
  if (state.tensors.size() != params.size()) {
    throw Error(ErrorKind::kInvalidArgument, "adam: state tensor count mismatch");
  }
  ++state.step;
  for (std::size_t i = 0; i < params.size(); ++i) {
    adam_update(params[i], grads[i], state.tensors[i], state.step, lr, cfg, round_to_f32);
  }
}

double loss_and_gradients(const LatentGrid& grid, const MlpDecoder& decoder, const SampleBatch& batch,
                          LossKind loss, GridGradient* grid_grad, MlpGradient* decoder_grad, StepWorkspace* ws) {
  const Eigen::Index n = batch.size();
  if (n == 0) throw Error(ErrorKind::kInvalidArgument, "loss: empty batch");
  if (batch.dim() != decoder.out_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "loss: target dimension " + std::to_string(batch.dim()) +
                                                 " != decoder output " + std::to_string(decoder.out_dim()));
  }
  if (decoder.in_dim() != grid.encoded_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "loss: decoder input does not match grid encoding width");
  }
  StepWorkspace local;
  StepWorkspace& w = ws ? *ws : local;
  const int L = grid.num_levels();
  const int c = grid.feature_dim();

  grid.encode_batch(batch.points, w.encoded, grid_grad ? &w.cache : nullptr);
  decoder.forward(w.encoded, w.tape);
  const Eigen::MatrixXd& pred = w.tape.output;

  w.upstream.resize(pred.rows(), n);
  double total = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    total += loss == LossKind::kCosine ? cosine_into(pred.col(i), batch.targets.col(i), inv_n, w.upstream.col(i))
                                       : l2_into(pred.col(i), batch.targets.col(i), inv_n, w.upstream.col(i));
  }
  if (!grid_grad && !decoder_grad) return total * inv_n;

  decoder.backward(w.tape, w.upstream, decoder_grad, grid_grad ? &w.d_encoded : nullptr);
  if (grid_grad) {
    for (Eigen::Index i = 0; i < n; ++i) {
      for (int l = 0; l < L; ++l) {
        grid.accumulate_gradient(*grid_grad, l, w.cache[static_cast<std::size_t>(i * L + l)],
                                 std::span<const double>(w.d_encoded.col(i).data() + l * c,
                                                         static_cast<std::size_t>(c)));
      }
    }
  }
  return total * inv_n;
}

double train_step(LatentGrid& grid, MlpDecoder& decoder, const SampleBatch& batch, const TrainConfig& cfg,
                  TrainState& state, double lr_grid_override) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "train_step: empty batch");
  StepWorkspace& w = state.workspace;
  if (w.grid_grad.levels.size() != static_cast<std::size_t>(grid.num_levels())) {
    w.grid_grad = grid.make_gradient();
  } else {
    w.grid_grad.zero();
  }
  if (!cfg.freeze_decoder) {
    if (w.decoder_grad.layers.size() != decoder.num_layers()) {
      w.decoder_grad = decoder.make_gradient();
    } else {
      w.decoder_grad.zero();
    }
  }
  const double loss = loss_and_gradients(grid, decoder, batch, cfg.loss, &w.grid_grad,
                                         cfg.freeze_decoder ? nullptr : &w.decoder_grad, &w);

  std::vector<std::span<double>> gp;
  std::vector<std::span<const double>> gg;
  for (int l = 0; l < grid.num_levels(); ++l) {
    gp.emplace_back(grid.level(l).features);
    gg.emplace_back(w.grid_grad.levels[static_cast<std::size_t>(l)]);
  }
  const double lr_grid = lr_grid_override > 0.0 ? lr_grid_override : cfg.lr_grid;
  adam_step(gp, gg, state.grid, lr_grid, cfg.adam, true);

  if (!cfg.freeze_decoder) {
    std::vector<std::span<const double>> dg;
    for (auto s : gradient_spans(w.decoder_grad)) dg.emplace_back(s);
    adam_step(decoder.parameter_spans(), dg, state.decoder, cfg.lr_decoder, cfg.adam, true);
  }

  const auto L = static_cast<std::size_t>(grid.num_levels());
  for (std::size_t i = 0; i < static_cast<std::size_t>(batch.size()); ++i) grid.mark_occupied(w.cache[i * L + L - 1]);
  return loss;
}

BatchSampler::BatchSampler(Eigen::Index dataset_size, int batch_size, std::uint64_t seed)
    : order_(static_cast<std::size_t>(dataset_size)), batch_size_(batch_size), rng_(seed) {
  if (dataset_size < 1) throw Error(ErrorKind::kInvalidArgument, "sampler: empty dataset");
  if (batch_size < 1) throw Error(ErrorKind::kInvalidArgument, "sampler: batch_size must be >= 1");
  std::iota(order_.begin(), order_.end(), Eigen::Index{0});
  reshuffle();
}

void BatchSampler::reshuffle() {
  rng_.shuffle(order_.begin(), order_.end());
  cursor_ = 0;
}

Eigen::Index BatchSampler::batches_per_epoch() const {
  const auto n = static_cast<Eigen::Index>(order_.size());
  return (n + batch_size_ - 1) / batch_size_;
}

std::vector<Eigen::Index> BatchSampler::next() {
  const auto n = static_cast<Eigen::Index>(order_.size());
  if (cursor_ >= n) reshuffle();
  const Eigen::Index end = std::min(n, cursor_ + batch_size_);
  std::vector<Eigen::Index> idx(order_.begin() + cursor_, order_.begin() + end);
  cursor_ = end;
  // Sorted indices keep gathers cache-friendly; the loss is a mean so order
  // within a batch does not matter.
  std::sort(idx.begin(), idx.end());
  return idx;
}

SampleBatch concat(const std::vector<SampleBatch>& batches) {
  SampleBatch out;
  Eigen::Index total = 0;
  Eigen::Index k = -1;
  for (const auto& b : batches) {
    if (b.empty()) continue;
    if (k >= 0 && b.dim() != k) throw Error(ErrorKind::kInvalidArgument, "concat: inconsistent embedding dim");
    k = b.dim();
    total += b.size();
  }
  if (k < 0) return out;
  out.source_frame_id = "concat";
  out.reserve(k, total);
  Eigen::Index pos = 0;
  for (const auto& b : batches) {
    if (b.empty()) continue;
    out.points.middleCols(pos, b.size()) = b.points;
    out.targets.middleCols(pos, b.size()) = b.targets;
    std::copy(b.patches.begin(), b.patches.end(), out.patches.begin() + pos);
    pos += b.size();
  }
  return out;
}

namespace {

int total_steps(const TrainConfig& cfg, Eigen::Index batches_per_epoch) {
  if (cfg.epochs > 0) return static_cast<int>(cfg.epochs * batches_per_epoch);
  return cfg.steps;
}

}  // namespace

std::vector<double> fit_scene(LatentGrid& grid, MlpDecoder& decoder, const SampleBatch& dataset,
                              const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (dataset.empty()) throw Error(ErrorKind::kInvalidArgument, "fit_scene: empty dataset");
  BatchSampler sampler(dataset.size(), cfg.batch_size, cfg.seed);
  TrainState state;
  const int steps = total_steps(cfg, sampler.batches_per_epoch());
  std::vector<double> history;
  history.reserve(static_cast<std::size_t>(steps));
  SampleBatch batch;
  for (int s = 0; s < steps; ++s) {
    dataset.select_into(sampler.next(), batch);
    history.push_back(train_step(grid, decoder, batch, cfg, state));
    if (on_step) on_step(s + 1, history.back());
  }
  return history;
}

PretrainResult pretrain_decoder(const std::vector<SampleBatch>& scenes, const std::vector<GridConfig>& grids,
                                MlpDecoder decoder, const TrainConfig& cfg, const StepCallback& on_step) {
  cfg.validate();
  if (scenes.empty()) throw Error(ErrorKind::kInvalidArgument, "pretrain: at least one scene required");
  if (grids.size() != scenes.size()) {
    throw Error(ErrorKind::kInvalidArgument, "pretrain: one grid config per scene required");
  }
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (scenes[i].empty()) throw Error(ErrorKind::kInvalidArgument, "pretrain: scene " + std::to_string(i) + " is empty");
    if (scenes[i].dim() != scenes[0].dim()) {
      throw Error(ErrorKind::kInvalidArgument, "pretrain: inconsistent embedding dimension across scenes");
    }
  }
  PretrainResult out;
  out.decoder = std::move(decoder);
  std::vector<BatchSampler> samplers;
  std::vector<AdamState> grid_states(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    out.grids.emplace_back(grids[i]);
    samplers.emplace_back(scenes[i].size(), cfg.batch_size, cfg.seed + i);
  }
  Eigen::Index per_round = 0;
  for (const auto& s : samplers) per_round += s.batches_per_epoch();
  const int steps = total_steps(cfg, per_round);

  TrainState state;
  SampleBatch batch;
  for (int s = 0; s < steps; ++s) {
    const auto scene = static_cast<std::size_t>(s) % scenes.size();
    scenes[scene].select_into(samplers[scene].next(), batch);
    std::swap(state.grid, grid_states[scene]);
    out.losses.push_back(train_step(out.grids[scene], out.decoder, batch, cfg, state));
    std::swap(state.grid, grid_states[scene]);
    if (on_step) on_step(s + 1, out.losses.back());
  }
  return out;
}

Eigen::VectorXd decode_point(const LatentGrid& grid, const MlpDecoder& decoder, const Vec3& x) {
  return decoder.forward(grid.encode(x));
}

Eigen::VectorXd sample_cosines(const LatentGrid& grid, const MlpDecoder& decoder, const SampleBatch& batch) {
  Eigen::VectorXd out(batch.size());
  if (batch.empty()) return out;
  constexpr Eigen::Index kChunk = 8192;
  for (Eigen::Index start = 0; start < batch.size(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, batch.size() - start);
    Eigen::MatrixXd encoded;
    grid.encode_batch(batch.points.middleCols(start, len), encoded);
    const Eigen::MatrixXd pred = decoder.forward_batch(encoded);
    for (Eigen::Index i = 0; i < len; ++i) {
      out[start + i] = 1.0 - cosine_loss(pred.col(i), batch.targets.col(start + i)).loss;
    }
  }
  return out;
}

double mean_cosine(const LatentGrid& grid, const MlpDecoder& decoder, const SampleBatch& batch) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "mean_cosine: empty batch");
  return sample_cosines(grid, decoder, batch).mean();
}

}  // namespace latmap
