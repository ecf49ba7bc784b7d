#pragma once

#include <array>

#include <Eigen/Core>

#include <cstdint>
#include <span>
#include <vector>

namespace latmap {

struct DenseLayer {
  Eigen::MatrixXd weight;  // out x in
  Eigen::VectorXd bias;    // out
};

/// Activations recorded by a forward pass; `inputs[i]` is the input to layer
/// i and `output` the network output, one column per sample.
struct MlpTape {
  std::vector<Eigen::MatrixXd> inputs;
  Eigen::MatrixXd output;
  mutable std::array<Eigen::MatrixXd, 2> scratch;  // backward-pass buffers

  bool empty() const { return inputs.empty(); }
};

/// Per-layer parameter gradients, shaped like the network.
struct MlpGradient {
  std::vector<DenseLayer> layers;

  void zero();
};

/// Feed-forward network: rectifier on hidden layers, identity on the output.
/// Used as the scene-agnostic decoder and as the per-point token aggregator.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<DenseLayer> layers);

  /// He-scaled normal weights, zero biases. Deterministic per seed.
  static Mlp init(std::uint64_t seed, std::span<const int> hidden_dims, int in_dim, int out_dim);

  int in_dim() const;
  int out_dim() const;
  std::size_t num_layers() const { return layers_.size(); }
  std::int64_t num_parameters() const;
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<int> dims() const;  // in, hidden..., out

  Eigen::VectorXd forward(const Eigen::VectorXd& x) const;
  /// Batched forward without recording activations.
  Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& x) const;
  /// Batched forward that records the activations needed by `backward`.
  void forward(const Eigen::MatrixXd& x, MlpTape& tape) const;

  /// Reverse pass for upstream = dLoss/dOutput (out x n). Either output may be
  /// null; parameter gradients are accumulated (added) into `params`.
  void backward(const MlpTape& tape, const Eigen::MatrixXd& upstream, MlpGradient* params,
                Eigen::MatrixXd* input_grad) const;

  MlpGradient make_gradient() const;

  /// Mutable views of every parameter tensor, in layer order (W, b, W, b...).
  std::vector<std::span<double>> parameter_spans();
  std::vector<std::span<const double>> parameter_spans() const;

  bool operator==(const Mlp& other) const;

 private:
  std::vector<DenseLayer> layers_;
};

std::vector<std::span<double>> gradient_spans(MlpGradient& g);

using MlpDecoder = Mlp;

inline MlpDecoder init_decoder(std::uint64_t seed, std::span<const int> hidden_dims, int in_dim,
                               int out_dim) {
  return Mlp::init(seed, hidden_dims, in_dim, out_dim);
}

}  // namespace latmap
