#include "latmap/mlp.hpp"

#include <cmath>
#include <string>

#include "latmap/error.hpp"
#include "latmap/random.hpp"

namespace latmap {

void MlpGradient::zero() {
  for (auto& l : layers) {
    l.weight.setZero();
    l.bias.setZero();
  }
}

Mlp::Mlp(std::vector<DenseLayer> layers) : layers_(std::move(layers)) {
  if (layers_.empty()) throw Error(ErrorKind::kInvalidArgument, "mlp: at least one layer required");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (l.weight.rows() < 1 || l.weight.cols() < 1 || l.bias.size() != l.weight.rows()) {
      throw Error(ErrorKind::kInvalidArgument, "mlp: layer " + std::to_string(i) + " has inconsistent shape");
    }
    if (i > 0 && l.weight.cols() != layers_[i - 1].weight.rows()) {
      throw Error(ErrorKind::kInvalidArgument, "mlp: layer " + std::to_string(i) + " does not chain");
    }
    if (!l.weight.allFinite() || !l.bias.allFinite()) {
      throw Error(ErrorKind::kInvalidArgument, "mlp: non-finite parameters");
    }
  }
}

Mlp Mlp::init(std::uint64_t seed, std::span<const int> hidden_dims, int in_dim, int out_dim) {
  std::vector<int> dims{in_dim};
  dims.insert(dims.end(), hidden_dims.begin(), hidden_dims.end());
  dims.push_back(out_dim);
  for (int d : dims) {
    if (d < 1) throw Error(ErrorKind::kInvalidArgument, "mlp: dimensions must be positive");
  }
  Rng rng(seed);
  std::vector<DenseLayer> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    DenseLayer l;
    const double scale = std::sqrt(2.0 / dims[i]);
    l.weight.resize(dims[i + 1], dims[i]);
    // Fill row-major so the draw order matches the file layout.
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = round_f32(scale * rng.normal());
    }
    l.bias = Eigen::VectorXd::Zero(dims[i + 1]);
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

int Mlp::in_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.front().weight.cols()); }
int Mlp::out_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().weight.rows()); }

std::int64_t Mlp::num_parameters() const {
  std::int64_t n = 0;
  for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
  return n;
}

std::vector<int> Mlp::dims() const {
  std::vector<int> d;
  if (layers_.empty()) return d;
  d.push_back(in_dim());
  for (const auto& l : layers_) d.push_back(static_cast<int>(l.weight.rows()));
  return d;
}

Eigen::VectorXd Mlp::forward(const Eigen::VectorXd& x) const {
  return forward_batch(x);
}

Eigen::MatrixXd Mlp::forward_batch(const Eigen::MatrixXd& x) const {
  if (x.rows() != in_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "mlp: input dimension " + std::to_string(x.rows()) +
                                                 " != " + std::to_string(in_dim()));
  }
  Eigen::MatrixXd a = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXd z(layers_[i].weight.rows(), a.cols());
    z.noalias() = layers_[i].weight * a;
    z.colwise() += layers_[i].bias;
    if (i + 1 < layers_.size()) z = z.cwiseMax(0.0);
    a = std::move(z);
  }
  return a;
}

void Mlp::forward(const Eigen::MatrixXd& x, MlpTape& tape) const {
  if (x.rows() != in_dim()) {
    throw Error(ErrorKind::kInvalidArgument, "mlp: input dimension " + std::to_string(x.rows()) +
                                                 " != " + std::to_string(in_dim()));
  }
  tape.inputs.resize(layers_.size());
  tape.inputs[0] = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    Eigen::MatrixXd& dst = (i + 1 < layers_.size()) ? tape.inputs[i + 1] : tape.output;
    dst.resize(layers_[i].weight.rows(), x.cols());
    dst.noalias() = layers_[i].weight * tape.inputs[i];
    if (i + 1 < layers_.size()) {
      dst = (dst.colwise() + layers_[i].bias).cwiseMax(0.0);
    } else {
      dst.colwise() += layers_[i].bias;
    }
  }
}

void Mlp::backward(const MlpTape& tape, const Eigen::MatrixXd& upstream, MlpGradient* params,
                   Eigen::MatrixXd* input_grad) const {
  if (tape.empty() || tape.inputs.size() != layers_.size()) {
    throw Error(ErrorKind::kState, "mlp: backward called without a matching forward pass");
  }
  if (upstream.rows() != out_dim() || upstream.cols() != tape.output.cols()) {
    throw Error(ErrorKind::kInvalidArgument, "mlp: upstream gradient shape mismatch");
  }
  if (params && params->layers.size() != layers_.size()) {
    throw Error(ErrorKind::kInvalidArgument, "mlp: gradient buffer shape mismatch");
  }
  // `g` is the gradient with respect to the current layer's output; the
  // rectifier mask is applied as soon as a gradient with respect to a hidden
  // activation is formed. Scratch buffers alternate so nothing is reallocated.
  auto& bufs = tape.scratch;
  const Eigen::MatrixXd* g = &upstream;
  int cur = 0;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    if (params) {
      params->layers[k].weight.noalias() += *g * tape.inputs[k].transpose();
      params->layers[k].bias += g->rowwise().sum();
    }
    if (k == 0 && !input_grad) break;
    Eigen::MatrixXd& next = bufs[cur];
    next.resize(layers_[k].weight.cols(), g->cols());
    next.noalias() = layers_[k].weight.transpose() * *g;
    // inputs[k] (k > 0) is a rectifier output: positive iff the pre-activation was.
    if (k > 0) next = (tape.inputs[k].array() > 0.0).select(next, 0.0);
    g = &next;
    cur = 1 - cur;
  }
  if (input_grad) *input_grad = *g;
}

MlpGradient Mlp::make_gradient() const {
  MlpGradient g;
  for (const auto& l : layers_) {
    g.layers.push_back({Eigen::MatrixXd::Zero(l.weight.rows(), l.weight.cols()),
                        Eigen::VectorXd::Zero(l.bias.size())});
  }
  return g;
}

std::vector<std::span<double>> Mlp::parameter_spans() {
  std::vector<std::span<double>> out;
  for (auto& l : layers_) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<const double>> Mlp::parameter_spans() const {
  std::vector<std::span<const double>> out;
  for (const auto& l : layers_) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

std::vector<std::span<double>> gradient_spans(MlpGradient& g) {
  std::vector<std::span<double>> out;
  for (auto& l : g.layers) {
    out.emplace_back(l.weight.data(), static_cast<std::size_t>(l.weight.size()));
    out.emplace_back(l.bias.data(), static_cast<std::size_t>(l.bias.size()));
  }
  return out;
}

bool Mlp::operator==(const Mlp& other) const {
  if (layers_.size() != other.layers_.size()) return false;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& a = layers_[i];
    const auto& b = other.layers_[i];
    if (a.weight.rows() != b.weight.rows() || a.weight.cols() != b.weight.cols()) return false;
    if (a.weight != b.weight || a.bias != b.bias) return false;
  }
  return true;
}

}  // namespace latmap
