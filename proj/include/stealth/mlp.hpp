#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "stealth/matrix.hpp"
#include "stealth/rng.hpp"

namespace stealth {

// Tag values are part of the weight file format; do not renumber.
enum class Activation : std::uint32_t { linear = 0, relu = 1, sigmoid = 2, tanh = 3, softmax = 4 };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

struct LayerSpec {
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::linear;
  bool operator==(const LayerSpec&) const = default;
};

// Non-owning view of one layer inside an Mlp's parameter block.
// weights is in x out, row-major.
template <typename T>
struct DenseLayerView {
  std::size_t in;
  std::size_t out;
  Activation activation;
  std::span<T> weights;
  std::span<T> bias;
};
using DenseLayer = DenseLayerView<double>;
using ConstDenseLayer = DenseLayerView<const double>;

// Stack of dense layers. All parameters live in one contiguous block so optimizers and
// serialization can treat the network as a flat vector; per-layer views index into it.
class Mlp {
 public:
  Mlp() = default;
  // Zero-initialized network. Throws ShapeError if widths do not chain and ArgumentError
  // if softmax appears anywhere but the last layer.
  explicit Mlp(std::vector<LayerSpec> layers);

  // widths = {in, h1, ..., out}; hidden layers use `hidden`, the last uses `output`.
  static Mlp build(std::span<const std::size_t> widths, Activation hidden, Activation output,
                   RngStream& rng);

  // Weights uniform in +-sqrt(6 / (fan_in + fan_out)); biases zero.
  void initialize(RngStream& rng);

  std::size_t layer_count() const noexcept { return specs_.size(); }
  std::size_t input_width() const;
  std::size_t output_width() const;
  std::size_t parameter_count() const noexcept { return params_.size(); }
  const std::vector<LayerSpec>& specs() const noexcept { return specs_; }
  std::size_t offset(std::size_t layer) const { return offsets_.at(layer); }

  DenseLayer layer(std::size_t i);
  ConstDenseLayer layer(std::size_t i) const;

  std::span<double> parameters() noexcept { return params_; }
  std::span<const double> parameters() const noexcept { return params_; }

  bool operator==(const Mlp&) const = default;

 private:
  std::vector<LayerSpec> specs_;
  std::vector<std::size_t> offsets_;
  std::vector<double> params_;
};

// Per-layer values retained by a training forward pass.
// inputs[i] is the input to layer i, pre[i] its affine output, outputs[i] its activation.
struct ForwardCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
  std::vector<Matrix> outputs;
  bool empty() const noexcept { return inputs.empty(); }
};

Matrix forward(const Mlp& net, const Matrix& batch);
Matrix forward(const Mlp& net, const Matrix& batch, ForwardCache& cache);

// Where the upstream gradient is taken: with respect to the network output, or with respect
// to the last layer's pre-activation (logits), which skips the final activation's Jacobian.
enum class GradientAt { output, logits };

struct MlpGradients {
  std::vector<double> params;  // same layout as Mlp::parameters()
  Matrix input;                // empty when not requested
};

// Throws StateError if the cache is empty or was not produced by `net`.
MlpGradients backward(const Mlp& net, const ForwardCache& cache, const Matrix& upstream,
                      GradientAt at = GradientAt::output, bool want_input_gradient = true);

// Row-wise softmax with max subtraction.
Matrix softmax_rows(const Matrix& logits);

}  // namespace stealth
