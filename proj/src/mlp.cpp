#include "stealth/mlp.hpp"

#include <algorithm>
#include <cmath>

#include "stealth/error.hpp"

namespace stealth {

std::string to_string(Activation a) {
  switch (a) {
    case Activation::linear: return "linear";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::softmax: return "softmax";
  }
  return "unknown";
}

Activation activation_from_string(const std::string& name) {
  for (auto a : {Activation::linear, Activation::relu, Activation::sigmoid, Activation::tanh,
                 Activation::softmax}) {
    if (to_string(a) == name) return a;
  }
  throw ArgumentError("unknown activation '" + name + "'");
}

Mlp::Mlp(std::vector<LayerSpec> layers) : specs_(std::move(layers)) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    const auto& s = specs_[i];
    if (s.in == 0 || s.out == 0) throw ShapeError("layer " + std::to_string(i) + " has zero width");
    if (i > 0 && specs_[i - 1].out != s.in) {
      throw ShapeError("layer " + std::to_string(i) + " input " + std::to_string(s.in) +
                       " does not match previous output " + std::to_string(specs_[i - 1].out));
    }
    if (s.activation == Activation::softmax && i + 1 != specs_.size()) {
      throw ArgumentError("softmax is only allowed on the final layer");
    }
    if (static_cast<std::uint32_t>(s.activation) > 4) throw ArgumentError("bad activation tag");
    offsets_.push_back(total);
    total += s.in * s.out + s.out;
  }
  params_.assign(total, 0.0);
}

Mlp Mlp::build(std::span<const std::size_t> widths, Activation hidden, Activation output,
               RngStream& rng) {
  if (widths.size() < 2) throw ArgumentError("an Mlp needs at least input and output widths");
  std::vector<LayerSpec> specs;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    specs.push_back({widths[i], widths[i + 1], i + 2 == widths.size() ? output : hidden});
  }
  Mlp net(std::move(specs));
  net.initialize(rng);
  return net;
}

void Mlp::initialize(RngStream& rng) {
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    auto l = layer(i);
    const double limit = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    for (double& w : l.weights) w = rng.uniform(-limit, limit);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

std::size_t Mlp::input_width() const {
  if (specs_.empty()) throw StateError("empty network");
  return specs_.front().in;
}

std::size_t Mlp::output_width() const {
  if (specs_.empty()) throw StateError("empty network");
  return specs_.back().out;
}

DenseLayer Mlp::layer(std::size_t i) {
  const auto& s = specs_.at(i);
  double* base = params_.data() + offsets_[i];
  return {s.in, s.out, s.activation, {base, s.in * s.out}, {base + s.in * s.out, s.out}};
}

ConstDenseLayer Mlp::layer(std::size_t i) const {
  const auto& s = specs_.at(i);
  const double* base = params_.data() + offsets_[i];
  return {s.in, s.out, s.activation, {base, s.in * s.out}, {base + s.in * s.out, s.out}};
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    auto in = logits.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix apply_activation(Activation act, const Matrix& pre) {
  if (act == Activation::softmax) return softmax_rows(pre);
  Matrix out(pre.rows(), pre.cols());
  const auto& src = pre.data();
  auto& dst = out.data();
  switch (act) {
    case Activation::linear: dst = src; break;
    case Activation::relu:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = src[i] > 0.0 ? src[i] : 0.0;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = sigmoid(src[i]);
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < src.size(); ++i) dst[i] = std::tanh(src[i]);
      break;
    case Activation::softmax: break;
  }
  return out;
}

// Gradient with respect to the pre-activation, given the gradient at the activation output.
Matrix activation_backward(Activation act, const Matrix& pre, const Matrix& out, const Matrix& g) {
  Matrix d(g.rows(), g.cols());
  const auto& gv = g.data();
  auto& dv = d.data();
  switch (act) {
    case Activation::linear: dv = gv; break;
    case Activation::relu:
      for (std::size_t i = 0; i < gv.size(); ++i) dv[i] = pre.data()[i] > 0.0 ? gv[i] : 0.0;
      break;
    case Activation::sigmoid:
      for (std::size_t i = 0; i < gv.size(); ++i) {
        const double y = out.data()[i];
        dv[i] = gv[i] * y * (1.0 - y);
      }
      break;
    case Activation::tanh:
      for (std::size_t i = 0; i < gv.size(); ++i) {
        const double y = out.data()[i];
        dv[i] = gv[i] * (1.0 - y * y);
      }
      break;
    case Activation::softmax:
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto y = out.row(r);
        auto gr = g.row(r);
        double dot = 0.0;
        for (std::size_t c = 0; c < y.size(); ++c) dot += y[c] * gr[c];
        auto dr = d.row(r);
        for (std::size_t c = 0; c < y.size(); ++c) dr[c] = y[c] * (gr[c] - dot);
      }
      break;
  }
  return d;
}

Matrix affine(const ConstDenseLayer& l, const Matrix& x) {
  Matrix out(x.rows(), l.out);
  const double* w = l.weights.data();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto xr = x.row(r);
    double* o = out.row(r).data();
    std::copy(l.bias.begin(), l.bias.end(), o);
    for (std::size_t p = 0; p < l.in; ++p) {
      const double xv = xr[p];
      if (xv == 0.0) continue;
      const double* wrow = w + p * l.out;
      for (std::size_t c = 0; c < l.out; ++c) o[c] += xv * wrow[c];
    }
  }
  return out;
}

// d (n x out) times W^T (out x in).
Matrix times_weights_transposed(const ConstDenseLayer& l, const Matrix& d) {
  Matrix out(d.rows(), l.in);
  const double* w = l.weights.data();
  for (std::size_t r = 0; r < d.rows(); ++r) {
    const double* dr = d.row(r).data();
    double* o = out.row(r).data();
    for (std::size_t p = 0; p < l.in; ++p) {
      const double* wrow = w + p * l.out;
      double s = 0.0;
      for (std::size_t c = 0; c < l.out; ++c) s += dr[c] * wrow[c];
      o[p] = s;
    }
  }
  return out;
}

void check_input(const Mlp& net, const Matrix& batch) {
  if (net.layer_count() == 0) throw StateError("forward on an empty network");
  if (batch.cols() != net.input_width()) {
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns, network expects " + std::to_string(net.input_width()));
  }
}

}  // namespace

Matrix forward(const Mlp& net, const Matrix& batch) {
  check_input(net, batch);
  Matrix x = batch;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const auto l = net.layer(i);
    x = apply_activation(l.activation, affine(l, x));
  }
  return x;
}

Matrix forward(const Mlp& net, const Matrix& batch, ForwardCache& cache) {
  check_input(net, batch);
  cache = ForwardCache{};
  Matrix x = batch;
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const auto l = net.layer(i);
    Matrix pre = affine(l, x);
    Matrix out = apply_activation(l.activation, pre);
    cache.inputs.push_back(std::move(x));
    cache.pre.push_back(std::move(pre));
    x = out;
    cache.outputs.push_back(std::move(out));
  }
  return x;
}

MlpGradients backward(const Mlp& net, const ForwardCache& cache, const Matrix& upstream,
                      GradientAt at, bool want_input_gradient) {
  if (cache.empty()) throw StateError("backward called without a forward cache");
  bool matches = cache.inputs.size() == net.layer_count() && cache.pre.size() == net.layer_count() &&
                 cache.outputs.size() == net.layer_count();
  for (std::size_t i = 0; matches && i < net.layer_count(); ++i) {
    matches = cache.inputs[i].cols() == net.specs()[i].in && cache.pre[i].cols() == net.specs()[i].out;
  }
  if (!matches) throw StateError("forward cache does not belong to this network");
  require_same_shape(upstream, cache.outputs.back(), "backward upstream gradient");

  MlpGradients grads;
  grads.params.assign(net.parameter_count(), 0.0);
  const std::size_t n = net.layer_count();

  Matrix g = upstream;
  for (std::size_t idx = n; idx-- > 0;) {
    const auto l = net.layer(idx);
    Matrix d = (idx + 1 == n && at == GradientAt::logits)
                   ? g
                   : activation_backward(l.activation, cache.pre[idx], cache.outputs[idx], g);

    double* gw = grads.params.data() + net.offset(idx);
    double* gb = gw + l.in * l.out;
    matmul_transpose_a_accumulate(cache.inputs[idx], d, gw);
    for (std::size_t r = 0; r < d.rows(); ++r) {
      auto row = d.row(r);
      for (std::size_t c = 0; c < l.out; ++c) gb[c] += row[c];
    }

    if (idx > 0 || want_input_gradient) g = times_weights_transposed(l, d);
  }
  if (want_input_gradient) grads.input = std::move(g);
  return grads;
}

}  // namespace stealth
