#include "stealth/ids.hpp"

#include <cmath>
#include <numeric>

#include "stealth/adam.hpp"
#include "stealth/error.hpp"
#include "stealth/losses.hpp"

namespace stealth {

Mlp make_ids_net(RngStream& rng) {
  const std::array<std::size_t, 5> widths = {kFeatureCount, 128, 128, 128, kClassCount};
  return Mlp::build(widths, Activation::relu, Activation::softmax, rng);
}

std::vector<int> argmax_rows(const Matrix& m) {
  std::vector<int> out(m.rows());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    std::size_t best = 0;
    for (std::size_t c = 1; c < row.size(); ++c) {
      if (row[c] > row[best]) best = c;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

Matrix predict_proba(const IdsModel& model, const Matrix& batch) {
  if (batch.cols() != kFeatureCount) {
    throw ShapeError("IDS expects " + std::to_string(kFeatureCount) + " features, got " +
                     std::to_string(batch.cols()));
  }
  return forward(model.net, batch);
}

std::vector<int> predict_label(const IdsModel& model, const Matrix& batch) {
  return argmax_rows(predict_proba(model, batch));
}

double accuracy(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("accuracy: size mismatch");
  if (truth.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) hits += truth[i] == predicted[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(truth.size());
}

ConfusionMatrix confusion_from_labels(std::span<const int> truth, std::span<const int> predicted) {
  if (truth.size() != predicted.size()) throw ShapeError("confusion: size mismatch");
  ConfusionMatrix cm;
  std::size_t trace = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (t >= kClassCount || p >= kClassCount) throw ArgumentError("confusion: label out of range");
    ++cm.counts[t][p];
    trace += t == p ? 1 : 0;
  }
  cm.total = truth.size();
  cm.accuracy = cm.total ? static_cast<double>(trace) / static_cast<double>(cm.total) : 0.0;
  return cm;
}

ConfusionMatrix confusion_matrix(const IdsModel& model, const Dataset& data) {
  return confusion_from_labels(data.labels, predict_label(model, data.features));
}

IdsTrainResult train_ids(const Dataset& train, const IdsTrainConfig& config) {
  if (config.batch_size == 0 || !(config.learning_rate > 0.0)) {
    throw ArgumentError("IDS training needs a positive batch size and learning rate");
  }
  if (train.size() == 0) throw ArgumentError("IDS training set is empty");
  const RngStream root(config.seed);
  RngStream init_rng = root.derive("ids-init");
  RngStream shuffle_rng = root.derive("ids-shuffle");

  IdsTrainResult result;
  result.model.net = make_ids_net(init_rng);
  Mlp& net = result.model.net;
  AdamState adam(net.parameter_count(), AdamConfig{.learning_rate = config.learning_rate});

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t perfect_streak = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      const Matrix x = select_rows(train.features, rows);
      std::vector<int> y;
      y.reserve(rows.size());
      for (auto r : rows) y.push_back(train.labels[r]);

      ForwardCache cache;
      forward(net, x, cache);
      const auto ce = softmax_cross_entropy(cache.pre.back(), y);
      if (!std::isfinite(ce.loss)) {
        throw NumericError("IDS training became non-finite at epoch " + std::to_string(epoch) + ": loss");
      }
      loss_sum += ce.loss * static_cast<double>(rows.size());
      const auto grads = backward(net, cache, ce.grad, GradientAt::logits, false);
      try {
        adam_step(adam, net.parameters(), grads.params);
      } catch (const NumericError& e) {
        throw NumericError("IDS training became non-finite at epoch " + std::to_string(epoch) + ": " + e.what());
      }
    }
    result.loss_curve.push_back(loss_sum / static_cast<double>(train.size()));
    const double acc = accuracy(train.labels, predict_label(result.model, train.features));
    result.accuracy_curve.push_back(acc);
    perfect_streak = acc == 1.0 ? perfect_streak + 1 : 0;
    if (config.early_stop_patience > 0 && perfect_streak >= config.early_stop_patience) break;
  }
  result.final_train_accuracy = accuracy(train.labels, predict_label(result.model, train.features));
  return result;
}

}  // namespace stealth
