#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stealth/data.hpp"
#include "stealth/mlp.hpp"

namespace stealth {

struct IdsTrainConfig {
  std::size_t epochs = 200;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
  // Stop once training accuracy has been exactly 1.0 for this many consecutive epochs.
  std::size_t early_stop_patience = 5;
};

// Multi-class intrusion detector: 30 -> 128 -> 128 -> 128 -> 5, relu hidden, softmax head.
struct IdsModel {
  Mlp net;
  std::optional<ScalerParams> scaler;
};

struct IdsTrainResult {
  IdsModel model;
  std::vector<double> loss_curve;
  std::vector<double> accuracy_curve;
  double final_train_accuracy = 0.0;
};

Mlp make_ids_net(RngStream& rng);

IdsTrainResult train_ids(const Dataset& train, const IdsTrainConfig& config);

// Rows sum to 1. Throws ShapeError if the batch is not 30 wide.
Matrix predict_proba(const IdsModel& model, const Matrix& batch);
std::vector<int> predict_label(const IdsModel& model, const Matrix& batch);
// Lowest index wins ties.
std::vector<int> argmax_rows(const Matrix& m);

struct ConfusionMatrix {
  std::array<std::array<std::size_t, kClassCount>, kClassCount> counts{};  // [truth][predicted]
  std::size_t total = 0;
  double accuracy = 0.0;
};

ConfusionMatrix confusion_matrix(const IdsModel& model, const Dataset& data);
ConfusionMatrix confusion_from_labels(std::span<const int> truth, std::span<const int> predicted);
double accuracy(std::span<const int> truth, std::span<const int> predicted);

}  // namespace stealth
