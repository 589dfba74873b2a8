#pragma once

#include <span>
#include <vector>

#include "stealth/matrix.hpp"

namespace stealth {

// Probabilities are clamped into [kProbClamp, 1 - kProbClamp] before any log.
inline constexpr double kProbClamp = 1e-7;
// Smallest admissible entry of the reference distribution in kl_categorical.
inline constexpr double kKlFloor = 1e-7;

struct MatrixLoss {
  double loss = 0.0;
  Matrix grad;
};

struct VectorLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

// Mean cross entropy of softmax(logits) against integer labels.
// grad is with respect to the logits and already divided by the batch size.
MatrixLoss softmax_cross_entropy(const Matrix& logits, std::span<const int> labels);

// Mean binary cross entropy over clamped probabilities; targets must be 0 or 1.
// grad is d loss / d p evaluated at the clamped probability.
VectorLoss binary_cross_entropy(std::span<const double> probabilities,
                                std::span<const double> targets);

// Mean over rows of KL(p_row || q_row).
double kl_categorical(const Matrix& p, const Matrix& q);

// Row-mean KL(softmax(logits) || target) with gradient with respect to the logits.
// `target` is a single distribution applied to every row.
MatrixLoss kl_to_target_from_logits(const Matrix& logits, std::span<const double> target);

}  // namespace stealth
