#include "stealth/losses.hpp"

#include <algorithm>
#include <cmath>

#include "stealth/error.hpp"

namespace stealth {

namespace {

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

std::vector<double> log_softmax(std::span<const double> row) {
  const double mx = *std::max_element(row.begin(), row.end());
  double sum = 0.0;
  for (double v : row) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(row.size());
  for (std::size_t i = 0; i < row.size(); ++i) out[i] = row[i] - lse;
  return out;
}

void require_distribution(std::span<const double> row, const char* what) {
  double s = 0.0;
  for (double v : row) {
    if (v < 0.0 || !std::isfinite(v)) throw ArgumentError(std::string(what) + " has a negative or non-finite entry");
    s += v;
  }
  if (std::abs(s - 1.0) > 1e-6) throw ArgumentError(std::string(what) + " row does not sum to 1");
}

}  // namespace

MatrixLoss softmax_cross_entropy(const Matrix& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) throw ShapeError("softmax_cross_entropy: label count mismatch");
  if (logits.rows() == 0) throw ArgumentError("softmax_cross_entropy: empty batch");
  const auto n = static_cast<double>(logits.rows());
  MatrixLoss out{0.0, Matrix(logits.rows(), logits.cols())};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw ArgumentError("softmax_cross_entropy: label " + std::to_string(y) + " out of range");
    }
    const auto lp = log_softmax(logits.row(r));
    out.loss -= lp[static_cast<std::size_t>(y)];
    auto g = out.grad.row(r);
    for (std::size_t c = 0; c < lp.size(); ++c) {
      g[c] = (std::exp(lp[c]) - (static_cast<int>(c) == y ? 1.0 : 0.0)) / n;
    }
  }
  out.loss /= n;
  return out;
}

VectorLoss binary_cross_entropy(std::span<const double> probabilities,
                                std::span<const double> targets) {
  if (probabilities.size() != targets.size()) throw ShapeError("binary_cross_entropy: size mismatch");
  if (probabilities.empty()) throw ArgumentError("binary_cross_entropy: empty input");
  const auto n = static_cast<double>(probabilities.size());
  VectorLoss out{0.0, std::vector<double>(probabilities.size())};
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    const double t = targets[i];
    if (t != 0.0 && t != 1.0) throw ArgumentError("binary_cross_entropy: target must be 0 or 1");
    const double p = clamp_prob(probabilities[i]);
    out.loss -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    out.grad[i] = (-t / p + (1.0 - t) / (1.0 - p)) / n;
  }
  out.loss /= n;
  return out;
}

double kl_categorical(const Matrix& p, const Matrix& q) {
  require_same_shape(p, q, "kl_categorical");
  if (p.rows() == 0) throw ArgumentError("kl_categorical: empty input");
  double total = 0.0;
  for (std::size_t r = 0; r < p.rows(); ++r) {
    require_distribution(p.row(r), "kl_categorical p");
    require_distribution(q.row(r), "kl_categorical q");
    for (std::size_t c = 0; c < p.cols(); ++c) {
      const double qv = q(r, c);
      if (qv < kKlFloor) {
        throw ArgumentError("kl_categorical: q entry " + std::to_string(qv) +
                            " below floor; smooth the reference distribution");
      }
      const double pv = p(r, c);
      if (pv > 0.0) total += pv * std::log(pv / qv);
    }
  }
  return total / static_cast<double>(p.rows());
}

MatrixLoss kl_to_target_from_logits(const Matrix& logits, std::span<const double> target) {
  if (target.size() != logits.cols()) throw ShapeError("kl target width mismatch");
  for (double t : target) {
    if (t < kKlFloor) throw ArgumentError("kl target entry below floor");
  }
  const auto n = static_cast<double>(logits.rows());
  MatrixLoss out{0.0, Matrix(logits.rows(), logits.cols())};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto lp = log_softmax(logits.row(r));
    double kl = 0.0;
    std::vector<double> term(lp.size());
    for (std::size_t c = 0; c < lp.size(); ++c) {
      term[c] = lp[c] - std::log(target[c]);
      kl += std::exp(lp[c]) * term[c];
    }
    out.loss += kl;
    auto g = out.grad.row(r);
    // d KL / d logit_c = p_c (log(p_c / t_c) - KL)
    for (std::size_t c = 0; c < lp.size(); ++c) g[c] = std::exp(lp[c]) * (term[c] - kl) / n;
  }
  out.loss /= n;
  return out;
}

}  // namespace stealth
