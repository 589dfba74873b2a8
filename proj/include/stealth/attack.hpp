#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "stealth/cgan.hpp"
#include "stealth/ids.hpp"
#include "stealth/matrix.hpp"

namespace stealth {

struct RefinementConfig {
  double epsilon = 0.04;  // per-feature clip bound, scaled units
  std::size_t n_ref = 35;
  std::uint64_t seed = 1;
};

struct OodConfig {
  double rho = 0.1;  // Gaussian noise scale, scaled units
  std::uint64_t seed = 1;
};

struct AdversarialBatch {
  Matrix origin;
  Matrix adversarial;
  // max |X_adv - X_att| over the whole batch after each step.
  std::vector<double> max_deviation;
  RefinementConfig config;
};

// Bounded iterative refinement. Each step draws fresh generator noise, adds G(z, c) to the
// running iterate and clips elementwise into [X_att - eps, X_att + eps] intersected with [0, 1].
AdversarialBatch refine(const Generator& gen, const Matrix& x_att, std::span<const int> labels,
                        const RefinementConfig& config);

// clip(X_att + N(0, rho^2 I), 0, 1)
Matrix gen_ood(const Matrix& x_att, const OodConfig& config);

// Fraction of the n_att attack-origin rows that the IDS labels benign.
double success_rate(const IdsModel& ids, const Matrix& x, std::size_t n_att);

// Empirical 1-Wasserstein distance between two samples via their quantile functions.
double wasserstein_1d(std::span<const double> a, std::span<const double> b);
// Mean over columns of the per-feature 1-D distance.
double wasserstein_features(const Matrix& a, const Matrix& b);

// |W(X_adv, X_att) - W(X_ood, X_att)|: the distance between two Dirac masses.
double stealth_objective(double w_adv_att, double w_ood_att);

struct StealthReport {
  double epsilon = 0.0;
  double rho = 0.0;
  std::size_t n_ref = 0;
  double w_adv_att = 0.0;
  double w_ood_att = 0.0;
  double objective = 0.0;
  double succ_adv = 0.0;
  double succ_ood = 0.0;
  bool feasible = false;
  // Distances to the benign reference set, when one was supplied.
  double w_adv_ben = 0.0;
  double w_ood_ben = 0.0;
};

struct SweepGrid {
  std::vector<double> epsilon;
  std::vector<double> rho;
  std::vector<std::size_t> n_ref;
  double eta_max = 0.8;

  static SweepGrid defaults();
};

struct SweepResult {
  std::vector<StealthReport> reports;  // epsilon-major, then rho, then n_ref
  // Index of the feasible point with the smallest objective (first wins ties).
  std::optional<std::size_t> selected;
  // Used when nothing is feasible: highest succ_adv, then smallest objective.
  std::size_t fallback = 0;
  std::size_t operating_point() const { return selected.value_or(fallback); }
};

// Evaluates every grid point. All points share one refinement noise stream and one OOD noise
// draw (common random numbers), so the point (eps, n_ref) reproduces
// refine(gen, x_att, labels, {eps, n_ref, refine_seed}) exactly, and (rho) reproduces
// gen_ood(x_att, {rho, ood_seed}).
SweepResult sweep(const Generator& gen, const IdsModel& ids, const Matrix& x_att,
                  std::span<const int> labels, const SweepGrid& grid, std::uint64_t refine_seed,
                  std::uint64_t ood_seed, const Matrix* x_ben = nullptr);

}  // namespace stealth
