#include "stealth/attack.hpp"

#include <algorithm>
#include <cmath>

#include "stealth/error.hpp"

namespace stealth {

namespace {

// One refinement step applied in place. Returns the batch max deviation afterwards.
double refine_step(const Matrix& x_att, const Matrix& delta, double epsilon, Matrix& iterate) {
  double max_dev = 0.0;
  for (std::size_t i = 0; i < iterate.size(); ++i) {
    const double origin = x_att.data()[i];
    const double lo = std::max(0.0, origin - epsilon);
    const double hi = std::min(1.0, origin + epsilon);
    const double v = std::clamp(iterate.data()[i] + delta.data()[i], lo, hi);
    iterate.data()[i] = v;
    max_dev = std::max(max_dev, std::abs(v - origin));
  }
  return max_dev;
}

void check_attack_input(const Matrix& x_att, std::span<const int> labels) {
  if (x_att.cols() != kFeatureCount) throw ShapeError("attack input must be 30 features wide");
  if (labels.size() != x_att.rows()) throw ShapeError("attack label count mismatch");
}

}  // namespace

AdversarialBatch refine(const Generator& gen, const Matrix& x_att, std::span<const int> labels,
                        const RefinementConfig& config) {
  check_attack_input(x_att, labels);
  if (!(config.epsilon > 0.0)) throw ArgumentError("refinement epsilon must be > 0");
  AdversarialBatch batch{x_att, x_att, {}, config};
  RngStream rng(config.seed);
  for (std::size_t step = 0; step < config.n_ref; ++step) {
    const Matrix noise = sample_noise(x_att.rows(), gen.noise_dim, rng);
    const Matrix delta = generate_perturbation(gen, noise, labels);
    batch.max_deviation.push_back(refine_step(x_att, delta, config.epsilon, batch.adversarial));
  }
  return batch;
}

Matrix gen_ood(const Matrix& x_att, const OodConfig& config) {
  if (!(config.rho > 0.0)) throw ArgumentError("OOD noise scale must be > 0");
  RngStream rng(config.seed);
  Matrix out(x_att.rows(), x_att.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = std::clamp(x_att.data()[i] + config.rho * rng.normal(), 0.0, 1.0);
  }
  return out;
}

double success_rate(const IdsModel& ids, const Matrix& x, std::size_t n_att) {
  if (n_att == 0) throw ArgumentError("success_rate: no attack-origin rows");
  const auto labels = predict_label(ids, x);
  const auto benign = std::count(labels.begin(), labels.end(), kBenignLabel);
  return static_cast<double>(benign) / static_cast<double>(n_att);
}

double wasserstein_1d(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw ArgumentError("wasserstein_1d: empty sample");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const std::size_t n = sa.size(), m = sb.size();
  if (n == m) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += std::abs(sa[i] - sb[i]);
    return s / static_cast<double>(n);
  }
  // Integrate |Qa(t) - Qb(t)| over the merged breakpoints {i/n} U {j/m}. Working in units of
  // 1/(n*m) keeps the breakpoints exact integers.
  const std::size_t total = n * m;
  std::size_t i = 0, j = 0, t = 0;
  double s = 0.0;
  while (t < total) {
    const std::size_t next_a = (i + 1) * m;
    const std::size_t next_b = (j + 1) * n;
    const std::size_t next = std::min(next_a, next_b);
    s += static_cast<double>(next - t) * std::abs(sa[i] - sb[j]);
    t = next;
    if (next == next_a) ++i;
    if (next == next_b) ++j;
  }
  return s / static_cast<double>(total);
}

double wasserstein_features(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("wasserstein_features: column counts " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.cols()));
  }
  if (a.cols() == 0) throw ArgumentError("wasserstein_features: no columns");
  std::vector<double> ca(a.rows()), cb(b.rows());
  double s = 0.0;
  for (std::size_t c = 0; c < a.cols(); ++c) {
    for (std::size_t r = 0; r < a.rows(); ++r) ca[r] = a(r, c);
    for (std::size_t r = 0; r < b.rows(); ++r) cb[r] = b(r, c);
    s += wasserstein_1d(ca, cb);
  }
  return s / static_cast<double>(a.cols());
}

double stealth_objective(double w_adv_att, double w_ood_att) { return std::abs(w_adv_att - w_ood_att); }

SweepGrid SweepGrid::defaults() {
  SweepGrid g;
  for (int i = 1; i <= 10; ++i) g.epsilon.push_back(i / 100.0);
  for (int i = 1; i <= 10; ++i) g.rho.push_back(i / 10.0);
  for (std::size_t n = 5; n <= 60; n += 5) g.n_ref.push_back(n);
  return g;
}

SweepResult sweep(const Generator& gen, const IdsModel& ids, const Matrix& x_att,
                  std::span<const int> labels, const SweepGrid& grid, std::uint64_t refine_seed,
                  std::uint64_t ood_seed, const Matrix* x_ben) {
  check_attack_input(x_att, labels);
  if (grid.epsilon.empty() || grid.rho.empty() || grid.n_ref.empty()) {
    throw ArgumentError("sweep grids must be non-empty");
  }
  for (double e : grid.epsilon) {
    if (!(e > 0.0)) throw ArgumentError("sweep epsilon values must be > 0");
  }
  for (double r : grid.rho) {
    if (!(r > 0.0)) throw ArgumentError("sweep rho values must be > 0");
  }
  const std::size_t n_att = x_att.rows();
  const std::size_t max_steps = *std::max_element(grid.n_ref.begin(), grid.n_ref.end());

  // Perturbation stream shared by every (eps, n_ref); identical to refine()'s draws.
  std::vector<Matrix> deltas;
  {
    RngStream rng(refine_seed);
    for (std::size_t s = 0; s < max_steps; ++s) {
      deltas.push_back(generate_perturbation(gen, sample_noise(n_att, gen.noise_dim, rng), labels));
    }
  }

  struct OodPoint {
    double w_att, w_ben, succ;
  };
  std::vector<OodPoint> ood;
  for (double rho : grid.rho) {
    const Matrix x_ood = gen_ood(x_att, {rho, ood_seed});
    ood.push_back({wasserstein_features(x_ood, x_att), x_ben ? wasserstein_features(x_ood, *x_ben) : 0.0,
                   success_rate(ids, x_ood, n_att)});
  }

  SweepResult result;
  for (double eps : grid.epsilon) {
    // Adversarial metrics for every requested n_ref at this epsilon.
    struct AdvPoint {
      double w_att, w_ben, succ;
    };
    std::vector<AdvPoint> adv(grid.n_ref.size());
    Matrix iterate = x_att;
    std::size_t done = 0;
    std::vector<std::size_t> order(grid.n_ref.size());
    for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return grid.n_ref[a] < grid.n_ref[b]; });
    for (std::size_t k : order) {
      while (done < grid.n_ref[k]) refine_step(x_att, deltas[done++], eps, iterate);
      adv[k] = {wasserstein_features(iterate, x_att), x_ben ? wasserstein_features(iterate, *x_ben) : 0.0,
                success_rate(ids, iterate, n_att)};
    }
    for (std::size_t ri = 0; ri < grid.rho.size(); ++ri) {
      for (std::size_t k = 0; k < grid.n_ref.size(); ++k) {
        StealthReport rep;
        rep.epsilon = eps;
        rep.rho = grid.rho[ri];
        rep.n_ref = grid.n_ref[k];
        rep.w_adv_att = adv[k].w_att;
        rep.w_ood_att = ood[ri].w_att;
        rep.objective = stealth_objective(rep.w_adv_att, rep.w_ood_att);
        rep.succ_adv = adv[k].succ;
        rep.succ_ood = ood[ri].succ;
        rep.feasible = rep.succ_adv >= grid.eta_max;
        rep.w_adv_ben = adv[k].w_ben;
        rep.w_ood_ben = ood[ri].w_ben;
        result.reports.push_back(rep);
      }
    }
  }

  for (std::size_t i = 0; i < result.reports.size(); ++i) {
    const auto& r = result.reports[i];
    if (r.feasible && (!result.selected || r.objective < result.reports[*result.selected].objective)) {
      result.selected = i;
    }
    const auto& f = result.reports[result.fallback];
    if (r.succ_adv > f.succ_adv || (r.succ_adv == f.succ_adv && r.objective < f.objective)) {
      result.fallback = i;
    }
  }
  return result;
}

}  // namespace stealth
