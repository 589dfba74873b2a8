#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "test_support.hpp"

#include "stealth/attack.hpp"
#include "stealth/error.hpp"

using namespace stealth;
using stealth::testing::attack_rows;
using stealth::testing::random_matrix;
using stealth::testing::synthetic_fixture;
using stealth::testing::trained_generator;
using stealth::testing::trained_ids;

namespace {

// Oracle: integrate |F_a(x) - F_b(x)| between consecutive support points.
double cdf_integral(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::vector<double> support(a);
  support.insert(support.end(), b.begin(), b.end());
  std::sort(support.begin(), support.end());
  double s = 0.0;
  for (std::size_t i = 0; i + 1 < support.size(); ++i) {
    const double x = support[i];
    const double fa = static_cast<double>(std::upper_bound(a.begin(), a.end(), x) - a.begin()) / static_cast<double>(a.size());
    const double fb = static_cast<double>(std::upper_bound(b.begin(), b.end(), x) - b.begin()) / static_cast<double>(b.size());
    s += std::abs(fa - fb) * (support[i + 1] - x);
  }
  return s;
}

std::vector<double> random_sample(RngStream& rng, std::size_t n) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

// Generator whose tanh output is pinned at +1 for every input.
Generator constant_generator(double out_scale) {
  Mlp net({{7, 30, Activation::tanh}});
  for (double& b : net.layer(0).bias) b = 40.0;
  return Generator{net, 2, out_scale};
}

std::vector<int> labels_of(std::size_t n) {
  std::vector<int> l(n);
  for (std::size_t i = 0; i < n; ++i) l[i] = 1 + static_cast<int>(i % 4);
  return l;
}

}  // namespace

TEST_CASE("refine: zero generator leaves the attack rows in place") {
  const Generator zero{Mlp({{7, 30, Activation::tanh}}), 2, 0.1};
  RngStream rng(1);
  const Matrix x = random_matrix(6, 30, rng, 0, 1);
  for (std::size_t n : {0, 1, 7}) {
    const auto b = refine(zero, x, labels_of(6), {0.05, n, 3});
    CHECK(b.adversarial == x);
    CHECK(b.max_deviation.size() == n);
  }
}

TEST_CASE("refine: N_ref = 0 returns X_att") {
  const auto& gen = trained_generator();
  const Dataset att = attack_rows(synthetic_fixture().test);
  const auto b = refine(gen, att.features, att.labels, {0.04, 0, 1});
  CHECK(b.adversarial == att.features);
}

TEST_CASE("refine: constant generator saturates at the clip bound after one step") {
  const Generator gen = constant_generator(1.0);
  RngStream rng(2);
  Matrix x = random_matrix(5, 30, rng, 0, 1);
  x(0, 0) = 0.98;
  const auto b = refine(gen, x, labels_of(5), {0.05, 4, 1});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(b.adversarial.data()[i] == std::min(x.data()[i] + 0.05, 1.0));
  const auto one = refine(gen, x, labels_of(5), {0.05, 1, 1});
  CHECK(one.adversarial == b.adversarial);
}

TEST_CASE("refine: deviation trace is non-decreasing and bounded") {
  const auto& gen = trained_generator();
  const Dataset att = attack_rows(synthetic_fixture().test);
  for (double eps : {0.01, 0.04, 0.1}) {
    const auto b = refine(gen, att.features, att.labels, {eps, 35, 11});
    for (std::size_t s = 0; s < b.max_deviation.size(); ++s) {
      CHECK(b.max_deviation[s] <= eps + 1e-9);
      if (s > 0) CHECK(b.max_deviation[s] >= b.max_deviation[s - 1]);
    }
    for (double v : b.adversarial.data()) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
  CHECK_THROWS_AS(refine(gen, att.features, att.labels, {0.0, 3, 1}), ArgumentError);
}

TEST_CASE("gen_ood") {
  RngStream rng(3);
  const Matrix x = random_matrix(40, 30, rng, 0.2, 0.8);
  const Matrix tiny = gen_ood(x, {1e-9, 4});
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(tiny.data()[i] - x.data()[i]) <= 1e-6);
  CHECK(gen_ood(x, {0.3, 4}) == gen_ood(x, {0.3, 4}));
  CHECK_THROWS_AS(gen_ood(x, {0.0, 4}), ArgumentError);

  // Interior rows only: clipping would shrink the spread.
  const Matrix mid(100, 30, 0.5);
  const double rho = 0.05;
  const Matrix noisy = gen_ood(mid, {rho, 5});
  double sq = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < noisy.size(); ++i) {
    if (noisy.data()[i] > 0.0 && noisy.data()[i] < 1.0) {
      sq += std::pow(noisy.data()[i] - 0.5, 2);
      ++n;
    }
  }
  REQUIRE(n >= 1000);
  CHECK(std::abs(std::sqrt(sq / static_cast<double>(n)) - rho) <= 0.1 * rho);
}

TEST_CASE("success rate") {
  const IdsModel& ids = trained_ids();
  const auto& fx = synthetic_fixture();
  const Dataset benign = fx.test.subset(fx.test.indices_of(kBenignLabel));
  const Dataset att = attack_rows(fx.test);
  const auto bl = predict_label(ids, benign.features);
  std::vector<std::size_t> clean_benign, clean_attack;
  for (std::size_t i = 0; i < bl.size(); ++i) {
    if (bl[i] == kBenignLabel) clean_benign.push_back(i);
  }
  const auto al = predict_label(ids, att.features);
  for (std::size_t i = 0; i < al.size(); ++i) {
    if (al[i] != kBenignLabel) clean_attack.push_back(i);
  }
  REQUIRE(clean_benign.size() >= 8);
  REQUIRE(clean_attack.size() >= 10);
  const Matrix all_benign = select_rows(benign.features, std::span(clean_benign).first(8));
  CHECK(success_rate(ids, all_benign, 8) == 1.0);
  const Matrix none = select_rows(att.features, std::span(clean_attack).first(10));
  CHECK(success_rate(ids, none, 10) == 0.0);

  Matrix mix(10, 30);
  for (std::size_t r = 0; r < 10; ++r) {
    const auto src = r < 8 ? benign.features.row(clean_benign[r]) : att.features.row(clean_attack[r]);
    std::copy(src.begin(), src.end(), mix.row(r).begin());
  }
  CHECK(success_rate(ids, mix, 10) == 0.8);
  CHECK_THROWS_AS(success_rate(ids, mix, 0), ArgumentError);
}

TEST_CASE("wasserstein_1d examples") {
  const std::vector<double> a = {0.3, 0.1, 0.2};
  CHECK(wasserstein_1d(a, a) == 0.0);
  CHECK(wasserstein_1d(std::vector<double>{0.0}, std::vector<double>{1.0}) == 1.0);
  CHECK(wasserstein_1d(std::vector<double>{1, 2, 3}, std::vector<double>{2, 3, 4}) == 1.0);
  const std::vector<double> empty;
  CHECK_THROWS_AS(wasserstein_1d(empty, a), ArgumentError);
}

TEST_CASE("wasserstein_1d matches the CDF-integral oracle") {
  RngStream rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const auto a = random_sample(rng, 1 + rng.below(32));
    const auto b = random_sample(rng, 1 + rng.below(32));
    worst = std::max(worst, std::abs(wasserstein_1d(a, b) - cdf_integral(a, b)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("wasserstein_1d is a metric") {
  RngStream rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_sample(rng, 1 + rng.below(20));
    const auto b = random_sample(rng, 1 + rng.below(20));
    const auto c = random_sample(rng, 1 + rng.below(20));
    CHECK(wasserstein_1d(a, b) == wasserstein_1d(b, a));
    CHECK(wasserstein_1d(a, c) <= wasserstein_1d(a, b) + wasserstein_1d(b, c) + 1e-12);
    CHECK(wasserstein_1d(a, b) >= 0.0);
  }
}

TEST_CASE("wasserstein_features") {
  RngStream rng(23);
  const Matrix a = random_matrix(10, 3, rng);
  CHECK(wasserstein_features(a, a) == 0.0);
  Matrix shifted = a;
  for (double& v : shifted.data()) v += 0.1;
  CHECK(wasserstein_features(a, shifted) == doctest::Approx(0.1).epsilon(1e-12));

  const Matrix b = random_matrix(7, 3, rng);
  double oracle = 0.0;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> ca, cb;
    for (std::size_t r = 0; r < a.rows(); ++r) ca.push_back(a(r, c));
    for (std::size_t r = 0; r < b.rows(); ++r) cb.push_back(b(r, c));
    oracle += cdf_integral(ca, cb) / 3.0;
  }
  CHECK(std::abs(wasserstein_features(a, b) - oracle) <= 1e-12);
  CHECK_THROWS_AS(wasserstein_features(a, Matrix(4, 2)), ShapeError);
}

TEST_CASE("stealth objective") {
  CHECK(stealth_objective(0.2, 0.2) == 0.0);
  CHECK(stealth_objective(0.3, 0.1) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK(stealth_objective(0.1, 0.3) == stealth_objective(0.3, 0.1));
}

TEST_CASE("W(X_adv, X_att) is non-decreasing in epsilon for a saturating generator") {
  const Generator gen = constant_generator(1.0);
  RngStream rng(4);
  const Matrix x = random_matrix(30, 30, rng, 0, 1);
  double prev = 0.0;
  for (int k = 1; k <= 10; ++k) {
    const auto b = refine(gen, x, labels_of(30), {0.01 * k, 5, 1});
    const double w = wasserstein_features(b.adversarial, x);
    CHECK(w >= prev);
    prev = w;
  }
}

TEST_CASE("sweep") {
  const auto& gen = trained_generator();
  const IdsModel& ids = trained_ids();
  const Dataset att = attack_rows(synthetic_fixture().test);
  SweepGrid grid;
  grid.epsilon = {0.02, 0.1};
  grid.rho = {0.1, 0.5};
  grid.n_ref = {10, 3, 35};

  const auto res = sweep(gen, ids, att.features, att.labels, grid, 5, 6);
  REQUIRE(res.reports.size() == 12);

  SUBCASE("grid points reproduce refine and gen_ood with the same seeds") {
    for (const auto& r : res.reports) {
      const auto b = refine(gen, att.features, att.labels, {r.epsilon, r.n_ref, 5});
      CHECK(r.w_adv_att == wasserstein_features(b.adversarial, att.features));
      CHECK(r.succ_adv == success_rate(ids, b.adversarial, att.size()));
      const Matrix ood = gen_ood(att.features, {r.rho, 6});
      CHECK(r.w_ood_att == wasserstein_features(ood, att.features));
      CHECK(r.succ_ood == success_rate(ids, ood, att.size()));
      CHECK(r.objective == stealth_objective(r.w_adv_att, r.w_ood_att));
    }
  }
  SUBCASE("selection is the feasible argmin") {
    if (res.selected) {
      const auto& s = res.reports[*res.selected];
      CHECK(s.feasible);
      for (const auto& r : res.reports) {
        if (r.feasible) CHECK(s.objective <= r.objective);
      }
    } else {
      for (const auto& r : res.reports) CHECK_FALSE(r.feasible);
    }
  }
  SUBCASE("eta_max = 0 makes selection the plain argmin") {
    grid.eta_max = 0.0;
    const auto r0 = sweep(gen, ids, att.features, att.labels, grid, 5, 6);
    REQUIRE(r0.selected);
    const auto best = std::min_element(r0.reports.begin(), r0.reports.end(),
                                       [](const auto& a, const auto& b) { return a.objective < b.objective; });
    CHECK(*r0.selected == static_cast<std::size_t>(best - r0.reports.begin()));
  }
  SUBCASE("single-point grid: selected iff feasible") {
    for (double eta : {0.0, 1.01}) {
      SweepGrid one{{0.05}, {0.3}, {10}, eta};
      const auto r1 = sweep(gen, ids, att.features, att.labels, one, 5, 6);
      REQUIRE(r1.reports.size() == 1);
      CHECK(r1.selected.has_value() == r1.reports[0].feasible);
      CHECK(r1.operating_point() == 0);
    }
  }
  SUBCASE("infeasible grid falls back to the highest success rate") {
    grid.eta_max = 1.01;
    const auto r2 = sweep(gen, ids, att.features, att.labels, grid, 5, 6);
    CHECK_FALSE(r2.selected);
    for (const auto& r : r2.reports) CHECK(r.succ_adv <= r2.reports[r2.fallback].succ_adv);
  }
  SUBCASE("benign distances are reported when a reference set is given") {
    const auto& fx = synthetic_fixture();
    const Dataset ben = fx.train.subset(fx.train.indices_of(kBenignLabel));
    const auto rb = sweep(gen, ids, att.features, att.labels, grid, 5, 6, &ben.features);
    for (const auto& r : rb.reports) {
      CHECK(r.w_adv_ben > 0.0);
      CHECK(r.w_ood_ben > 0.0);
    }
  }
  CHECK_THROWS_AS(sweep(gen, ids, att.features, att.labels, SweepGrid{{}, {0.1}, {1}, 0.8}, 5, 6), ArgumentError);
}

TEST_CASE("default grid") {
  const auto g = SweepGrid::defaults();
  CHECK(g.epsilon.size() == 10);
  CHECK(g.epsilon.front() == doctest::Approx(0.01));
  CHECK(g.epsilon.back() == doctest::Approx(0.1));
  CHECK(g.rho.size() == 10);
  CHECK(g.rho.back() == doctest::Approx(1.0));
  CHECK(g.n_ref.front() == 5);
  CHECK(g.n_ref.back() == 60);
  CHECK(g.n_ref.size() == 12);
  CHECK(g.eta_max == 0.8);
}
