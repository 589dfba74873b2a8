#include <cmath>
#include <numbers>

#include "doctest.h"
#include "test_support.hpp"

#include "stealth/cgan.hpp"
#include "stealth/error.hpp"
#include "stealth/losses.hpp"

using namespace stealth;
using stealth::testing::attack_rows;
using stealth::testing::max_fd_error;
using stealth::testing::random_matrix;
using stealth::testing::synthetic_fixture;
using stealth::testing::trained_ids;

namespace {

std::vector<int> attack_labels(std::size_t n) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = 1 + static_cast<int>(i % 4);
  return labels;
}

// Small stand-ins for the trained networks so gradients can be checked quickly.
IdsModel toy_ids(std::uint64_t seed) {
  RngStream rng(seed);
  const std::size_t w[] = {kFeatureCount, 8, kClassCount};
  return IdsModel{Mlp::build(w, Activation::tanh, Activation::softmax, rng), std::nullopt};
}

Discriminator toy_disc(std::uint64_t seed) {
  RngStream rng(seed);
  const std::size_t w[] = {kFeatureCount, 8, 1};
  return Discriminator{Mlp::build(w, Activation::tanh, Activation::sigmoid, rng)};
}

double mean_delta_norm(const Generator& gen, std::size_t n, std::uint64_t seed) {
  RngStream rng(seed);
  const auto labels = attack_labels(n);
  const Matrix d = generate_perturbation(gen, sample_noise(n, gen.noise_dim, rng), labels);
  double s = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    double sq = 0.0;
    for (double v : d.row(r)) sq += v * v;
    s += std::sqrt(sq);
  }
  return s / static_cast<double>(n);
}

}  // namespace

TEST_CASE("generator layout and output bound") {
  RngStream rng(1);
  Generator gen = make_generator(32, 0.1, 256, rng);
  CHECK(gen.net.input_width() == 37);
  CHECK(gen.net.output_width() == 30);
  CHECK(gen.net.specs().back().activation == Activation::tanh);
  const Discriminator disc = make_discriminator(256, rng);
  CHECK(disc.net.input_width() == 30);
  CHECK(disc.net.specs().back().activation == Activation::sigmoid);

  // Inflate the weights so tanh saturates.
  for (double& p : gen.net.parameters()) p *= 50.0;
  const auto labels = attack_labels(64);
  const Matrix d = generate_perturbation(gen, sample_noise(64, 32, rng), labels);
  double worst = 0.0;
  for (double v : d.data()) worst = std::max(worst, std::abs(v));
  CHECK(worst <= 0.1);
  CHECK(worst > 0.09);
}

TEST_CASE("zero generator gives zero perturbation; fixed seed repeats") {
  Generator zero{Mlp({{37, 8, Activation::relu}, {8, 30, Activation::tanh}}), 32, 0.1};
  RngStream rng(2);
  const auto labels = attack_labels(5);
  for (double v : generate_perturbation(zero, sample_noise(5, 32, rng), labels).data()) CHECK(v == 0.0);

  RngStream init(3);
  const Generator gen = make_generator(32, 0.1, 16, init);
  RngStream a(9), b(9);
  CHECK(generate_perturbation(gen, sample_noise(5, 32, a), labels) ==
        generate_perturbation(gen, sample_noise(5, 32, b), labels));
}

TEST_CASE("benign label is rejected") {
  RngStream rng(1);
  const Generator gen = make_generator(4, 0.1, 8, rng);
  const int labels[] = {1, 0};
  CHECK_THROWS_AS(generate_perturbation(gen, Matrix(2, 4), labels), ArgumentError);
}

TEST_CASE("smoothed benign target") {
  const auto t = smoothed_benign_target(0.01);
  CHECK(t[0] == doctest::Approx(0.992).epsilon(1e-15));
  for (std::size_t c = 1; c < 5; ++c) CHECK(t[c] == doctest::Approx(0.002).epsilon(1e-15));
  CHECK_THROWS_AS(smoothed_benign_target(0.0), ArgumentError);
  CHECK_THROWS_AS(smoothed_benign_target(0.5), ArgumentError);
}

TEST_CASE("generator loss components") {
  RngStream rng(4);
  const Generator gen = make_generator(6, 0.1, 8, rng);
  const IdsModel ids = toy_ids(5);
  const Discriminator disc = toy_disc(6);
  const Matrix x_att = random_matrix(6, 30, rng, 0.2, 0.8);
  const Matrix x_ben = random_matrix(6, 30, rng, 0.2, 0.8);
  const Matrix noise = sample_noise(6, 6, rng);
  const auto labels = attack_labels(6);

  SUBCASE("all weights zero gives zero loss") {
    GanConfig cfg;
    cfg.lambda_cls = cfg.lambda_st = cfg.lambda_gan = 0.0;
    const auto l = generator_loss(ids, disc, gen, x_att, noise, labels, x_ben, cfg);
    CHECK(l.total == 0.0);
    for (double g : l.grad) CHECK(g == 0.0);
  }
  SUBCASE("total is the weighted sum of the reported terms") {
    GanConfig cfg;
    const auto l = generator_loss(ids, disc, gen, x_att, noise, labels, x_ben, cfg);
    CHECK(std::abs(l.total - (cfg.lambda_cls * l.cls + cfg.lambda_st * l.stealth + cfg.lambda_gan * l.gan)) <= 1e-12);
    CHECK(l.cls > 0.0);
    CHECK(l.stealth > 0.0);
    CHECK(l.gan > 0.0);
  }
  SUBCASE("IDS already at the smoothed benign target gives zero KL") {
    Mlp head({{30, 5, Activation::softmax}});
    const auto t = smoothed_benign_target(0.01);
    for (std::size_t c = 0; c < 5; ++c) head.layer(0).bias[c] = std::log(t[c]);
    const IdsModel fixed{head, std::nullopt};
    const auto l = generator_loss(fixed, disc, gen, x_att, noise, labels, x_ben, GanConfig{});
    CHECK(std::abs(l.cls) <= 1e-12);
  }
  SUBCASE("adversarial rows equal to the benign pairing give zero stealth term") {
    const Generator zero{Mlp({{11, 8, Activation::relu}, {8, 30, Activation::tanh}}), 6, 0.1};
    const auto l = generator_loss(ids, disc, zero, x_att, noise, labels, x_att, GanConfig{});
    CHECK(l.stealth == 0.0);
  }
  SUBCASE("non-finite terms are named") {
    Matrix nan_att = x_att;
    nan_att(0, 0) = std::nan("");
    try {
      generator_loss(ids, disc, gen, nan_att, noise, labels, x_ben, GanConfig{});
      FAIL("expected NumericError");
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("'") != std::string::npos);
    }
  }
}

TEST_CASE("generator loss gradient matches finite differences") {
  RngStream rng(7);
  Generator gen = make_generator(4, 0.1, 8, rng);
  const IdsModel ids = toy_ids(8);
  const Discriminator disc = toy_disc(9);
  // Interior points so the [0, 1] clip is inactive.
  const Matrix x_att = random_matrix(5, 30, rng, 0.3, 0.7);
  const Matrix x_ben = random_matrix(5, 30, rng, 0.3, 0.7);
  const Matrix noise = sample_noise(5, 4, rng);
  const auto labels = attack_labels(5);
  GanConfig cfg;
  const auto l = generator_loss(ids, disc, gen, x_att, noise, labels, x_ben, cfg);
  auto f = [&] { return generator_loss(ids, disc, gen, x_att, noise, labels, x_ben, cfg).total; };
  CHECK(max_fd_error(gen.net.parameters(), l.grad, f) <= 1e-4);
}

TEST_CASE("discriminator loss") {
  const std::vector<double> half(3, 0.5);
  CHECK(discriminator_loss_from_probs(half, half) == doctest::Approx(std::numbers::ln2).epsilon(1e-14));

  const std::vector<double> one(3, 1.0), zero(3, 0.0);
  CHECK(discriminator_loss_from_probs(one, zero) <= -std::log(1.0 - kProbClamp) + 1e-18);

  const std::vector<double> ben = {0.9, 0.9}, adv = {0.1, 0.1};
  const double expected = 0.5 * (-std::log(0.9) - std::log(0.9));
  CHECK(discriminator_loss_from_probs(ben, adv) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(discriminator_loss_from_probs(ben, adv) == doctest::Approx(0.10536).epsilon(1e-4));

  const std::vector<double> empty;
  CHECK_THROWS_AS(discriminator_loss_from_probs(empty, adv), ArgumentError);
  Discriminator disc = toy_disc(1);
  CHECK_THROWS_AS(discriminator_loss(disc, Matrix(0, 30), Matrix(0, 30)), ArgumentError);

  SUBCASE("gradient matches finite differences") {
    RngStream rng(10);
    const Matrix xb = random_matrix(4, 30, rng, 0, 1), xa = random_matrix(4, 30, rng, 0, 1);
    const auto dl = discriminator_loss(disc, xb, xa);
    auto f = [&] { return discriminator_loss(disc, xb, xa).loss; };
    CHECK(max_fd_error(disc.net.parameters(), dl.grad, f) <= 1e-4);
  }
}

TEST_CASE("cGAN training on synthetic data") {
  const auto& fx = synthetic_fixture();
  const IdsModel& ids = trained_ids();
  const IdsModel ids_before = ids;
  GanConfig cfg;
  cfg.epochs = 8;
  cfg.seed = 3;
  const auto result = train_cgan(ids, fx.train, cfg);
  CHECK(result.curve.size() == 8);
  CHECK(ids.net == ids_before.net);

  SUBCASE("perturbation raises the benign probability on held-out attacks") {
    const Dataset att = attack_rows(fx.test);
    RngStream rng(99);
    const Matrix delta = generate_perturbation(result.generator, sample_noise(att.size(), cfg.noise_dim, rng), att.labels);
    const Matrix p0 = predict_proba(ids, att.features);
    const Matrix p1 = predict_proba(ids, apply_perturbation(att.features, delta));
    double before = 0.0, after = 0.0;
    for (std::size_t r = 0; r < att.size(); ++r) {
      before += p0(r, kBenignLabel);
      after += p1(r, kBenignLabel);
    }
    CHECK(after > before);
  }
  SUBCASE("fixed seed reproduces the run bitwise") {
    const auto again = train_cgan(ids, fx.train, cfg);
    CHECK(again.generator.net == result.generator.net);
    CHECK(again.discriminator.net == result.discriminator.net);
    CHECK(again.curve.back().g_cls == result.curve.back().g_cls);
  }
  SUBCASE("a much larger stealth weight shrinks the perturbation") {
    GanConfig heavy = cfg;
    heavy.lambda_st = 1e4;
    const auto h = train_cgan(ids, fx.train, heavy);
    const double base = mean_delta_norm(result.generator, 400, 5);
    const double shrunk = mean_delta_norm(h.generator, 400, 5);
    INFO("mean |delta|: lambda_st=10 -> " << base << ", lambda_st=1e4 -> " << shrunk);
    CHECK(shrunk < base);
  }
}

TEST_CASE("cGAN training rejects data without both populations") {
  const auto& fx = synthetic_fixture();
  const Dataset benign_only = fx.train.subset(fx.train.indices_of(kBenignLabel));
  CHECK_THROWS_AS(train_cgan(trained_ids(), benign_only, GanConfig{}), ArgumentError);
}
