#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stealth/data.hpp"
#include "stealth/ids.hpp"
#include "stealth/mlp.hpp"

namespace stealth {

struct GanConfig {
  double lambda_cls = 1.0;
  double lambda_st = 10.0;
  double lambda_gan = 0.1;
  double learning_rate = 1e-3;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  std::size_t noise_dim = 32;
  std::size_t hidden = 256;
  double out_scale = 0.1;
  // Benign target is (1 - a) * onehot(benign) + a / 5.
  double label_smoothing = 0.01;
  std::uint64_t seed = 1;
};

// delta = out_scale * tanh(net([noise | onehot(c)])).
struct Generator {
  Mlp net;
  std::size_t noise_dim = 0;
  double out_scale = 0.1;
};

// Unconditional: D(x) is the probability that x is benign.
struct Discriminator {
  Mlp net;
};

Generator make_generator(std::size_t noise_dim, double out_scale, std::size_t hidden, RngStream& rng);
Discriminator make_discriminator(std::size_t hidden, RngStream& rng);

Matrix sample_noise(std::size_t rows, std::size_t noise_dim, RngStream& rng);

// Generator input [noise | onehot(label)]. Benign labels are rejected.
Matrix generator_input(const Matrix& noise, std::span<const int> labels, std::size_t noise_dim);
Matrix generate_perturbation(const Generator& gen, const Matrix& noise, std::span<const int> labels);

// clip(x_att + delta, 0, 1)
Matrix apply_perturbation(const Matrix& x_att, const Matrix& delta);

std::vector<double> smoothed_benign_target(double alpha);

struct GeneratorLoss {
  double total = 0.0;
  double cls = 0.0;      // row-mean KL(f_IDS(X_adv) || y_ben)
  double stealth = 0.0;  // row-mean ||X_adv - X_ben||^2
  double gan = 0.0;      // -mean log D(X_adv)
  std::vector<double> grad;  // with respect to generator parameters
  Matrix delta;
};

// total = lambda_cls * cls + lambda_st * stealth + lambda_gan * gan, components reported unweighted.
GeneratorLoss generator_loss(const IdsModel& ids, const Discriminator& disc, const Generator& gen,
                             const Matrix& x_att, const Matrix& noise, std::span<const int> labels,
                             const Matrix& x_ben_pair, const GanConfig& config);

struct DiscriminatorLoss {
  double loss = 0.0;
  std::vector<double> grad;
};

// -1/2 (mean log D(x_ben) + mean log(1 - D(x_adv))) with clamped probabilities.
double discriminator_loss_from_probs(std::span<const double> p_ben, std::span<const double> p_adv);
DiscriminatorLoss discriminator_loss(const Discriminator& disc, const Matrix& x_ben, const Matrix& x_adv);

struct GanEpochStats {
  double d_loss = 0.0;
  double g_cls = 0.0;
  double g_stealth = 0.0;
  double g_gan = 0.0;
};

struct GanTrainResult {
  Generator generator;
  Discriminator discriminator;
  std::vector<GanEpochStats> curve;
};

// The IDS is a frozen oracle: queried for probabilities and input gradients only.
GanTrainResult train_cgan(const IdsModel& ids, const Dataset& train, const GanConfig& config);

}  // namespace stealth
