#include "stealth/cgan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "stealth/adam.hpp"
#include "stealth/error.hpp"
#include "stealth/losses.hpp"

namespace stealth {

Generator make_generator(std::size_t noise_dim, double out_scale, std::size_t hidden, RngStream& rng) {
  if (noise_dim == 0 || !(out_scale > 0.0)) throw ArgumentError("generator needs noise_dim > 0 and out_scale > 0");
  const std::array<std::size_t, 4> widths = {noise_dim + kClassCount, hidden, hidden, kFeatureCount};
  return {Mlp::build(widths, Activation::relu, Activation::tanh, rng), noise_dim, out_scale};
}

Discriminator make_discriminator(std::size_t hidden, RngStream& rng) {
  const std::array<std::size_t, 4> widths = {kFeatureCount, hidden, hidden, 1};
  return {Mlp::build(widths, Activation::relu, Activation::sigmoid, rng)};
}

Matrix sample_noise(std::size_t rows, std::size_t noise_dim, RngStream& rng) {
  Matrix z(rows, noise_dim);
  rng.fill_normal(z.data());
  return z;
}

Matrix generator_input(const Matrix& noise, std::span<const int> labels, std::size_t noise_dim) {
  if (noise.cols() != noise_dim) throw ShapeError("generator noise width mismatch");
  if (labels.size() != noise.rows()) throw ShapeError("generator label count mismatch");
  for (int c : labels) {
    if (c == kBenignLabel) throw ArgumentError("perturbations are defined for attack samples only");
    if (c < 0 || c >= static_cast<int>(kClassCount)) throw ArgumentError("generator label out of range");
  }
  return hconcat(noise, one_hot(labels, kClassCount));
}

Matrix generate_perturbation(const Generator& gen, const Matrix& noise, std::span<const int> labels) {
  Matrix out = forward(gen.net, generator_input(noise, labels, gen.noise_dim));
  for (double& v : out.data()) v *= gen.out_scale;
  return out;
}

Matrix apply_perturbation(const Matrix& x_att, const Matrix& delta) {
  require_same_shape(x_att, delta, "apply_perturbation");
  Matrix out(x_att.rows(), x_att.cols());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = std::clamp(x_att.data()[i] + delta.data()[i], 0.0, 1.0);
  }
  return out;
}

std::vector<double> smoothed_benign_target(double alpha) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw ArgumentError("label smoothing must lie in (0, 0.5)");
  std::vector<double> t(kClassCount, alpha / static_cast<double>(kClassCount));
  t[kBenignLabel] += 1.0 - alpha;
  return t;
}

namespace {

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double clamped_log(double p) { return std::log(std::clamp(p, kProbClamp, 1.0 - kProbClamp)); }

void require_finite(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError(std::string("generator loss term '") + term + "' is non-finite");
}

}  // namespace

GeneratorLoss generator_loss(const IdsModel& ids, const Discriminator& disc, const Generator& gen,
                             const Matrix& x_att, const Matrix& noise, std::span<const int> labels,
                             const Matrix& x_ben_pair, const GanConfig& config) {
  require_same_shape(x_att, x_ben_pair, "generator_loss benign pairing");
  const std::size_t n = x_att.rows();
  if (n == 0) throw ArgumentError("generator_loss: empty batch");
  const auto dn = static_cast<double>(n);

  ForwardCache gcache;
  const Matrix raw = forward(gen.net, generator_input(noise, labels, gen.noise_dim), gcache);
  GeneratorLoss out;
  out.delta = raw;
  for (double& v : out.delta.data()) v *= gen.out_scale;
  require_same_shape(x_att, out.delta, "generator_loss perturbation");
  const Matrix x_adv = apply_perturbation(x_att, out.delta);

  Matrix g_adv(n, kFeatureCount);

  // Misclassification term through the frozen IDS.
  {
    ForwardCache cache;
    forward(ids.net, x_adv, cache);
    const auto kl = kl_to_target_from_logits(cache.pre.back(), smoothed_benign_target(config.label_smoothing));
    out.cls = kl.loss;
    if (config.lambda_cls != 0.0) {
      Matrix up = kl.grad;
      for (double& v : up.data()) v *= config.lambda_cls;
      const auto g = backward(ids.net, cache, up, GradientAt::logits, true);
      for (std::size_t i = 0; i < g_adv.size(); ++i) g_adv.data()[i] += g.input.data()[i];
    }
  }

  // Stealth term.
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < kFeatureCount; ++c) {
      const double d = x_adv(r, c) - x_ben_pair(r, c);
      out.stealth += d * d;
      g_adv(r, c) += config.lambda_st * 2.0 * d / dn;
    }
  }
  out.stealth /= dn;

  // Adversarial term against the discriminator.
  {
    ForwardCache cache;
    const Matrix p = forward(disc.net, x_adv, cache);
    Matrix up(n, 1);
    for (std::size_t r = 0; r < n; ++r) {
      out.gan -= clamped_log(p(r, 0));
      // d(-log sigmoid(a)) / da = sigmoid(a) - 1
      up(r, 0) = config.lambda_gan * (sigmoid(cache.pre.back()(r, 0)) - 1.0) / dn;
    }
    out.gan /= dn;
    if (config.lambda_gan != 0.0) {
      const auto g = backward(disc.net, cache, up, GradientAt::logits, true);
      for (std::size_t i = 0; i < g_adv.size(); ++i) g_adv.data()[i] += g.input.data()[i];
    }
  }

  require_finite(out.cls, "cls");
  require_finite(out.stealth, "stealth");
  require_finite(out.gan, "gan");
  out.total = config.lambda_cls * out.cls + config.lambda_st * out.stealth + config.lambda_gan * out.gan;

  // Through the [0, 1] clip and the output scale.
  Matrix g_raw(n, kFeatureCount);
  for (std::size_t i = 0; i < g_raw.size(); ++i) {
    const double v = x_att.data()[i] + out.delta.data()[i];
    g_raw.data()[i] = (v >= 0.0 && v <= 1.0) ? g_adv.data()[i] * gen.out_scale : 0.0;
  }
  out.grad = backward(gen.net, gcache, g_raw, GradientAt::output, false).params;
  return out;
}

double discriminator_loss_from_probs(std::span<const double> p_ben, std::span<const double> p_adv) {
  if (p_ben.empty() || p_adv.empty()) throw ArgumentError("discriminator_loss: empty batch");
  double ben = 0.0, adv = 0.0;
  for (double p : p_ben) ben += clamped_log(p);
  for (double p : p_adv) adv += std::log(1.0 - std::clamp(p, kProbClamp, 1.0 - kProbClamp));
  return -0.5 * (ben / static_cast<double>(p_ben.size()) + adv / static_cast<double>(p_adv.size()));
}

DiscriminatorLoss discriminator_loss(const Discriminator& disc, const Matrix& x_ben, const Matrix& x_adv) {
  if (x_ben.rows() == 0 || x_adv.rows() == 0) throw ArgumentError("discriminator_loss: empty batch");
  if (x_ben.rows() != x_adv.rows()) throw ShapeError("discriminator_loss: batch sizes differ");
  const std::size_t n = x_ben.rows();
  const auto dn = static_cast<double>(n);
  const Matrix both = [&] {
    Matrix m(2 * n, x_ben.cols());
    std::copy(x_ben.data().begin(), x_ben.data().end(), m.data().begin());
    std::copy(x_adv.data().begin(), x_adv.data().end(), m.data().begin() + static_cast<std::ptrdiff_t>(x_ben.size()));
    return m;
  }();
  ForwardCache cache;
  const Matrix p = forward(disc.net, both, cache);
  std::vector<double> pb(n), pa(n);
  Matrix up(2 * n, 1);
  for (std::size_t r = 0; r < n; ++r) {
    pb[r] = p(r, 0);
    pa[r] = p(n + r, 0);
    // Logit-space gradients of -1/2 mean log D(ben) and -1/2 mean log(1 - D(adv)).
    up(r, 0) = 0.5 * (sigmoid(cache.pre.back()(r, 0)) - 1.0) / dn;
    up(n + r, 0) = 0.5 * sigmoid(cache.pre.back()(n + r, 0)) / dn;
  }
  DiscriminatorLoss out;
  out.loss = discriminator_loss_from_probs(pb, pa);
  out.grad = backward(disc.net, cache, up, GradientAt::logits, false).params;
  return out;
}

GanTrainResult train_cgan(const IdsModel& ids, const Dataset& train, const GanConfig& config) {
  if (config.batch_size == 0 || !(config.learning_rate > 0.0)) throw ArgumentError("GAN needs batch size and learning rate > 0");
  if (config.lambda_cls < 0 || config.lambda_st < 0 || config.lambda_gan < 0) throw ArgumentError("GAN loss weights must be >= 0");
  const auto benign = train.indices_of(kBenignLabel);
  std::vector<std::size_t> attacks;
  for (std::size_t i = 0; i < train.size(); ++i) {
    if (train.labels[i] != kBenignLabel) attacks.push_back(i);
  }
  if (benign.empty() || attacks.empty()) throw ArgumentError("GAN training needs benign and attack samples");

  const RngStream root(config.seed);
  RngStream init_rng = root.derive("gan-init");
  RngStream shuffle_rng = root.derive("gan-shuffle");
  RngStream noise_rng = root.derive("gan-noise");
  RngStream pair_rng = root.derive("gan-benign-pairs");

  GanTrainResult result;
  result.generator = make_generator(config.noise_dim, config.out_scale, config.hidden, init_rng);
  result.discriminator = make_discriminator(config.hidden, init_rng);
  Generator& gen = result.generator;
  Discriminator& disc = result.discriminator;
  const AdamConfig adam_cfg{.learning_rate = config.learning_rate};
  AdamState gen_adam(gen.net.parameter_count(), adam_cfg);
  AdamState disc_adam(disc.net.parameter_count(), adam_cfg);

  auto benign_batch = [&](std::size_t n) {
    std::vector<std::size_t> rows(n);
    for (auto& r : rows) r = benign[pair_rng.below(benign.size())];
    return select_rows(train.features, rows);
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(attacks), shuffle_rng);
    GanEpochStats stats;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < attacks.size(); start += config.batch_size) {
      const std::size_t end = std::min(attacks.size(), start + config.batch_size);
      std::span<const std::size_t> rows(attacks.data() + start, end - start);
      const Matrix x_att = select_rows(train.features, rows);
      std::vector<int> labels;
      for (auto r : rows) labels.push_back(train.labels[r]);

      // Discriminator step on the current generator's samples.
      const Matrix noise_d = sample_noise(rows.size(), gen.noise_dim, noise_rng);
      const Matrix x_adv = apply_perturbation(x_att, generate_perturbation(gen, noise_d, labels));
      const auto dl = discriminator_loss(disc, benign_batch(rows.size()), x_adv);
      adam_step(disc_adam, disc.net.parameters(), dl.grad);

      // Generator step against the updated discriminator.
      const Matrix noise_g = sample_noise(rows.size(), gen.noise_dim, noise_rng);
      const auto gl = generator_loss(ids, disc, gen, x_att, noise_g, labels, benign_batch(rows.size()), config);
      adam_step(gen_adam, gen.net.parameters(), gl.grad);

      if (!(std::abs(dl.loss) <= 1e6) || !(std::abs(gl.total) <= 1e6)) {
        throw NumericError("cGAN training diverged at epoch " + std::to_string(epoch));
      }
      stats.d_loss += dl.loss;
      stats.g_cls += gl.cls;
      stats.g_stealth += gl.stealth;
      stats.g_gan += gl.gan;
      ++batches;
    }
    const auto nb = static_cast<double>(batches);
    stats.d_loss /= nb;
    stats.g_cls /= nb;
    stats.g_stealth /= nb;
    stats.g_gan /= nb;
    result.curve.push_back(stats);
  }
  return result;
}

}  // namespace stealth
