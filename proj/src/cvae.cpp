#include "stealth/cvae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "stealth/adam.hpp"
#include "stealth/error.hpp"
#include "stealth/losses.hpp"

namespace stealth {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Matrix encoder_input(const CvaeModel& model, const Matrix& x, const Matrix& c) {
  if (x.cols() != model.input_dim) {
    throw ShapeError("CVAE input has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(model.input_dim));
  }
  if (!model.conditional) return x;
  if (c.rows() != x.rows() || c.cols() != kClassCount) throw ShapeError("CVAE label matrix shape mismatch");
  return hconcat(x, c);
}

Matrix decoder_input(const CvaeModel& model, const Matrix& z, const Matrix& c) {
  if (z.cols() != model.latent_dim) throw ShapeError("CVAE latent width mismatch");
  if (!model.conditional) return z;
  if (c.rows() != z.rows() || c.cols() != kClassCount) throw ShapeError("CVAE label matrix shape mismatch");
  return hconcat(z, c);
}

double clamp_prob(double p) { return std::clamp(p, kProbClamp, 1.0 - kProbClamp); }

Encoding split_encoder_output(const Matrix& raw, std::size_t latent) {
  Encoding e{column_block(raw, 0, latent), column_block(raw, latent, latent)};
  for (double& v : e.logvar.data()) v = std::clamp(v, kLogVarMin, kLogVarMax);
  return e;
}

double bernoulli_log_likelihood(std::span<const double> x, std::span<const double> x_hat) {
  double s = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double p = clamp_prob(x_hat[j]);
    s += x[j] * std::log(p) + (1.0 - x[j]) * std::log(1.0 - p);
  }
  return s;
}

}  // namespace

CvaeModel make_cvae(const CvaeArchitecture& arch, RngStream& rng) {
  if (arch.latent_dim == 0 || arch.hidden == 0 || arch.input_dim == 0) throw ArgumentError("CVAE dimensions must be positive");
  const std::size_t label_width = arch.conditional ? kClassCount : 0;
  const std::array<std::size_t, 4> enc = {arch.input_dim + label_width, arch.hidden, arch.hidden, 2 * arch.latent_dim};
  const std::array<std::size_t, 4> dec = {arch.latent_dim + label_width, arch.hidden, arch.hidden, arch.input_dim};
  CvaeModel m;
  m.encoder = Mlp::build(enc, Activation::relu, Activation::linear, rng);
  m.decoder = Mlp::build(dec, Activation::relu, Activation::sigmoid, rng);
  m.input_dim = arch.input_dim;
  m.latent_dim = arch.latent_dim;
  m.conditional = arch.conditional;
  return m;
}

Encoding encode(const CvaeModel& model, const Matrix& x, const Matrix& c) {
  return split_encoder_output(forward(model.encoder, encoder_input(model, x, c)), model.latent_dim);
}

Matrix reparameterize(const Encoding& enc, const Matrix& u) {
  require_same_shape(enc.mu, u, "reparameterize noise");
  Matrix z(enc.mu.rows(), enc.mu.cols());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z.data()[i] = enc.mu.data()[i] + std::exp(0.5 * enc.logvar.data()[i]) * u.data()[i];
  }
  return z;
}

Matrix reparameterize(const Encoding& enc, RngStream& rng) {
  Matrix u(enc.mu.rows(), enc.mu.cols());
  rng.fill_normal(u.data());
  return reparameterize(enc, u);
}

Matrix decode(const CvaeModel& model, const Matrix& z, const Matrix& c) {
  Matrix out = forward(model.decoder, decoder_input(model, z, c));
  for (double& v : out.data()) v = clamp_prob(v);
  return out;
}

ElboLoss elbo_loss(const CvaeModel& model, const Matrix& x, const Matrix& c, const Matrix& u,
                   double kl_weight, bool want_decoder_grad) {
  const std::size_t n = x.rows();
  if (n == 0) throw ArgumentError("elbo_loss: empty batch");
  const auto dn = static_cast<double>(n);
  const std::size_t L = model.latent_dim;

  ForwardCache enc_cache;
  const Matrix raw = forward(model.encoder, encoder_input(model, x, c), enc_cache);
  const Encoding enc = split_encoder_output(raw, L);
  const Matrix z = reparameterize(enc, u);

  ForwardCache dec_cache;
  const Matrix x_hat = forward(model.decoder, decoder_input(model, z, c), dec_cache);

  ElboLoss out;
  Matrix g_logits(n, model.input_dim);
  for (std::size_t r = 0; r < n; ++r) {
    out.reconstruction -= bernoulli_log_likelihood(x.row(r), x_hat.row(r));
    for (std::size_t j = 0; j < model.input_dim; ++j) {
      // d/d logit of -[x log s + (1 - x) log(1 - s)] = s - x
      g_logits(r, j) = (sigmoid(dec_cache.pre.back()(r, j)) - x(r, j)) / dn;
    }
    for (std::size_t k = 0; k < L; ++k) {
      const double mu = enc.mu(r, k), lv = enc.logvar(r, k);
      out.kl += 0.5 * (mu * mu + std::exp(lv) - 1.0 - lv);
    }
  }
  out.reconstruction /= dn;
  out.kl /= dn;
  out.total = out.reconstruction + kl_weight * out.kl;
  if (!std::isfinite(out.reconstruction)) throw NumericError("ELBO reconstruction term is non-finite");
  if (!std::isfinite(out.kl)) throw NumericError("ELBO KL term is non-finite");

  auto dec_grads = backward(model.decoder, dec_cache, g_logits, GradientAt::logits, true);
  if (want_decoder_grad) out.decoder_grad = std::move(dec_grads.params);

  Matrix g_raw(n, 2 * L);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t k = 0; k < L; ++k) {
      const double dz = dec_grads.input(r, k);
      const double mu = enc.mu(r, k), lv = enc.logvar(r, k);
      const double sigma = std::exp(0.5 * lv);
      g_raw(r, k) = dz + kl_weight * mu / dn;
      const double raw_lv = raw(r, L + k);
      const bool clamped = raw_lv < kLogVarMin || raw_lv > kLogVarMax;
      g_raw(r, L + k) = clamped ? 0.0 : dz * u(r, k) * 0.5 * sigma + kl_weight * 0.5 * (std::exp(lv) - 1.0) / dn;
    }
  }
  out.encoder_grad = backward(model.encoder, enc_cache, g_raw, GradientAt::output, false).params;
  return out;
}

ElboLoss elbo_loss(const CvaeModel& model, const Matrix& x, const Matrix& c, RngStream& rng, double kl_weight) {
  Matrix u(x.rows(), model.latent_dim);
  rng.fill_normal(u.data());
  return elbo_loss(model, x, c, u, kl_weight, true);
}

CvaeTrainResult train_cvae(const Dataset& train, const CvaeTrainConfig& config) {
  if (config.batch_size == 0 || !(config.learning_rate > 0.0) || config.kl_weight < 0.0) {
    throw ArgumentError("CVAE training needs positive batch size and learning rate");
  }
  if (train.size() == 0) throw ArgumentError("CVAE training set is empty");
  const RngStream root(config.seed);
  RngStream init_rng = root.derive("cvae-init");
  RngStream shuffle_rng = root.derive("cvae-shuffle");
  RngStream noise_rng = root.derive("cvae-noise");

  CvaeTrainResult result;
  CvaeArchitecture arch = config.arch;
  arch.input_dim = train.features.cols();
  result.model = make_cvae(arch, init_rng);
  CvaeModel& model = result.model;
  const AdamConfig adam_cfg{.learning_rate = config.learning_rate};
  AdamState enc_adam(model.encoder.parameter_count(), adam_cfg);
  AdamState dec_adam(model.decoder.parameter_count(), adam_cfg);

  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle(std::span<std::size_t>(order), shuffle_rng);
    CvaeEpochStats stats;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> rows(order.data() + start, end - start);
      const Matrix x = select_rows(train.features, rows);
      std::vector<int> y;
      for (auto r : rows) y.push_back(train.labels[r]);
      const Matrix c = one_hot(y, kClassCount);
      ElboLoss loss;
      try {
        loss = elbo_loss(model, x, c, noise_rng, config.kl_weight);
      } catch (const NumericError& e) {
        throw NumericError("CVAE training diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      if (!(std::abs(loss.total) <= 1e6)) {
        throw NumericError("CVAE training diverged at epoch " + std::to_string(epoch));
      }
      adam_step(enc_adam, model.encoder.parameters(), loss.encoder_grad);
      adam_step(dec_adam, model.decoder.parameters(), loss.decoder_grad);
      const auto w = static_cast<double>(rows.size());
      stats.loss += loss.total * w;
      stats.reconstruction += loss.reconstruction * w;
      stats.kl += loss.kl * w;
    }
    const auto dn = static_cast<double>(train.size());
    stats.loss /= dn;
    stats.reconstruction /= dn;
    stats.kl /= dn;
    result.curve.push_back(stats);
  }
  return result;
}

ImportanceTerms importance_weights(const CvaeModel& model, const Matrix& x, const Matrix& c, const Matrix& z) {
  if (x.rows() != 1) throw ShapeError("importance_weights expects a single data point");
  if (z.cols() != model.latent_dim || z.rows() == 0) throw ShapeError("importance_weights: bad latent samples");
  const std::size_t k = z.rows();
  const Encoding enc = encode(model, x, c);

  Matrix x_rep(k, x.cols()), c_rep(k, model.conditional ? c.cols() : 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::copy(x.row(0).begin(), x.row(0).end(), x_rep.row(i).begin());
    if (model.conditional) std::copy(c.row(0).begin(), c.row(0).end(), c_rep.row(i).begin());
  }
  const Matrix x_hat = decode(model, z, c_rep);

  ImportanceTerms t;
  for (std::size_t i = 0; i < k; ++i) {
    const double ll = bernoulli_log_likelihood(x.row(0), x_hat.row(i));
    double lp = 0.0, lq = 0.0;
    for (std::size_t j = 0; j < model.latent_dim; ++j) {
      const double zj = z(i, j);
      const double mu = enc.mu(0, j), lv = enc.logvar(0, j);
      lp -= 0.5 * zj * zj + kHalfLog2Pi;
      lq -= (zj - mu) * (zj - mu) / (2.0 * std::exp(lv)) + kHalfLog2Pi + 0.5 * lv;
    }
    if (!std::isfinite(ll)) throw NumericError("importance weight: log-likelihood term is non-finite");
    if (!std::isfinite(lp)) throw NumericError("importance weight: prior term is non-finite");
    if (!std::isfinite(lq)) throw NumericError("importance weight: posterior term is non-finite");
    t.log_likelihood.push_back(ll);
    t.log_prior.push_back(lp);
    t.log_posterior.push_back(lq);
    t.weights.push_back(ll + lp - lq);
  }
  return t;
}

double log_mean_exp(std::span<const double> w) {
  if (w.empty()) throw ArgumentError("log_mean_exp: no weights");
  const double mx = *std::max_element(w.begin(), w.end());
  if (!std::isfinite(mx)) throw NumericError("log_mean_exp: non-finite weight");
  double s = 0.0;
  for (double v : w) s += std::exp(v - mx);
  return std::log(s / static_cast<double>(w.size())) + mx;
}

double nll_from_weights(std::span<const double> w) { return -log_mean_exp(w); }

IwaeEstimate iwae_bound(const CvaeModel& model, const Matrix& x, const Matrix& c, std::size_t k, RngStream& rng) {
  if (k == 0) throw ArgumentError("iwae_bound: k must be >= 1");
  IwaeEstimate est;
  est.k = k;
  const Encoding enc = encode(model, x, c);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Matrix z(k, model.latent_dim);
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < model.latent_dim; ++j) {
        z(i, j) = enc.mu(r, j) + std::exp(0.5 * enc.logvar(r, j)) * rng.normal();
      }
    }
    const std::size_t row[] = {r};
    const Matrix xr = select_rows(x, row);
    const Matrix cr = model.conditional ? select_rows(c, row) : Matrix(1, 0);
    const auto terms = importance_weights(model, xr, cr, z);
    const double bound = log_mean_exp(terms.weights);
    est.bound.push_back(bound);
    est.nll.push_back(-bound);
  }
  return est;
}

double nll(const CvaeModel& model, const Matrix& x_row, const Matrix& c_row, std::size_t k, RngStream& rng) {
  if (x_row.rows() != 1) throw ShapeError("nll expects a single row");
  return iwae_bound(model, x_row, c_row, k, rng).nll.front();
}

}  // namespace stealth
