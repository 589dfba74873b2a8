#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stealth/data.hpp"
#include "stealth/mlp.hpp"

namespace stealth {

inline constexpr double kLogVarMin = -10.0;
inline constexpr double kLogVarMax = 10.0;

struct CvaeArchitecture {
  std::size_t input_dim = kFeatureCount;
  std::size_t latent_dim = 200;
  std::size_t hidden = 256;
  bool conditional = true;
};

// Encoder: [x | c] -> hidden -> hidden -> [mu | logvar]; decoder: [z | c] -> hidden -> hidden -> x_hat
// (sigmoid). With conditional = false the label input is absent and c is ignored.
struct CvaeModel {
  Mlp encoder;
  Mlp decoder;
  std::size_t input_dim = kFeatureCount;
  std::size_t latent_dim = 200;
  bool conditional = true;
};

CvaeModel make_cvae(const CvaeArchitecture& arch, RngStream& rng);

struct Encoding {
  Matrix mu;
  Matrix logvar;  // clamped into [kLogVarMin, kLogVarMax]
};

// c is a one-hot matrix (rows x 5); ignored for unconditional models.
Encoding encode(const CvaeModel& model, const Matrix& x, const Matrix& c);
// z = mu + exp(logvar / 2) * u, u ~ N(0, I).
Matrix reparameterize(const Encoding& enc, RngStream& rng);
Matrix reparameterize(const Encoding& enc, const Matrix& u);
// Output clamped into [kProbClamp, 1 - kProbClamp].
Matrix decode(const CvaeModel& model, const Matrix& z, const Matrix& c);

struct ElboLoss {
  double total = 0.0;           // reconstruction + kl_weight * kl, per-sample mean
  double reconstruction = 0.0;  // -sum_j [x log x_hat + (1 - x) log(1 - x_hat)], per-sample mean
  double kl = 0.0;              // KL(q || N(0, I)) in closed form, per-sample mean
  std::vector<double> encoder_grad;
  std::vector<double> decoder_grad;  // empty when not requested
};

// Single-sample reparameterized negative ELBO with explicit noise u (rows x latent).
ElboLoss elbo_loss(const CvaeModel& model, const Matrix& x, const Matrix& c, const Matrix& u,
                   double kl_weight = 1.0, bool want_decoder_grad = true);
ElboLoss elbo_loss(const CvaeModel& model, const Matrix& x, const Matrix& c, RngStream& rng,
                   double kl_weight = 1.0);

struct CvaeTrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  double kl_weight = 1.0;
  std::uint64_t seed = 1;
  CvaeArchitecture arch;
};

struct CvaeEpochStats {
  double loss = 0.0;
  double reconstruction = 0.0;
  double kl = 0.0;
};

struct CvaeTrainResult {
  CvaeModel model;
  std::vector<CvaeEpochStats> curve;
};

CvaeTrainResult train_cvae(const Dataset& train, const CvaeTrainConfig& config);

struct ImportanceTerms {
  std::vector<double> log_likelihood;  // log p(x | z_i, c)
  std::vector<double> log_prior;       // log p(z_i)
  std::vector<double> log_posterior;   // log q(z_i | x, c)
  std::vector<double> weights;         // sum of the above with the posterior subtracted
};

// Log-domain importance weights for one data point (x: 1 x 30, c: 1 x 5) and k latent samples.
ImportanceTerms importance_weights(const CvaeModel& model, const Matrix& x, const Matrix& c,
                                   const Matrix& z);

// log(1/k sum exp w_i), shifted by max w.
double log_mean_exp(std::span<const double> w);
// -(log mean exp(w - max w) + max w)
double nll_from_weights(std::span<const double> w);

struct IwaeEstimate {
  std::size_t k = 0;
  std::vector<double> bound;  // L_k per row
  std::vector<double> nll;    // -L_k per row
};

// k-sample importance-weighted bound for every row of x, with z_i ~ q(z | x, c).
IwaeEstimate iwae_bound(const CvaeModel& model, const Matrix& x, const Matrix& c, std::size_t k,
                        RngStream& rng);
double nll(const CvaeModel& model, const Matrix& x_row, const Matrix& c_row, std::size_t k, RngStream& rng);

}  // namespace stealth
