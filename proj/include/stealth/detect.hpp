#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "stealth/cvae.hpp"
#include "stealth/ids.hpp"

namespace stealth {

enum class SourceTag { adversarial, ood, benign };

std::string to_string(SourceTag tag);
SourceTag source_tag_from_string(const std::string& name);

struct ScoreRecord {
  std::size_t sample_id = 0;
  SourceTag tag = SourceTag::adversarial;
  double score = 0.0;
  int label_used = -1;  // conditioning label, -1 when not applicable
};

struct ScoreSet {
  std::string detector;
  std::vector<ScoreRecord> records;
  std::vector<double> scores_for(SourceTag tag) const;
};

enum class LabelMode { predicted, min_over_labels };

struct NllScoringConfig {
  std::size_t k = 50;
  std::uint64_t seed = 1;
  LabelMode label_mode = LabelMode::predicted;
};

// Per-sample NLL conditioned on the IDS-predicted label (or the minimising label). Each sample's
// noise stream is keyed by the seed and the sample's contents, so identical rows score identically.
ScoreSet score_nll(const CvaeModel& cvae, const IdsModel& ids, const Matrix& x,
                   std::span<const SourceTag> tags, const NllScoringConfig& config);

// Class-conditional Gaussians over encoder means, with diagonal shrinkage
// cov <- (1 - s) cov + s diag(cov) + ridge I. The ridge defaults to 0; a collapsed encoder
// can leave latent means with numerically zero spread, which only a ridge makes invertible.
struct GaussianClassModel {
  std::vector<std::vector<double>> mean;
  std::vector<Matrix> covariance;
  std::vector<Matrix> cholesky;  // lower factor of each covariance
  double shrinkage = 0.1;
  double ridge = 0.0;
};

GaussianClassModel fit_gaussians(std::span<const Matrix> per_class_points, double shrinkage, double ridge = 0.0);
GaussianClassModel fit_gaussians(const CvaeModel& cvae, const Dataset& train, double shrinkage, double ridge = 0.0);
double mahalanobis(const GaussianClassModel& gm, std::size_t cls, std::span<const double> u);

// min over classes c of the distance between encode(x, c).mu and the class-c Gaussian.
ScoreSet score_mahalanobis(const GaussianClassModel& gm, const CvaeModel& cvae, const Matrix& x,
                           std::span<const SourceTag> tags);

struct RegretConfig {
  std::size_t steps = 100;
  double learning_rate = 1e-3;
  std::uint64_t seed = 1;
};

struct RegretStats {
  std::size_t invalid = 0;
};

// ELBO gain from fine-tuning a copy of the encoder on each sample alone (decoder frozen, fixed
// noise draw). The gain is measured against the best iterate, so it is never negative. Samples
// whose optimisation diverges are dropped and counted in `stats`.
ScoreSet score_regret(const CvaeModel& cvae, const Matrix& x, std::span<const int> labels,
                      std::span<const SourceTag> tags, const RegretConfig& config,
                      RegretStats* stats = nullptr);
double regret(const CvaeModel& cvae, const Matrix& x_row, const Matrix& c_row, const RegretConfig& config,
              std::uint64_t sample_seed);

struct RocPoint {
  double threshold = 0.0;
  double fpr = 0.0;
  double tpr = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // from (0, 0) to (1, 1)
  double auc = 0.0;
};

// Positive class is `positive`; higher score means more likely positive. Ties count half.
RocCurve roc_auc(const ScoreSet& scores, SourceTag positive = SourceTag::adversarial,
                 SourceTag negative = SourceTag::ood);

struct Histogram {
  std::vector<double> edges;  // bins + 1 shared edges
  std::map<SourceTag, std::vector<std::size_t>> counts;
};

Histogram export_histograms(const ScoreSet& scores, std::size_t bins);

}  // namespace stealth
