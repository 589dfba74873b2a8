#include "stealth/detect.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>

#include "stealth/adam.hpp"
#include "stealth/error.hpp"

namespace stealth {

std::string to_string(SourceTag tag) {
  switch (tag) {
    case SourceTag::adversarial: return "adversarial";
    case SourceTag::ood: return "ood";
    case SourceTag::benign: return "benign";
  }
  return "unknown";
}

SourceTag source_tag_from_string(const std::string& name) {
  for (auto t : {SourceTag::adversarial, SourceTag::ood, SourceTag::benign}) {
    if (to_string(t) == name) return t;
  }
  throw ArgumentError("unknown source tag '" + name + "'");
}

std::vector<double> ScoreSet::scores_for(SourceTag tag) const {
  std::vector<double> out;
  for (const auto& r : records) {
    if (r.tag == tag) out.push_back(r.score);
  }
  return out;
}

namespace {

std::uint64_t row_key(std::span<const double> row) {
  std::uint64_t h = 0x243F6A8885A308D3ULL;
  for (double v : row) h = splitmix64(h ^ std::bit_cast<std::uint64_t>(v));
  return h;
}

Matrix single_row(const Matrix& m, std::size_t r) {
  const std::size_t idx[] = {r};
  return select_rows(m, idx);
}

Matrix label_row(int label) {
  const int l[] = {label};
  return one_hot(l, kClassCount);
}

void check_tags(const Matrix& x, std::span<const SourceTag> tags) {
  if (tags.size() != x.rows()) throw ShapeError("one source tag per sample is required");
}

}  // namespace

ScoreSet score_nll(const CvaeModel& cvae, const IdsModel& ids, const Matrix& x,
                   std::span<const SourceTag> tags, const NllScoringConfig& config) {
  check_tags(x, tags);
  ScoreSet out{"nll", {}};
  const auto predicted = predict_label(ids, x);
  const RngStream root(config.seed);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Matrix xr = single_row(x, r);
    ScoreRecord rec{r, tags[r], 0.0, predicted[r]};
    auto score_with = [&](int label) {
      RngStream rng = root.derive(row_key(xr.row(0)));
      return nll(cvae, xr, label_row(label), config.k, rng);
    };
    try {
      if (config.label_mode == LabelMode::predicted) {
        rec.score = score_with(predicted[r]);
      } else {
        rec.score = std::numeric_limits<double>::infinity();
        for (int c = 0; c < static_cast<int>(kClassCount); ++c) {
          const double s = score_with(c);
          if (s < rec.score) {
            rec.score = s;
            rec.label_used = c;
          }
        }
      }
    } catch (const NumericError& e) {
      throw NumericError("NLL scoring of sample " + std::to_string(r) + ": " + e.what());
    }
    out.records.push_back(rec);
  }
  return out;
}

GaussianClassModel fit_gaussians(std::span<const Matrix> per_class_points, double shrinkage, double ridge) {
  if (!(shrinkage >= 0.0 && shrinkage <= 1.0)) throw ArgumentError("shrinkage must lie in [0, 1]");
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) throw ArgumentError("ridge must be finite and >= 0");
  GaussianClassModel gm;
  gm.shrinkage = shrinkage;
  gm.ridge = ridge;
  for (std::size_t c = 0; c < per_class_points.size(); ++c) {
    const Matrix& pts = per_class_points[c];
    if (pts.rows() < 2) throw ArgumentError("class " + std::to_string(c) + " needs at least 2 points");
    const std::size_t d = pts.cols();
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> X(
        pts.data().data(), static_cast<Eigen::Index>(pts.rows()), static_cast<Eigen::Index>(d));
    const Eigen::RowVectorXd mu = X.colwise().mean();
    const Eigen::MatrixXd centered = X.rowwise() - mu;
    Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(pts.rows() - 1);
    const Eigen::VectorXd diag = cov.diagonal();
    cov = (1.0 - shrinkage) * cov;
    cov.diagonal() += shrinkage * diag;
    cov.diagonal().array() += ridge;

    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw NumericError("covariance of class " + std::to_string(c) + " is not positive definite after shrinkage");
    }
    const Eigen::MatrixXd L = llt.matrixL();
    gm.mean.emplace_back(mu.data(), mu.data() + d);
    Matrix cm(d, d), lm(d, d);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        cm(i, j) = cov(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        lm(i, j) = L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      }
    }
    gm.covariance.push_back(std::move(cm));
    gm.cholesky.push_back(std::move(lm));
  }
  return gm;
}

GaussianClassModel fit_gaussians(const CvaeModel& cvae, const Dataset& train, double shrinkage, double ridge) {
  std::vector<Matrix> latents;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    const auto idx = train.indices_of(static_cast<int>(c));
    const Dataset part = train.subset(idx);
    latents.push_back(encode(cvae, part.features, one_hot(part.labels, kClassCount)).mu);
  }
  return fit_gaussians(latents, shrinkage, ridge);
}

double mahalanobis(const GaussianClassModel& gm, std::size_t cls, std::span<const double> u) {
  const auto& mu = gm.mean.at(cls);
  if (u.size() != mu.size()) throw ShapeError("mahalanobis: dimension mismatch");
  const Matrix& L = gm.cholesky[cls];
  // Solve L y = u - mu; distance is |y|.
  std::vector<double> y(u.size());
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    double v = u[i] - mu[i];
    for (std::size_t j = 0; j < i; ++j) v -= L(i, j) * y[j];
    y[i] = v / L(i, i);
    s += y[i] * y[i];
  }
  return std::sqrt(s);
}

ScoreSet score_mahalanobis(const GaussianClassModel& gm, const CvaeModel& cvae, const Matrix& x,
                           std::span<const SourceTag> tags) {
  check_tags(x, tags);
  ScoreSet out{"mahalanobis", {}};
  for (std::size_t r = 0; r < x.rows(); ++r) out.records.push_back({r, tags[r], std::numeric_limits<double>::infinity(), -1});
  for (std::size_t c = 0; c < gm.mean.size(); ++c) {
    const std::vector<int> labels(x.rows(), static_cast<int>(c));
    const Matrix mu = encode(cvae, x, one_hot(labels, kClassCount)).mu;
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const double d = mahalanobis(gm, c, mu.row(r));
      if (d < out.records[r].score) {
        out.records[r].score = d;
        out.records[r].label_used = static_cast<int>(c);
      }
    }
  }
  return out;
}

double regret(const CvaeModel& cvae, const Matrix& x_row, const Matrix& c_row, const RegretConfig& config,
              std::uint64_t sample_seed) {
  RngStream rng(sample_seed);
  Matrix u(1, cvae.latent_dim);
  rng.fill_normal(u.data());

  CvaeModel local = cvae;
  const double before = -elbo_loss(local, x_row, c_row, u, 1.0, false).total;
  double best = before;
  AdamState adam(local.encoder.parameter_count(), AdamConfig{.learning_rate = config.learning_rate});
  for (std::size_t step = 0; step < config.steps; ++step) {
    const auto loss = elbo_loss(local, x_row, c_row, u, 1.0, false);
    if (!std::isfinite(loss.total)) throw NumericError("regret optimisation diverged");
    best = std::max(best, -loss.total);
    adam_step(adam, local.encoder.parameters(), loss.encoder_grad);
  }
  const double last = -elbo_loss(local, x_row, c_row, u, 1.0, false).total;
  if (!std::isfinite(last)) throw NumericError("regret optimisation diverged");
  best = std::max(best, last);
  return best - before;
}

ScoreSet score_regret(const CvaeModel& cvae, const Matrix& x, std::span<const int> labels,
                      std::span<const SourceTag> tags, const RegretConfig& config, RegretStats* stats) {
  check_tags(x, tags);
  if (labels.size() != x.rows()) throw ShapeError("score_regret: one label per sample is required");
  if (config.steps == 0) throw ArgumentError("regret needs at least one optimisation step");
  ScoreSet out{"regret", {}};
  const RngStream root(config.seed);
  std::size_t invalid = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const Matrix xr = single_row(x, r);
    try {
      const double s = regret(cvae, xr, label_row(labels[r]), config, root.derive(row_key(xr.row(0))).seed());
      out.records.push_back({r, tags[r], s, labels[r]});
    } catch (const NumericError&) {
      ++invalid;
    }
  }
  if (stats) stats->invalid = invalid;
  return out;
}

RocCurve roc_auc(const ScoreSet& scores, SourceTag positive, SourceTag negative) {
  struct Item {
    double score;
    bool pos;
  };
  std::vector<Item> items;
  std::size_t n_pos = 0, n_neg = 0;
  for (const auto& r : scores.records) {
    if (r.tag == positive) {
      items.push_back({r.score, true});
      ++n_pos;
    } else if (r.tag == negative) {
      items.push_back({r.score, false});
      ++n_neg;
    }
  }
  if (n_pos == 0 || n_neg == 0) {
    throw ArgumentError("roc_auc needs both '" + to_string(positive) + "' and '" + to_string(negative) + "' samples");
  }
  std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score > b.score; });

  RocCurve curve;
  curve.points.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
  // Twice the trapezoid area in units of 1 / (n_pos * n_neg); integer so the result is exact.
  std::uint64_t area2 = 0, tp = 0, fp = 0;
  for (std::size_t i = 0; i < items.size();) {
    const double threshold = items[i].score;
    std::uint64_t dtp = 0, dfp = 0;
    for (; i < items.size() && items[i].score == threshold; ++i) (items[i].pos ? dtp : dfp) += 1;
    area2 += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    curve.points.push_back({threshold, static_cast<double>(fp) / static_cast<double>(n_neg),
                            static_cast<double>(tp) / static_cast<double>(n_pos)});
  }
  curve.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return curve;
}

Histogram export_histograms(const ScoreSet& scores, std::size_t bins) {
  if (bins < 2) throw ArgumentError("export_histograms needs at least 2 bins");
  if (scores.records.empty()) throw ArgumentError("export_histograms: no scores");
  double lo = scores.records.front().score, hi = lo;
  for (const auto& r : scores.records) {
    if (!std::isfinite(r.score)) throw NumericError("export_histograms: non-finite score");
    lo = std::min(lo, r.score);
    hi = std::max(hi, r.score);
  }
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  Histogram h;
  for (std::size_t b = 0; b <= bins; ++b) h.edges.push_back(lo + width * static_cast<double>(b));
  for (const auto& r : scores.records) {
    auto& counts = h.counts[r.tag];
    counts.resize(bins, 0);
    auto b = static_cast<std::size_t>((r.score - lo) / width);
    ++counts[std::min(b, bins - 1)];
  }
  return h;
}

}  // namespace stealth
