#include "stealth/data.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "stealth/error.hpp"
#include "stealth/format.hpp"
#include "stealth/rng.hpp"

namespace stealth {

namespace {

std::string trim(std::string s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && is_space(static_cast<unsigned char>(s[i]))) ++i;
  s.erase(0, i);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

std::vector<std::size_t> Dataset::indices_of(int label) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == label) out.push_back(i);
  }
  return out;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
  Dataset out;
  out.features = select_rows(features, rows);
  out.feature_names = feature_names;
  out.labels.reserve(rows.size());
  for (auto r : rows) out.labels.push_back(labels.at(r));
  return out;
}

int parse_label(const std::string& text) {
  const std::string t = lower(trim(text));
  for (std::size_t c = 0; c < kClassCount; ++c) {
    if (t == kClassNames[c]) return static_cast<int>(c);
  }
  int id = -1;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), id);
  if (ec == std::errc() && ptr == t.data() + t.size() && id >= 0 &&
      id < static_cast<int>(kClassCount)) {
    return id;
  }
  throw LabelError("unknown label '" + text + "'");
}

Dataset parse_csv(std::istream& in, const std::string& source, const std::string& label_column) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError(source + ": empty file, expected a header row");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
  const auto header = split_fields(line);
  std::size_t label_idx = header.size();
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == label_column) label_idx = i;
  }
  if (label_idx == header.size()) {
    throw SchemaError(source + ": missing column '" + label_column + "'");
  }
  const std::size_t n_features = header.size() - 1;
  if (n_features != kFeatureCount) {
    throw SchemaError(source + ": expected " + std::to_string(kFeatureCount) +
                      " feature columns besides '" + label_column + "', found " +
                      std::to_string(n_features));
  }

  Dataset data;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (i != label_idx) data.feature_names.push_back(header[i]);
  }
  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw SchemaError(source + ": row " + std::to_string(row) + " has " +
                        std::to_string(fields.size()) + " fields, header has " +
                        std::to_string(header.size()));
    }
    for (std::size_t c = 0; c < fields.size(); ++c) {
      if (c == label_idx) {
        try {
          data.labels.push_back(parse_label(fields[c]));
        } catch (const LabelError& e) {
          throw LabelError(source + ": row " + std::to_string(row) + ": " + e.what());
        }
        continue;
      }
      double v = 0.0;
      const auto& f = fields[c];
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw ParseError(source + ": row " + std::to_string(row) + ", column " +
                         std::to_string(c + 1) + " ('" + header[c] + "'): not a number: '" + f + "'");
      }
      values.push_back(v);
    }
  }
  if (data.labels.empty()) throw SchemaError(source + ": no data rows");
  data.features = Matrix(data.labels.size(), kFeatureCount, std::move(values));
  return data;
}

Dataset load_csv(const std::filesystem::path& path, const std::string& label_column) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_csv(in, path.string(), label_column);
}

void save_csv(const std::filesystem::path& path, const Dataset& data, const std::string& label_column) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& name : data.feature_names) os << name << ',';
  os << label_column << '\n';
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (double v : data.features.row(r)) os << format_double(v) << ',';
    os << kClassNames[static_cast<std::size_t>(data.labels[r])] << '\n';
  }
  if (!os) throw IoError("failed writing " + path.string());
}

ScalerParams fit_minmax(const Dataset& raw) {
  if (raw.size() == 0) throw ArgumentError("fit_minmax: empty dataset");
  ScalerParams p;
  const auto cols = raw.features.cols();
  p.feature_names = raw.feature_names;
  if (p.feature_names.size() != cols) {
    p.feature_names.clear();
    for (std::size_t c = 0; c < cols; ++c) p.feature_names.push_back(feature_label(c));
  }
  p.min.assign(cols, 0.0);
  p.max.assign(cols, 0.0);
  for (std::size_t c = 0; c < cols; ++c) {
    double lo = raw.features(0, c), hi = lo;
    for (std::size_t r = 1; r < raw.size(); ++r) {
      lo = std::min(lo, raw.features(r, c));
      hi = std::max(hi, raw.features(r, c));
    }
    p.min[c] = lo;
    p.max[c] = hi;
  }
  return p;
}

Dataset apply_minmax(const Dataset& raw, const ScalerParams& params) {
  if (params.min.size() != raw.features.cols()) throw ShapeError("apply_minmax: width mismatch");
  Dataset out = raw;
  for (std::size_t r = 0; r < raw.size(); ++r) {
    for (std::size_t c = 0; c < raw.features.cols(); ++c) {
      const double range = params.max[c] - params.min[c];
      double v = range > 0.0 ? (raw.features(r, c) - params.min[c]) / range : 0.0;
      out.features(r, c) = std::clamp(v, 0.0, 1.0);
    }
  }
  return out;
}

Matrix invert_minmax(const Matrix& scaled, const ScalerParams& params) {
  if (params.min.size() != scaled.cols()) throw ShapeError("invert_minmax: width mismatch");
  Matrix out(scaled.rows(), scaled.cols());
  for (std::size_t r = 0; r < scaled.rows(); ++r) {
    for (std::size_t c = 0; c < scaled.cols(); ++c) {
      out(r, c) = params.min[c] + scaled(r, c) * (params.max[c] - params.min[c]);
    }
  }
  return out;
}

Split stratified_split(const Dataset& data, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ArgumentError("train_fraction must lie in (0, 1)");
  }
  Split split;
  const RngStream root(seed);
  for (std::size_t c = 0; c < kClassCount; ++c) {
    auto idx = data.indices_of(static_cast<int>(c));
    if (idx.size() < 5) {
      throw ArgumentError("class '" + kClassNames[c] + "' has " + std::to_string(idx.size()) +
                          " samples; at least 5 are needed to split");
    }
    RngStream rng = root.derive(static_cast<std::uint64_t>(c));
    shuffle(std::span<std::size_t>(idx), rng);
    auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(idx.size())));
    n_train = std::clamp<std::size_t>(n_train, 1, idx.size() - 1);
    split.train_index.insert(split.train_index.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
    split.test_index.insert(split.test_index.end(), idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  }
  std::sort(split.train_index.begin(), split.train_index.end());
  std::sort(split.test_index.begin(), split.test_index.end());
  split.train = data.subset(split.train_index);
  split.test = data.subset(split.test_index);
  return split;
}

Dataset synth_generate(const SyntheticSpec& spec) {
  if (!(spec.separation > 0.0) || !(spec.std > 0.0) || spec.samples_per_class == 0) {
    throw ArgumentError("synthetic generator needs separation > 0, std > 0 and samples_per_class > 0");
  }
  RngStream rng(spec.seed);
  RngStream sign_rng = rng.derive("feature-signs");

  // Benign sits at the centre; attack class c sits at distance `separation` along a dense
  // +-1/sqrt(30) pattern taken from Walsh rows 1, 2, 4, 8 (orthogonal up to the two dropped columns).
  // A per-feature random sign flip varies the patterns by seed without changing their inner products.
  std::vector<double> flip(kFeatureCount);
  for (double& f : flip) f = sign_rng.uniform() < 0.5 ? -1.0 : 1.0;
  const double step = spec.separation / std::sqrt(static_cast<double>(kFeatureCount));
  std::vector<std::vector<double>> means(kClassCount, std::vector<double>(kFeatureCount, 0.5));
  for (std::size_t c = 1; c < kClassCount; ++c) {
    const std::size_t walsh_row = std::size_t{1} << (c - 1);
    for (std::size_t j = 0; j < kFeatureCount; ++j) {
      const double sign = (std::popcount(walsh_row & j) % 2 == 0) ? 1.0 : -1.0;
      means[c][j] += step * sign * flip[j];
    }
  }

  Dataset data;
  for (std::size_t j = 0; j < kFeatureCount; ++j) data.feature_names.push_back(feature_label(j));
  data.features = Matrix(kClassCount * spec.samples_per_class, kFeatureCount);
  RngStream noise = rng.derive("samples");
  std::size_t row = 0;
  for (std::size_t c = 0; c < kClassCount; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
      for (std::size_t j = 0; j < kFeatureCount; ++j) {
        data.features(row, j) = std::clamp(means[c][j] + spec.std * noise.normal(), 0.0, 1.0);
      }
      data.labels.push_back(static_cast<int>(c));
    }
  }
  return data;
}

nlohmann::ordered_json scaler_to_json(const ScalerParams& params) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (std::size_t i = 0; i < params.min.size(); ++i) {
    j[params.feature_names.at(i)] = {{"min", params.min[i]}, {"max", params.max[i]}};
  }
  return j;
}

ScalerParams scaler_from_json(const nlohmann::ordered_json& j) {
  if (!j.is_object()) throw SchemaError("scaler json: expected an object");
  ScalerParams p;
  try {
    for (const auto& [name, range] : j.items()) {
      p.feature_names.push_back(name);
      p.min.push_back(range.at("min").get<double>());
      p.max.push_back(range.at("max").get<double>());
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("scaler json: ") + e.what());
  }
  return p;
}

}  // namespace stealth
