#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"

#include "stealth/matrix.hpp"

namespace stealth {

inline constexpr std::size_t kFeatureCount = 30;
inline constexpr std::size_t kClassCount = 5;
inline constexpr int kBenignLabel = 0;
// Order fixes the label encoding and every one-hot vector in the project.
inline const std::array<std::string, kClassCount> kClassNames = {"benign", "deauth", "replay",
                                                                  "eviltwin", "fdi"};

struct Dataset {
  Matrix features;  // N x 30
  std::vector<int> labels;
  std::vector<std::string> feature_names;

  std::size_t size() const noexcept { return labels.size(); }
  // Rows whose label equals `label`.
  std::vector<std::size_t> indices_of(int label) const;
  Dataset subset(std::span<const std::size_t> rows) const;
};

struct ScalerParams {
  std::vector<std::string> feature_names;
  std::vector<double> min;
  std::vector<double> max;
};

struct SyntheticSpec {
  std::size_t samples_per_class = 500;
  double separation = 0.325;  // distance from the benign mean to each attack-class mean
  double std = 0.05;        // per-feature within-class standard deviation
  std::uint64_t seed = 1;
};

struct Split {
  Dataset train;
  Dataset test;
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> test_index;
};

// CSV with a header row: exactly 30 numeric feature columns plus one label column.
// Labels may be class names (case-insensitive) or integer ids 0..4.
Dataset load_csv(const std::filesystem::path& path, const std::string& label_column = "label");
Dataset parse_csv(std::istream& in, const std::string& source, const std::string& label_column = "label");
void save_csv(const std::filesystem::path& path, const Dataset& data, const std::string& label_column = "label");

ScalerParams fit_minmax(const Dataset& raw);
// Constant features map to 0; values outside the fitted range are clipped into [0, 1].
Dataset apply_minmax(const Dataset& raw, const ScalerParams& params);
Matrix invert_minmax(const Matrix& scaled, const ScalerParams& params);

Split stratified_split(const Dataset& data, double train_fraction, std::uint64_t seed);

Dataset synth_generate(const SyntheticSpec& spec);

// {feature_name: {"min": .., "max": ..}} in column order.
nlohmann::ordered_json scaler_to_json(const ScalerParams& params);
ScalerParams scaler_from_json(const nlohmann::ordered_json& j);

int parse_label(const std::string& text);

}  // namespace stealth
