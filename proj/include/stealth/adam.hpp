#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace stealth {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamState() = default;
  AdamState(std::size_t parameter_count, AdamConfig config)
      : config(config), m(parameter_count, 0.0), v(parameter_count, 0.0) {}

  AdamConfig config;
  std::vector<double> m;
  std::vector<double> v;
  std::uint64_t t = 0;
};

// One bias-corrected Adam update. Gradients are validated before anything is modified;
// a non-finite entry raises NumericError naming its index.
void adam_step(AdamState& state, std::span<double> params, std::span<const double> grads);

}  // namespace stealth
