#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "stealth/attack.hpp"
#include "stealth/cgan.hpp"
#include "stealth/cvae.hpp"
#include "stealth/data.hpp"
#include "stealth/detect.hpp"
#include "stealth/ids.hpp"

namespace stealth {

inline constexpr int kConfigSchemaVersion = 1;
inline constexpr const char* kVersion = "0.1.0";

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" | "csv"
  std::string csv_path;
  std::string label_column = "label";
  double train_fraction = 0.8;
  SyntheticSpec synthetic;
};

struct SweepConfig {
  SweepGrid grid = SweepGrid::defaults();
};

struct DetectConfig {
  std::size_t k = 50;
  LabelMode label_mode = LabelMode::predicted;
  double shrinkage = 0.1;
  double ridge = 1e-12;                   // added to every latent variance before inversion
  std::size_t regret_steps = 100;
  double regret_learning_rate = 1e-3;
  std::size_t max_samples = 150;          // per source tag
  std::size_t calibration_samples = 40;   // benign rows used to orient the regret score
  std::size_t bins = 40;
};

// Module seeds are not configured individually; each is derived from `seed` and a stage tag.
struct RunConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "out";
  DataConfig data;
  IdsTrainConfig ids;
  GanConfig gan;
  CvaeTrainConfig cvae;
  bool cvae_baseline = true;
  SweepConfig sweep;
  DetectConfig detect;
};

// Strict parse: schema_version is required and unknown keys raise ConfigError.
RunConfig parse_run_config(const nlohmann::ordered_json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::ordered_json to_json(const RunConfig& config);
std::string config_digest(const RunConfig& config);
std::uint64_t stage_seed(std::uint64_t global_seed, const std::string& tag);
// Copies the global seed into every module config.
RunConfig with_derived_seeds(RunConfig config);

enum class Stage { data, ids, gan, cvae, sweep, detect, report };
std::string to_string(Stage stage);
Stage stage_from_string(const std::string& name);

// Model persistence: weight file plus JSON sidecar.
void save_ids(const std::filesystem::path& dir, const IdsModel& model, const nlohmann::ordered_json& extra);
IdsModel load_ids(const std::filesystem::path& dir);
void save_generator(const std::filesystem::path& dir, const Generator& gen, const Discriminator& disc,
                    const nlohmann::ordered_json& extra);
Generator load_generator(const std::filesystem::path& dir);
void save_cvae(const std::filesystem::path& dir, const CvaeModel& model, const nlohmann::ordered_json& extra);
CvaeModel load_cvae(const std::filesystem::path& dir);

// Runs stages against an output directory. Without stage_only, missing upstream stages are run
// first; with it, a missing prerequisite raises DependencyError naming the stage.
class Pipeline {
 public:
  Pipeline(RunConfig config, std::filesystem::path out_dir);

  void run(Stage stage, bool stage_only);
  // Data stage from an explicit source ("csv" for ingest, "synthetic" for synth).
  void run_data(const std::string& source);

  bool is_complete(Stage stage) const;
  const std::filesystem::path& out_dir() const noexcept { return out_; }
  const RunConfig& config() const noexcept { return config_; }

 private:
  void ensure(Stage stage, bool stage_only);
  void execute(Stage stage);
  void stage_ids();
  void stage_gan();
  void stage_cvae();
  void stage_sweep();
  void stage_detect();
  void stage_report();
  void record(Stage stage, const std::vector<std::filesystem::path>& files, double seconds);

  RunConfig config_;
  std::filesystem::path out_;
};

// Loads a dataset CSV written by the data stage.
Dataset load_stage_dataset(const std::filesystem::path& path);

}  // namespace stealth
