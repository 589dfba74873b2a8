#include <cstdint>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "stealth/error.hpp"
#include "stealth/pipeline.hpp"

namespace {

int exit_code(stealth::ErrorKind kind) {
  using stealth::ErrorKind;
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::dependency: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::io:
    case ErrorKind::schema:
    case ErrorKind::parse:
    case ErrorKind::label: return 5;
    default: return 1;
  }
}

struct Options {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  bool stage_only = false;
  std::string csv_path;
};

int run(const std::string& command, const Options& opt) {
  stealth::RunConfig config = opt.config_path.empty() ? stealth::RunConfig{} : stealth::load_run_config(opt.config_path);
  if (opt.seed) config.seed = *opt.seed;
  if (!opt.out_dir.empty()) config.output_dir = opt.out_dir;
  if (!opt.csv_path.empty()) config.data.csv_path = opt.csv_path;
  config = stealth::with_derived_seeds(config);

  stealth::Pipeline pipeline(config, config.output_dir);
  if (command == "ingest") {
    pipeline.run_data("csv");
  } else if (command == "synth") {
    pipeline.run_data("synthetic");
  } else {
    pipeline.run(stealth::stage_from_string(command), opt.stage_only);
  }
  std::cout << command << ": wrote " << pipeline.out_dir().string() << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"UAV intrusion-detection lab: stealthy adversarial generation and CVAE detection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(stealth::kVersion));

  Options opt;
  std::string command;
  const std::pair<const char*, const char*> commands[] = {
      {"ingest", "Load, split and scale a labelled CSV"},
      {"synth", "Generate, split and scale a synthetic 5-class dataset"},
      {"train-ids", "Train the intrusion-detection classifier"},
      {"train-gan", "Train the conditional perturbation generator"},
      {"train-cvae", "Train the CVAE (and the plain VAE baseline)"},
      {"sweep", "Sweep epsilon, rho and refinement steps; select an operating point"},
      {"detect", "Score adversarial and OOD samples with all three detectors"},
      {"report", "Write histograms and the summary"},
  };
  for (const auto& [name, help] : commands) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", opt.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", opt.out_dir, "Output directory (overrides output_dir)");
    sub->add_option("--seed", opt.seed, "Global seed (overrides seed)");
    sub->add_flag("--stage-only", opt.stage_only, "Fail instead of running missing upstream stages");
    if (std::string(name) == "ingest") sub->add_option("--csv", opt.csv_path, "CSV path (overrides data.csv_path)");
    sub->callback([&command, n = std::string(name)] { command = n; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    return run(command, opt);
  } catch (const stealth::Error& e) {
    std::cerr << "stealthlab " << command << ": " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "stealthlab " << command << ": unexpected error: " << e.what() << '\n';
    return 1;
  }
}
