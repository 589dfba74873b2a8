#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"

#include "stealth/error.hpp"
#include "stealth/format.hpp"
#include "stealth/pipeline.hpp"

using namespace stealth;
using stealth::testing::scratch_dir;
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

ojson smoke_json() {
  std::ifstream in(fs::path(STEALTH_SOURCE_DIR) / "configs" / "smoke.json");
  return ojson::parse(in);
}

RunConfig smoke_config() { return parse_run_config(smoke_json()); }

bool throws_config_error(const ojson& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError&) {
    return true;
  }
  return false;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

ojson read_json(const fs::path& p) {
  std::ifstream in(p);
  return ojson::parse(in);
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::vector<std::vector<std::string>> read_csv_rows(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::ifstream in(p);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    rows.push_back(cells);
  }
  return rows;
}

// One completed smoke run shared by the read-only checks below.
const fs::path& full_run() {
  static const fs::path dir = [] {
    const fs::path d = scratch_dir("pipeline_full");
    Pipeline(smoke_config(), d).run(Stage::report, false);
    return d;
  }();
  return dir;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(STEALTHLAB_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("sha256 known vectors") {
  CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("config: defaults round-trip and the shipped files parse") {
  const RunConfig def;
  const RunConfig back = parse_run_config(to_json(def));
  CHECK(to_json(back) == to_json(def));
  const RunConfig shipped = load_run_config(fs::path(STEALTH_SOURCE_DIR) / "configs" / "default.json");
  CHECK(to_json(shipped) == to_json(def));
  CHECK(smoke_config().data.synthetic.samples_per_class == 80);
}

TEST_CASE("config: strict parsing") {
  ojson j = smoke_json();
  j.erase("schema_version");
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["schema_version"] = 2;
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["sede"] = 3;
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["gan"]["lamda_st"] = 1.0;
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["data"]["synthetic"]["noise"] = 0.1;
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["ids"]["epochs"] = "many";
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["data"]["train_fraction"] = 1.5;
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["detect"]["label_mode"] = "oracle";
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["sweep"]["epsilon"] = ojson::array();
  CHECK(throws_config_error(j));

  j = smoke_json();
  j["detect"]["label_mode"] = "min_over_labels";
  CHECK(parse_run_config(j).detect.label_mode == LabelMode::min_over_labels);
  CHECK(throws_config_error(ojson::array()));
}

TEST_CASE("config: unreadable and malformed files are config errors") {
  const fs::path dir = scratch_dir("pipeline_config_files");
  CHECK_THROWS_AS(load_run_config(dir / "absent.json"), ConfigError);
  write_file(dir / "broken.json", "{\"schema_version\": 1,");
  CHECK_THROWS_AS(load_run_config(dir / "broken.json"), ConfigError);
}

TEST_CASE("config digest ignores the output directory and tracks everything else") {
  RunConfig a = smoke_config();
  RunConfig b = a;
  b.output_dir = "elsewhere";
  CHECK(config_digest(a) == config_digest(b));
  b.seed = a.seed + 1;
  CHECK(config_digest(a) != config_digest(b));
  b = a;
  b.gan.lambda_st = 11.0;
  CHECK(config_digest(a) != config_digest(b));
  CHECK(config_digest(a).size() == 64);
}

TEST_CASE("derived seeds are stable, tag-specific and follow the global seed") {
  CHECK(stage_seed(7, "ids") == stage_seed(7, "ids"));
  CHECK(stage_seed(7, "ids") != stage_seed(7, "gan"));
  CHECK(stage_seed(7, "ids") != stage_seed(8, "ids"));
  RunConfig c;
  c.seed = 99;
  const RunConfig d = with_derived_seeds(c);
  CHECK(d.ids.seed == stage_seed(99, "ids"));
  CHECK(d.gan.seed == stage_seed(99, "gan"));
  CHECK(d.cvae.seed == stage_seed(99, "cvae"));
  CHECK(d.ids.seed != d.gan.seed);
}

TEST_CASE("stage names") {
  for (Stage s : {Stage::data, Stage::ids, Stage::gan, Stage::cvae, Stage::sweep, Stage::detect, Stage::report}) {
    CHECK(stage_from_string(to_string(s)) == s);
  }
  CHECK(to_string(Stage::gan) == "train-gan");
  CHECK_THROWS_AS(stage_from_string("train-everything"), ArgumentError);
}

TEST_CASE("stage-only runs refuse missing prerequisites") {
  const fs::path dir = scratch_dir("pipeline_deps");
  Pipeline p(smoke_config(), dir);
  CHECK_THROWS_AS(p.run(Stage::ids, true), DependencyError);
  p.run(Stage::data, true);
  try {
    p.run(Stage::gan, true);
    FAIL("expected DependencyError");
  } catch (const DependencyError& e) {
    CHECK(std::string(e.what()).find("train-ids") != std::string::npos);
  }
  CHECK_FALSE(p.is_complete(Stage::gan));
  p.run(Stage::ids, true);
  CHECK(p.is_complete(Stage::ids));
  CHECK_THROWS_AS(p.run(Stage::detect, true), DependencyError);
}

TEST_CASE("full run writes every stage and a complete manifest") {
  const fs::path& dir = full_run();
  const ojson manifest = read_json(dir / "manifest.json");
  CHECK(manifest["config_digest"] == config_digest(with_derived_seeds(smoke_config())));
  CHECK(manifest["versions"]["stealthlab"] == kVersion);
  std::set<std::string> stages;
  for (const auto& [stage, entries] : manifest["artifacts"].items()) {
    stages.insert(stage);
    REQUIRE(entries.size() > 0);
    for (const auto& e : entries) {
      const fs::path p = dir / e["path"].get<std::string>();
      REQUIRE(fs::exists(p));
      CHECK(e["sha256"] == sha256_hex(read_file(p)));
    }
  }
  CHECK(stages == std::set<std::string>{"data", "train-ids", "train-gan", "train-cvae", "sweep", "detect", "report"});
  CHECK(manifest["wall_clock_seconds"].size() == 7);
  CHECK(fs::exists(dir / "vae" / "model.json"));
}

TEST_CASE("sweep output covers the grid and the selection minimises the feasible objective") {
  const auto rows = read_csv_rows(full_run() / "sweep" / "sweep.csv");
  REQUIRE(rows.size() == 1 + 2 * 2 * 2);
  CHECK(rows[0] == std::vector<std::string>{"epsilon", "rho", "n_ref", "w_adv_att", "w_ood_att", "objective", "succ_adv",
                                            "succ_ood", "feasible"});
  const ojson sel = read_json(full_run() / "sweep" / "selection.json");
  const bool feasible = sel["feasible"].get<bool>();
  double best = 1e300;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (!feasible || rows[i][8] == "1" || rows[i][8] == "true") best = std::min(best, std::stod(rows[i][5]));
  }
  CHECK(sel["objective"].get<double>() == doctest::Approx(best).epsilon(1e-12));
  if (feasible) CHECK(sel["succ_adv"].get<double>() >= smoke_config().sweep.grid.eta_max);
}

TEST_CASE("single-point grid writes a one-row sweep table") {
  const fs::path dir = scratch_dir("pipeline_single_point");
  fs::copy(full_run(), dir, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
  RunConfig c = smoke_config();
  c.sweep.grid.epsilon = {0.07};
  c.sweep.grid.rho = {0.3};
  c.sweep.grid.n_ref = {5};
  Pipeline(c, dir).run(Stage::sweep, true);
  const auto rows = read_csv_rows(dir / "sweep" / "sweep.csv");
  REQUIRE(rows.size() == 2);
  CHECK(rows[1][0] == "0.07");
  CHECK(rows[1][1] == "0.3");
  CHECK(rows[1][2] == "5");
  CHECK(read_json(dir / "sweep" / "selection.json")["grid_points"] == 1);
}

TEST_CASE("detect summary lists three detectors and ROC files are monotone") {
  const ojson summary = read_json(full_run() / "detect" / "summary.json");
  std::set<std::string> names;
  for (const auto& [name, auc] : summary["auc"].items()) {
    names.insert(name);
    CHECK(auc.get<double>() >= 0.0);
    CHECK(auc.get<double>() <= 1.0);
  }
  CHECK(names == std::set<std::string>{"nll", "mahalanobis", "regret"});
  for (const auto& name : names) {
    const auto rows = read_csv_rows(full_run() / "detect" / ("roc_" + name + ".csv"));
    REQUIRE(rows.size() >= 3);
    CHECK(rows[0] == std::vector<std::string>{"threshold", "fpr", "tpr"});
    for (std::size_t i = 2; i < rows.size(); ++i) {
      CHECK(std::stod(rows[i][1]) >= std::stod(rows[i - 1][1]));
      CHECK(std::stod(rows[i][2]) >= std::stod(rows[i - 1][2]));
    }
  }
  const ojson report = read_json(full_run() / "report" / "summary.json");
  CHECK(report["auc"] == summary["auc"]);
}

TEST_CASE("two runs from the same config produce identical artifacts") {
  const fs::path other = scratch_dir("pipeline_repeat");
  Pipeline(smoke_config(), other).run(Stage::report, false);
  const ojson a = read_json(full_run() / "manifest.json");
  const ojson b = read_json(other / "manifest.json");
  CHECK(a["config_digest"] == b["config_digest"]);
  CHECK(a["artifacts"] == b["artifacts"]);
}

TEST_CASE("rerunning one stage after deleting its output reproduces it bit for bit") {
  const fs::path dir = scratch_dir("pipeline_isolation");
  Pipeline p(smoke_config(), dir);
  p.run(Stage::report, false);
  const ojson before = read_json(dir / "manifest.json")["artifacts"];

  fs::remove(dir / "ids" / "model.bin");
  p.run(Stage::ids, true);
  fs::remove_all(dir / "sweep");
  p.run(Stage::sweep, true);
  fs::remove(dir / "detect" / "scores.csv");
  p.run(Stage::detect, true);
  fs::remove(dir / "cvae" / "decoder.bin");
  p.run(Stage::cvae, true);
  CHECK(read_json(dir / "manifest.json")["artifacts"] == before);
}

TEST_CASE("unconditional CVAE configuration trains the plain VAE") {
  RunConfig c = smoke_config();
  c.cvae.arch.conditional = false;
  const fs::path dir = scratch_dir("pipeline_vae");
  Pipeline p(c, dir);
  p.run(Stage::cvae, false);
  const CvaeModel m = load_cvae(dir / "cvae");
  CHECK_FALSE(m.conditional);
  CHECK(m.encoder.input_width() == kFeatureCount);
  CHECK(read_json(dir / "cvae" / "model.json")["conditional"] == false);
}

TEST_CASE("cli: exit codes") {
  const fs::path dir = scratch_dir("pipeline_cli");
  const std::string smoke = (fs::path(STEALTH_SOURCE_DIR) / "configs" / "smoke.json").string();
  const std::string out = " --out " + (dir / "run").string();

  CHECK(run_cli("--version") == 0);
  CHECK(run_cli("") == 2);
  CHECK(run_cli("synth --config " + (dir / "missing.json").string()) == 2);
  CHECK(run_cli("train-gan --stage-only --config " + smoke + out) == 3);
  CHECK(run_cli("synth --config " + smoke + out) == 0);
  CHECK(fs::exists(dir / "run" / "data" / "dataset.json"));
  CHECK(run_cli("train-ids --stage-only --seed 12 --config " + smoke + out) == 0);
  CHECK(read_json(dir / "run" / "manifest.json")["config_digest"] != config_digest(with_derived_seeds(smoke_config())));

  ojson bad = smoke_json();
  bad["gan"]["lamda_st"] = 1.0;
  write_file(dir / "bad.json", bad.dump());
  CHECK(run_cli("synth --config " + (dir / "bad.json").string() + out) == 2);

  write_file(dir / "short.csv", "a,b,label\n1,2,0\n");
  CHECK(run_cli("ingest --csv " + (dir / "short.csv").string() + " --config " + smoke + out) == 5);
  CHECK(run_cli("ingest --csv " + (dir / "absent.csv").string() + " --config " + smoke + out) == 5);

  ojson diverge = smoke_json();
  diverge["ids"]["learning_rate"] = 1e300;
  write_file(dir / "diverge.json", diverge.dump());
  CHECK(run_cli("train-ids --config " + (dir / "diverge.json").string() + " --out " + (dir / "diverge").string()) == 4);
}
