#include "stealth/pipeline.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "stealth/error.hpp"
#include "stealth/format.hpp"
#include "stealth/model_io.hpp"

namespace stealth {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------------------------
// Configuration

namespace {

// Reads keys from one JSON object and rejects any key it was not asked about.
class StrictObject {
 public:
  StrictObject(const ojson& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(context_ + "." + key + ": wrong type");
    }
  }

  const ojson* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(context_ + ": unknown key '" + key + "'");
    }
  }

 private:
  const ojson& j_;
  std::string context_;
  std::set<std::string> seen_;
};

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what);
}

std::string label_mode_name(LabelMode m) { return m == LabelMode::predicted ? "predicted" : "min_over_labels"; }

}  // namespace

RunConfig parse_run_config(const ojson& j) {
  RunConfig c;
  StrictObject root(j, "config");
  int version = -1;
  if (!j.is_object() || !j.contains("schema_version")) throw ConfigError("config: missing required key 'schema_version'");
  root.get("schema_version", version);
  if (version != kConfigSchemaVersion) {
    throw ConfigError("config: unsupported schema_version " + std::to_string(version));
  }
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);

  if (const auto* d = root.child("data")) {
    StrictObject o(*d, "data");
    o.get("source", c.data.source);
    o.get("csv_path", c.data.csv_path);
    o.get("label_column", c.data.label_column);
    o.get("train_fraction", c.data.train_fraction);
    if (const auto* s = o.child("synthetic")) {
      StrictObject so(*s, "data.synthetic");
      so.get("samples_per_class", c.data.synthetic.samples_per_class);
      so.get("separation", c.data.synthetic.separation);
      so.get("std", c.data.synthetic.std);
      so.finish();
    }
    o.finish();
  }
  if (const auto* d = root.child("ids")) {
    StrictObject o(*d, "ids");
    o.get("epochs", c.ids.epochs);
    o.get("batch_size", c.ids.batch_size);
    o.get("learning_rate", c.ids.learning_rate);
    o.get("early_stop_patience", c.ids.early_stop_patience);
    o.finish();
  }
  if (const auto* d = root.child("gan")) {
    StrictObject o(*d, "gan");
    o.get("lambda_cls", c.gan.lambda_cls);
    o.get("lambda_st", c.gan.lambda_st);
    o.get("lambda_gan", c.gan.lambda_gan);
    o.get("learning_rate", c.gan.learning_rate);
    o.get("epochs", c.gan.epochs);
    o.get("batch_size", c.gan.batch_size);
    o.get("noise_dim", c.gan.noise_dim);
    o.get("hidden", c.gan.hidden);
    o.get("out_scale", c.gan.out_scale);
    o.get("label_smoothing", c.gan.label_smoothing);
    o.finish();
  }
  if (const auto* d = root.child("cvae")) {
    StrictObject o(*d, "cvae");
    o.get("epochs", c.cvae.epochs);
    o.get("batch_size", c.cvae.batch_size);
    o.get("learning_rate", c.cvae.learning_rate);
    o.get("kl_weight", c.cvae.kl_weight);
    o.get("latent_dim", c.cvae.arch.latent_dim);
    o.get("hidden", c.cvae.arch.hidden);
    o.get("conditional", c.cvae.arch.conditional);
    o.get("baseline", c.cvae_baseline);
    o.finish();
  }
  if (const auto* d = root.child("sweep")) {
    StrictObject o(*d, "sweep");
    o.get("epsilon", c.sweep.grid.epsilon);
    o.get("rho", c.sweep.grid.rho);
    o.get("n_ref", c.sweep.grid.n_ref);
    o.get("eta_max", c.sweep.grid.eta_max);
    o.finish();
  }
  if (const auto* d = root.child("detect")) {
    StrictObject o(*d, "detect");
    std::string mode = label_mode_name(c.detect.label_mode);
    o.get("k", c.detect.k);
    o.get("label_mode", mode);
    o.get("shrinkage", c.detect.shrinkage);
    o.get("ridge", c.detect.ridge);
    o.get("regret_steps", c.detect.regret_steps);
    o.get("regret_learning_rate", c.detect.regret_learning_rate);
    o.get("max_samples", c.detect.max_samples);
    o.get("calibration_samples", c.detect.calibration_samples);
    o.get("bins", c.detect.bins);
    o.finish();
    if (mode == "predicted") {
      c.detect.label_mode = LabelMode::predicted;
    } else if (mode == "min_over_labels") {
      c.detect.label_mode = LabelMode::min_over_labels;
    } else {
      throw ConfigError("detect.label_mode must be 'predicted' or 'min_over_labels'");
    }
  }
  root.finish();

  require(c.data.source == "synthetic" || c.data.source == "csv", "data.source must be 'synthetic' or 'csv'");
  require(c.data.train_fraction > 0.0 && c.data.train_fraction < 1.0, "data.train_fraction must lie in (0, 1)");
  require(c.data.synthetic.separation > 0.0 && c.data.synthetic.std > 0.0 && c.data.synthetic.samples_per_class >= 5,
          "data.synthetic needs separation > 0, std > 0, samples_per_class >= 5");
  require(c.ids.batch_size > 0 && c.ids.learning_rate > 0.0, "ids.batch_size and ids.learning_rate must be positive");
  require(c.gan.batch_size > 0 && c.gan.learning_rate > 0.0 && c.gan.noise_dim > 0 && c.gan.hidden > 0 && c.gan.out_scale > 0.0,
          "gan sizes, learning_rate and out_scale must be positive");
  require(c.gan.lambda_cls >= 0.0 && c.gan.lambda_st >= 0.0 && c.gan.lambda_gan >= 0.0, "gan lambdas must be >= 0");
  require(c.gan.label_smoothing > 0.0 && c.gan.label_smoothing < 0.5, "gan.label_smoothing must lie in (0, 0.5)");
  require(c.cvae.batch_size > 0 && c.cvae.learning_rate > 0.0 && c.cvae.kl_weight >= 0.0 &&
              c.cvae.arch.latent_dim > 0 && c.cvae.arch.hidden > 0,
          "cvae sizes and learning_rate must be positive");
  require(!c.sweep.grid.epsilon.empty() && !c.sweep.grid.rho.empty() && !c.sweep.grid.n_ref.empty(),
          "sweep grids must be non-empty");
  for (double e : c.sweep.grid.epsilon) require(e > 0.0, "sweep.epsilon values must be > 0");
  for (double r : c.sweep.grid.rho) require(r > 0.0, "sweep.rho values must be > 0");
  require(c.sweep.grid.eta_max >= 0.0 && c.sweep.grid.eta_max <= 1.0, "sweep.eta_max must lie in [0, 1]");
  require(c.detect.k >= 1 && c.detect.regret_steps >= 1 && c.detect.bins >= 2 && c.detect.max_samples >= 1,
          "detect.k, regret_steps, max_samples >= 1 and bins >= 2");
  require(c.detect.shrinkage >= 0.0 && c.detect.shrinkage <= 1.0, "detect.shrinkage must lie in [0, 1]");
  require(c.detect.ridge >= 0.0 && std::isfinite(c.detect.ridge), "detect.ridge must be finite and >= 0");
  return with_derived_seeds(c);
}

RunConfig load_run_config(const fs::path& path) {
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return parse_run_config(j);
}

ojson to_json(const RunConfig& c) {
  return ojson{
      {"schema_version", kConfigSchemaVersion},
      {"seed", c.seed},
      {"output_dir", c.output_dir},
      {"data",
       {{"source", c.data.source},
        {"csv_path", c.data.csv_path},
        {"label_column", c.data.label_column},
        {"train_fraction", c.data.train_fraction},
        {"synthetic",
         {{"samples_per_class", c.data.synthetic.samples_per_class},
          {"separation", c.data.synthetic.separation},
          {"std", c.data.synthetic.std}}}}},
      {"ids",
       {{"epochs", c.ids.epochs},
        {"batch_size", c.ids.batch_size},
        {"learning_rate", c.ids.learning_rate},
        {"early_stop_patience", c.ids.early_stop_patience}}},
      {"gan",
       {{"lambda_cls", c.gan.lambda_cls},
        {"lambda_st", c.gan.lambda_st},
        {"lambda_gan", c.gan.lambda_gan},
        {"learning_rate", c.gan.learning_rate},
        {"epochs", c.gan.epochs},
        {"batch_size", c.gan.batch_size},
        {"noise_dim", c.gan.noise_dim},
        {"hidden", c.gan.hidden},
        {"out_scale", c.gan.out_scale},
        {"label_smoothing", c.gan.label_smoothing}}},
      {"cvae",
       {{"epochs", c.cvae.epochs},
        {"batch_size", c.cvae.batch_size},
        {"learning_rate", c.cvae.learning_rate},
        {"kl_weight", c.cvae.kl_weight},
        {"latent_dim", c.cvae.arch.latent_dim},
        {"hidden", c.cvae.arch.hidden},
        {"conditional", c.cvae.arch.conditional},
        {"baseline", c.cvae_baseline}}},
      {"sweep",
       {{"epsilon", c.sweep.grid.epsilon},
        {"rho", c.sweep.grid.rho},
        {"n_ref", c.sweep.grid.n_ref},
        {"eta_max", c.sweep.grid.eta_max}}},
      {"detect",
       {{"k", c.detect.k},
        {"label_mode", label_mode_name(c.detect.label_mode)},
        {"shrinkage", c.detect.shrinkage},
        {"ridge", c.detect.ridge},
        {"regret_steps", c.detect.regret_steps},
        {"regret_learning_rate", c.detect.regret_learning_rate},
        {"max_samples", c.detect.max_samples},
        {"calibration_samples", c.detect.calibration_samples},
        {"bins", c.detect.bins}}},
  };
}

std::string config_digest(const RunConfig& config) {
  ojson j = to_json(config);
  j.erase("output_dir");  // where results go does not change what they are
  return sha256_hex(j.dump());
}

std::uint64_t stage_seed(std::uint64_t global_seed, const std::string& tag) {
  return RngStream(global_seed).derive(tag).seed();
}

RunConfig with_derived_seeds(RunConfig c) {
  c.data.synthetic.seed = stage_seed(c.seed, "synth");
  c.ids.seed = stage_seed(c.seed, "ids");
  c.gan.seed = stage_seed(c.seed, "gan");
  c.cvae.seed = stage_seed(c.seed, "cvae");
  return c;
}

std::string to_string(Stage stage) {
  switch (stage) {
    case Stage::data: return "data";
    case Stage::ids: return "train-ids";
    case Stage::gan: return "train-gan";
    case Stage::cvae: return "train-cvae";
    case Stage::sweep: return "sweep";
    case Stage::detect: return "detect";
    case Stage::report: return "report";
  }
  return "unknown";
}

Stage stage_from_string(const std::string& name) {
  for (auto s : {Stage::data, Stage::ids, Stage::gan, Stage::cvae, Stage::sweep, Stage::detect, Stage::report}) {
    if (to_string(s) == name) return s;
  }
  throw ArgumentError("unknown stage '" + name + "'");
}

// ---------------------------------------------------------------------------------------------
// Model persistence

namespace {

ojson class_names_json() {
  ojson names = ojson::array();
  for (const auto& n : kClassNames) names.push_back(n);
  return names;
}

ojson read_sidecar(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("missing " + path.string());
  return read_json_file(path);
}

}  // namespace

void save_ids(const fs::path& dir, const IdsModel& model, const ojson& extra) {
  fs::create_directories(dir);
  save_mlp(dir / "model.bin", model.net);
  ojson j{{"model", "ids"}, {"weights", "model.bin"}, {"class_names", class_names_json()}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json_file(dir / "model.json", j);
}

IdsModel load_ids(const fs::path& dir) {
  IdsModel m;
  m.net = load_mlp(dir / "model.bin");
  if (m.net.input_width() != kFeatureCount || m.net.output_width() != kClassCount) {
    throw IoError(dir.string() + ": IDS weights must map 30 features to 5 classes");
  }
  const auto j = read_sidecar(dir / "model.json");
  if (j.contains("scaler")) {
    const fs::path scaler_path = dir / j.at("scaler").get<std::string>();
    if (fs::exists(scaler_path)) m.scaler = scaler_from_json(read_json_file(scaler_path));
  }
  return m;
}

void save_generator(const fs::path& dir, const Generator& gen, const Discriminator& disc, const ojson& extra) {
  fs::create_directories(dir);
  save_mlp(dir / "generator.bin", gen.net);
  save_mlp(dir / "discriminator.bin", disc.net);
  ojson j{{"model", "cgan"},
          {"generator", "generator.bin"},
          {"discriminator", "discriminator.bin"},
          {"noise_dim", gen.noise_dim},
          {"out_scale", gen.out_scale}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json_file(dir / "model.json", j);
}

Generator load_generator(const fs::path& dir) {
  const auto j = read_sidecar(dir / "model.json");
  Generator g;
  g.net = load_mlp(dir / "generator.bin");
  g.noise_dim = j.at("noise_dim").get<std::size_t>();
  g.out_scale = j.at("out_scale").get<double>();
  if (g.net.input_width() != g.noise_dim + kClassCount || g.net.output_width() != kFeatureCount) {
    throw IoError(dir.string() + ": generator weights do not match noise_dim");
  }
  return g;
}

void save_cvae(const fs::path& dir, const CvaeModel& model, const ojson& extra) {
  fs::create_directories(dir);
  save_mlp(dir / "encoder.bin", model.encoder);
  save_mlp(dir / "decoder.bin", model.decoder);
  ojson j{{"model", model.conditional ? "cvae" : "vae"},
          {"encoder", "encoder.bin"},
          {"decoder", "decoder.bin"},
          {"latent_dim", model.latent_dim},
          {"input_dim", model.input_dim},
          {"conditional", model.conditional}};
  for (const auto& [k, v] : extra.items()) j[k] = v;
  write_json_file(dir / "model.json", j);
}

CvaeModel load_cvae(const fs::path& dir) {
  const auto j = read_sidecar(dir / "model.json");
  CvaeModel m;
  m.encoder = load_mlp(dir / "encoder.bin");
  m.decoder = load_mlp(dir / "decoder.bin");
  m.latent_dim = j.at("latent_dim").get<std::size_t>();
  m.input_dim = j.at("input_dim").get<std::size_t>();
  m.conditional = j.at("conditional").get<bool>();
  if (m.encoder.output_width() != 2 * m.latent_dim || m.decoder.output_width() != m.input_dim) {
    throw IoError(dir.string() + ": CVAE weights do not match the sidecar dimensions");
  }
  return m;
}

Dataset load_stage_dataset(const fs::path& path) { return load_csv(path, "label"); }

// ---------------------------------------------------------------------------------------------
// Pipeline

namespace {

struct StageInfo {
  Stage stage;
  const char* marker;  // file whose presence means the stage completed
  std::vector<Stage> deps;
};

const std::vector<StageInfo>& stage_table() {
  static const std::vector<StageInfo> table = {
      {Stage::data, "data/dataset.json", {}},
      {Stage::ids, "ids/model.json", {Stage::data}},
      {Stage::gan, "gan/model.json", {Stage::data, Stage::ids}},
      {Stage::cvae, "cvae/model.json", {Stage::data}},
      {Stage::sweep, "sweep/selection.json", {Stage::data, Stage::ids, Stage::gan}},
      {Stage::detect, "detect/summary.json", {Stage::data, Stage::ids, Stage::cvae, Stage::sweep}},
      {Stage::report, "report/summary.json", {Stage::detect}},
  };
  return table;
}

const StageInfo& info(Stage s) {
  for (const auto& i : stage_table()) {
    if (i.stage == s) return i;
  }
  throw ArgumentError("unknown stage");
}

std::string csv_row(std::initializer_list<std::string> cells) {
  std::string out;
  for (const auto& c : cells) {
    if (!out.empty()) out += ',';
    out += c;
  }
  return out + '\n';
}

std::string num(double v) { return format_double(v); }
std::string num(std::size_t v) { return std::to_string(v); }

void write_matrix_csv(const fs::path& path, const Matrix& x, std::span<const int> labels) {
  std::ostringstream os;
  for (std::size_t j = 0; j < x.cols(); ++j) os << feature_label(j) << ',';
  os << "origin_label\n";
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (double v : x.row(r)) os << format_double(v) << ',';
    os << kClassNames[static_cast<std::size_t>(labels[r])] << '\n';
  }
  write_text_file(path, os.str());
}

Dataset read_matrix_csv(const fs::path& path) { return load_csv(path, "origin_label"); }

Matrix head_rows(const Matrix& m, std::size_t n) {
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < std::min(n, m.rows()); ++i) rows.push_back(i);
  return select_rows(m, rows);
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Pipeline::Pipeline(RunConfig config, fs::path out_dir) : config_(with_derived_seeds(std::move(config))), out_(std::move(out_dir)) {}

bool Pipeline::is_complete(Stage stage) const { return fs::exists(out_ / info(stage).marker); }

void Pipeline::run(Stage stage, bool stage_only) {
  for (Stage dep : info(stage).deps) ensure(dep, stage_only);
  execute(stage);
}

void Pipeline::ensure(Stage stage, bool stage_only) {
  if (is_complete(stage)) return;
  if (stage_only) {
    throw DependencyError("stage '" + to_string(stage) + "' has not been run (missing " +
                          (out_ / info(stage).marker).string() + ")");
  }
  for (Stage dep : info(stage).deps) ensure(dep, stage_only);
  execute(stage);
}

void Pipeline::execute(Stage stage) {
  switch (stage) {
    case Stage::data: run_data(config_.data.source); break;
    case Stage::ids: stage_ids(); break;
    case Stage::gan: stage_gan(); break;
    case Stage::cvae: stage_cvae(); break;
    case Stage::sweep: stage_sweep(); break;
    case Stage::detect: stage_detect(); break;
    case Stage::report: stage_report(); break;
  }
}

void Pipeline::record(Stage stage, const std::vector<fs::path>& files, double seconds) {
  const fs::path manifest_path = out_ / "manifest.json";
  ojson manifest = fs::exists(manifest_path) ? read_json_file(manifest_path) : ojson::object();
  manifest["config_digest"] = config_digest(config_);
  manifest["versions"] = {{"stealthlab", kVersion}, {"weight_format", kWeightFormatVersion}, {"config_schema", kConfigSchemaVersion}};
  ojson artifacts = manifest.contains("artifacts") ? manifest["artifacts"] : ojson::object();
  ojson entries = ojson::array();
  for (const auto& f : files) {
    entries.push_back({{"path", fs::relative(f, out_).generic_string()}, {"sha256", sha256_file(f)}});
  }
  artifacts[to_string(stage)] = entries;
  manifest["artifacts"] = artifacts;
  ojson timing = manifest.contains("wall_clock_seconds") ? manifest["wall_clock_seconds"] : ojson::object();
  timing[to_string(stage)] = seconds;
  manifest["wall_clock_seconds"] = timing;
  write_json_file(manifest_path, manifest);
}

void Pipeline::run_data(const std::string& source) {
  const auto t0 = std::chrono::steady_clock::now();
  Dataset raw;
  ojson meta{{"source", source}};
  if (source == "csv") {
    if (config_.data.csv_path.empty()) throw ConfigError("data.csv_path is required for ingest");
    raw = load_csv(config_.data.csv_path, config_.data.label_column);
    meta["csv_path"] = config_.data.csv_path;
  } else if (source == "synthetic") {
    raw = synth_generate(config_.data.synthetic);
    meta["synthetic"] = {{"samples_per_class", config_.data.synthetic.samples_per_class},
                         {"separation", config_.data.synthetic.separation},
                         {"std", config_.data.synthetic.std}};
  } else {
    throw ConfigError("unknown data source '" + source + "'");
  }
  const Split split = stratified_split(raw, config_.data.train_fraction, stage_seed(config_.seed, "split"));
  const ScalerParams scaler = fit_minmax(split.train);
  const Dataset train = apply_minmax(split.train, scaler);
  const Dataset test = apply_minmax(split.test, scaler);

  const fs::path dir = out_ / "data";
  fs::create_directories(dir);
  save_csv(dir / "train.csv", train);
  save_csv(dir / "test.csv", test);
  write_json_file(dir / "scaler.json", scaler_to_json(scaler));
  ojson counts = ojson::object();
  for (std::size_t c = 0; c < kClassCount; ++c) counts[kClassNames[c]] = raw.indices_of(static_cast<int>(c)).size();
  meta["instances"] = raw.size();
  meta["features"] = raw.features.cols();
  meta["class_counts"] = counts;
  meta["train_size"] = train.size();
  meta["test_size"] = test.size();
  write_json_file(dir / "dataset.json", meta);
  record(Stage::data, {dir / "train.csv", dir / "test.csv", dir / "scaler.json", dir / "dataset.json"}, elapsed_since(t0));
}

void Pipeline::stage_ids() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train = load_stage_dataset(out_ / "data/train.csv");
  const Dataset test = load_stage_dataset(out_ / "data/test.csv");
  const auto result = train_ids(train, config_.ids);
  const auto cm = confusion_matrix(result.model, test);

  const fs::path dir = out_ / "ids";
  std::ostringstream curve;
  curve << "epoch,loss,train_accuracy\n";
  for (std::size_t e = 0; e < result.loss_curve.size(); ++e) {
    curve << csv_row({num(e), num(result.loss_curve[e]), num(result.accuracy_curve[e])});
  }
  ojson confusion = ojson::array();
  for (const auto& row : cm.counts) confusion.push_back(row);
  save_ids(dir, result.model,
           {{"scaler", "../data/scaler.json"},
            {"config",
             {{"epochs", config_.ids.epochs},
              {"batch_size", config_.ids.batch_size},
              {"learning_rate", config_.ids.learning_rate},
              {"seed", config_.ids.seed}}},
            {"metrics",
             {{"epochs_run", result.loss_curve.size()},
              {"final_train_accuracy", result.final_train_accuracy},
              {"test_accuracy", cm.accuracy},
              {"test_confusion", confusion}}}});
  write_text_file(dir / "loss.csv", curve.str());
  record(Stage::ids, {dir / "model.bin", dir / "model.json", dir / "loss.csv"}, elapsed_since(t0));
}

void Pipeline::stage_gan() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train = load_stage_dataset(out_ / "data/train.csv");
  const IdsModel ids = load_ids(out_ / "ids");
  const auto result = train_cgan(ids, train, config_.gan);

  const fs::path dir = out_ / "gan";
  std::ostringstream curve;
  curve << "epoch,d_loss,g_cls,g_stealth,g_gan\n";
  for (std::size_t e = 0; e < result.curve.size(); ++e) {
    const auto& s = result.curve[e];
    curve << csv_row({num(e), num(s.d_loss), num(s.g_cls), num(s.g_stealth), num(s.g_gan)});
  }
  const auto& g = config_.gan;
  save_generator(dir, result.generator, result.discriminator,
                 {{"config",
                   {{"lambda_cls", g.lambda_cls},
                    {"lambda_st", g.lambda_st},
                    {"lambda_gan", g.lambda_gan},
                    {"learning_rate", g.learning_rate},
                    {"epochs", g.epochs},
                    {"batch_size", g.batch_size},
                    {"label_smoothing", g.label_smoothing},
                    {"seed", g.seed}}}});
  write_text_file(dir / "loss.csv", curve.str());
  record(Stage::gan, {dir / "generator.bin", dir / "discriminator.bin", dir / "model.json", dir / "loss.csv"},
         elapsed_since(t0));
}

void Pipeline::stage_cvae() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train = load_stage_dataset(out_ / "data/train.csv");
  std::vector<fs::path> files;

  auto train_one = [&](const fs::path& dir, bool conditional) {
    CvaeTrainConfig cfg = config_.cvae;
    cfg.arch.conditional = conditional;
    const auto result = train_cvae(train, cfg);
    std::ostringstream curve;
    curve << "epoch,loss,reconstruction,kl\n";
    for (std::size_t e = 0; e < result.curve.size(); ++e) {
      const auto& s = result.curve[e];
      curve << csv_row({num(e), num(s.loss), num(s.reconstruction), num(s.kl)});
    }
    const double final_recon = result.curve.empty() ? 0.0 : result.curve.back().reconstruction;
    save_cvae(dir, result.model,
              {{"config",
                {{"epochs", cfg.epochs},
                 {"batch_size", cfg.batch_size},
                 {"learning_rate", cfg.learning_rate},
                 {"kl_weight", cfg.kl_weight},
                 {"hidden", cfg.arch.hidden},
                 {"seed", cfg.seed}}},
               {"final_reconstruction", final_recon},
               {"final_loss", result.curve.empty() ? 0.0 : result.curve.back().loss}});
    write_text_file(dir / "loss.csv", curve.str());
    for (const char* f : {"encoder.bin", "decoder.bin", "model.json", "loss.csv"}) files.push_back(dir / f);
    return final_recon;
  };

  // The baseline is written first so the primary sidecar (the stage marker) lands last.
  const bool conditional = config_.cvae.arch.conditional;
  if (conditional && config_.cvae_baseline) train_one(out_ / "vae", false);
  train_one(out_ / "cvae", conditional);
  record(Stage::cvae, files, elapsed_since(t0));
}

void Pipeline::stage_sweep() {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train = load_stage_dataset(out_ / "data/train.csv");
  const Dataset test = load_stage_dataset(out_ / "data/test.csv");
  const IdsModel ids = load_ids(out_ / "ids");
  const Generator gen = load_generator(out_ / "gan");

  std::vector<std::size_t> attack_rows;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] != kBenignLabel) attack_rows.push_back(i);
  }
  if (attack_rows.empty()) throw ArgumentError("test split has no attack samples");
  const Dataset attacks = test.subset(attack_rows);
  const Dataset benign = train.subset(train.indices_of(kBenignLabel));

  const auto refine_seed = stage_seed(config_.seed, "sweep-refine");
  const auto ood_seed = stage_seed(config_.seed, "sweep-ood");
  const auto& grid = config_.sweep.grid;
  const SweepResult result = sweep(gen, ids, attacks.features, attacks.labels, grid, refine_seed, ood_seed, &benign.features);

  const fs::path dir = out_ / "sweep";
  fs::create_directories(dir);
  std::ostringstream csv, ben;
  csv << "epsilon,rho,n_ref,w_adv_att,w_ood_att,objective,succ_adv,succ_ood,feasible\n";
  ben << "epsilon,rho,n_ref,w_adv_ben,w_ood_ben\n";
  for (const auto& r : result.reports) {
    csv << csv_row({num(r.epsilon), num(r.rho), num(r.n_ref), num(r.w_adv_att), num(r.w_ood_att), num(r.objective),
                    num(r.succ_adv), num(r.succ_ood), r.feasible ? "true" : "false"});
    ben << csv_row({num(r.epsilon), num(r.rho), num(r.n_ref), num(r.w_adv_ben), num(r.w_ood_ben)});
  }
  write_text_file(dir / "sweep.csv", csv.str());
  write_text_file(dir / "benign_distances.csv", ben.str());

  const auto& op = result.reports[result.operating_point()];
  const ojson selection{{"feasible", result.selected.has_value()},
                        {"eta_max", grid.eta_max},
                        {"grid_points", result.reports.size()},
                        {"selected_index", result.operating_point()},
                        {"epsilon", op.epsilon},
                        {"rho", op.rho},
                        {"n_ref", op.n_ref},
                        {"objective", op.objective},
                        {"w_adv_att", op.w_adv_att},
                        {"w_ood_att", op.w_ood_att},
                        {"succ_adv", op.succ_adv},
                        {"succ_ood", op.succ_ood},
                        {"refine_seed", refine_seed},
                        {"ood_seed", ood_seed},
                        {"attack_samples", attacks.size()}};

  // Operating-point samples for the detectors.
  const auto adv = refine(gen, attacks.features, attacks.labels, {op.epsilon, op.n_ref, refine_seed});
  const Matrix ood = gen_ood(attacks.features, {op.rho, ood_seed});
  write_matrix_csv(dir / "adversarial.csv", adv.adversarial, attacks.labels);
  write_matrix_csv(dir / "ood.csv", ood, attacks.labels);
  write_json_file(dir / "selection.json", selection);
  record(Stage::sweep,
         {dir / "sweep.csv", dir / "benign_distances.csv", dir / "adversarial.csv", dir / "ood.csv", dir / "selection.json"},
         elapsed_since(t0));
}

void Pipeline::stage_detect() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& dc = config_.detect;
  const Dataset train = load_stage_dataset(out_ / "data/train.csv");
  const IdsModel ids = load_ids(out_ / "ids");
  const CvaeModel cvae = load_cvae(out_ / "cvae");
  const ojson selection = read_json_file(out_ / "sweep/selection.json");
  const Dataset adv = read_matrix_csv(out_ / "sweep/adversarial.csv");
  const Dataset ood = read_matrix_csv(out_ / "sweep/ood.csv");

  const Matrix xa = head_rows(adv.features, dc.max_samples);
  const Matrix xo = head_rows(ood.features, dc.max_samples);
  Matrix x(xa.rows() + xo.rows(), kFeatureCount);
  std::copy(xa.data().begin(), xa.data().end(), x.data().begin());
  std::copy(xo.data().begin(), xo.data().end(), x.data().begin() + static_cast<std::ptrdiff_t>(xa.size()));
  std::vector<SourceTag> tags(xa.rows(), SourceTag::adversarial);
  tags.insert(tags.end(), xo.rows(), SourceTag::ood);
  const auto predicted = predict_label(ids, x);

  const ScoreSet nll_scores =
      score_nll(cvae, ids, x, tags, {dc.k, stage_seed(config_.seed, "detect-nll"), dc.label_mode});
  const GaussianClassModel gm = fit_gaussians(cvae, train, dc.shrinkage, dc.ridge);
  const ScoreSet maha_scores = score_mahalanobis(gm, cvae, x, tags);

  const RegretConfig rc{dc.regret_steps, dc.regret_learning_rate, stage_seed(config_.seed, "detect-regret")};
  RegretStats regret_stats;
  ScoreSet regret_scores = score_regret(cvae, x, predicted, tags, rc, &regret_stats);

  // Orientation from training data only: benign rows versus the same rows with OOD-style noise.
  // Adversarial samples stay near the data, so the side benign rows fall on is the adversarial side.
  double orientation = 1.0;
  {
    const Dataset benign = train.subset(train.indices_of(kBenignLabel));
    const Matrix cal = head_rows(benign.features, dc.calibration_samples);
    const Matrix cal_noisy = gen_ood(cal, {selection.at("rho").get<double>(), stage_seed(config_.seed, "detect-calibration")});
    const std::vector<SourceTag> cal_tags(cal.rows(), SourceTag::benign);
    const auto cal_labels = predict_label(ids, cal);
    const auto noisy_labels = predict_label(ids, cal_noisy);
    const auto a = score_regret(cvae, cal, cal_labels, cal_tags, rc).scores_for(SourceTag::benign);
    const auto b = score_regret(cvae, cal_noisy, noisy_labels, cal_tags, rc).scores_for(SourceTag::benign);
    auto mean = [](const std::vector<double>& v) {
      double s = 0.0;
      for (double d : v) s += d;
      return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    if (!a.empty() && !b.empty() && mean(a) < mean(b)) orientation = -1.0;
  }
  for (auto& r : regret_scores.records) r.score *= orientation;

  const fs::path dir = out_ / "detect";
  fs::create_directories(dir);
  std::ostringstream scores, nll_csv;
  scores << "sample_id,tag,detector,score\n";
  nll_csv << "sample_id,source_tag,label_used,k,nll\n";
  for (const ScoreSet* set : std::array<const ScoreSet*, 3>{&nll_scores, &maha_scores, &regret_scores}) {
    for (const auto& r : set->records) {
      scores << csv_row({num(r.sample_id), to_string(r.tag), set->detector, num(r.score)});
    }
  }
  for (const auto& r : nll_scores.records) {
    nll_csv << csv_row({num(r.sample_id), to_string(r.tag), kClassNames[static_cast<std::size_t>(r.label_used)], num(dc.k),
                        num(r.score)});
  }
  write_text_file(dir / "scores.csv", scores.str());
  write_text_file(dir / "nll_scores.csv", nll_csv.str());

  std::vector<fs::path> files = {dir / "scores.csv", dir / "nll_scores.csv"};
  ojson aucs = ojson::object();
  for (const ScoreSet* set : std::array<const ScoreSet*, 3>{&nll_scores, &maha_scores, &regret_scores}) {
    const RocCurve roc = roc_auc(*set);
    std::ostringstream os;
    os << "threshold,fpr,tpr\n";
    for (const auto& p : roc.points) os << csv_row({num(p.threshold), num(p.fpr), num(p.tpr)});
    const fs::path path = dir / ("roc_" + set->detector + ".csv");
    write_text_file(path, os.str());
    files.push_back(path);
    aucs[set->detector] = roc.auc;
  }

  const ojson summary{{"config_digest", config_digest(config_)},
                      {"auc", aucs},
                      {"operating_point",
                       {{"epsilon", selection.at("epsilon")},
                        {"rho", selection.at("rho")},
                        {"n_ref", selection.at("n_ref")},
                        {"feasible", selection.at("feasible")}}},
                      {"samples", {{"adversarial", xa.rows()}, {"ood", xo.rows()}}},
                      {"nll", {{"k", dc.k}, {"label_mode", label_mode_name(dc.label_mode)}}},
                      {"mahalanobis", {{"shrinkage", dc.shrinkage}, {"ridge", dc.ridge}, {"space", "cvae latent mean"}}},
                      {"regret",
                       {{"steps", dc.regret_steps},
                        {"learning_rate", dc.regret_learning_rate},
                        {"orientation", orientation},
                        {"invalid_samples", regret_stats.invalid}}}};
  write_json_file(dir / "summary.json", summary);
  files.push_back(dir / "summary.json");
  record(Stage::detect, files, elapsed_since(t0));
}

void Pipeline::stage_report() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto& dc = config_.detect;
  std::map<std::string, ScoreSet> sets;
  {
    std::istringstream is(read_text_file(out_ / "detect/scores.csv"));
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string id, tag, det, score;
      std::getline(ls, id, ',');
      std::getline(ls, tag, ',');
      std::getline(ls, det, ',');
      std::getline(ls, score, ',');
      auto& set = sets[det];
      set.detector = det;
      set.records.push_back({std::stoul(id), source_tag_from_string(tag), std::stod(score), -1});
    }
  }

  const fs::path dir = out_ / "report";
  fs::create_directories(dir);
  std::ostringstream hist;
  hist << "detector,tag,bin,lower,upper,count\n";
  for (const char* det : {"nll", "mahalanobis", "regret"}) {
    if (!sets.count(det)) throw DependencyError("detect/scores.csv has no '" + std::string(det) + "' scores");
    const Histogram h = export_histograms(sets[det], dc.bins);
    for (const auto& [tag, counts] : h.counts) {
      for (std::size_t b = 0; b < counts.size(); ++b) {
        hist << csv_row({det, to_string(tag), num(b), num(h.edges[b]), num(h.edges[b + 1]), num(counts[b])});
      }
    }
  }
  write_text_file(dir / "histograms.csv", hist.str());

  const ojson detect = read_json_file(out_ / "detect/summary.json");
  const ojson ids = read_json_file(out_ / "ids/model.json");
  const ojson cvae = read_json_file(out_ / "cvae/model.json");
  const ojson dataset = read_json_file(out_ / "data/dataset.json");
  ojson summary{{"config_digest", config_digest(config_)},
                {"dataset", {{"source", dataset.at("source")}, {"instances", dataset.at("instances")}}},
                {"ids_test_accuracy", ids.at("metrics").at("test_accuracy")},
                {"operating_point", detect.at("operating_point")},
                {"auc", detect.at("auc")},
                {"cvae_final_reconstruction", cvae.at("final_reconstruction")}};
  if (fs::exists(out_ / "vae/model.json")) {
    summary["vae_final_reconstruction"] = read_json_file(out_ / "vae/model.json").at("final_reconstruction");
  }
  write_json_file(dir / "summary.json", summary);
  record(Stage::report, {dir / "histograms.csv", dir / "summary.json"}, elapsed_since(t0));
}

}  // namespace stealth
