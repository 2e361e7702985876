// frsaudit-cli: single entry point for ingestion, variant generation, audits,
// mitigation training, saliency maps, reports and the toy reproductions.
//
// Exit codes: 0 success, 2 usage, 3 data, 4 backend.
// Settings resolve as flags > FRSAUDIT_* environment variables > --config file.

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "frsaudit/audit.hpp"
#include "frsaudit/backends.hpp"
#include "frsaudit/corpus.hpp"
#include "frsaudit/digest.hpp"
#include "frsaudit/error.hpp"
#include "frsaudit/explain.hpp"
#include "frsaudit/image.hpp"
#include "frsaudit/mitigation.hpp"
#include "frsaudit/model.hpp"
#include "frsaudit/toy.hpp"
#include "frsaudit/variants.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace frsaudit;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitData = 3;
constexpr int kExitBackend = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return kExitUsage;
    case ErrorCode::FaceNotDetected:
    case ErrorCode::TransportError:
    case ErrorCode::AuthError:
    case ErrorCode::BadResponse:
      return kExitBackend;
    default:
      return kExitData;
  }
}

void print_error(int exit_code, std::string_view code, std::string_view message) {
  json j{{"error", code}, {"message", message}, {"exit_code", exit_code}};
  std::cerr << j.dump() << "\n";
}

std::string iso_now() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

std::string file_sha256(const fs::path& p) {
  return digest::sha256_hex(std::span<const std::uint8_t>(read_file_bytes(p)));
}

// --- Layered settings -------------------------------------------------------------

/// Options that may also come from the environment or the config file.
class Layers {
 public:
  void add(CLI::Option* opt, std::string key) { entries_.push_back({opt, std::move(key)}); }

  /// Fills every option of `sub` the command line left unset. Subcommands
  /// share storage, so options of the others are left alone.
  void resolve(const CLI::App* sub, const json& config) {
    const std::string subcommand = sub->get_name();
    for (auto& [opt, key] : entries_) {
      if (opt->count() > 0 || !owned_by(sub, opt)) continue;
      std::vector<std::string> values;
      const std::string env = env_name(key);
      if (const char* v = std::getenv(env.c_str()); v != nullptr && *v != '\0') {
        values = split(v);
      } else if (const json* j = lookup(config, subcommand, key)) {
        if (j->is_array()) {
          for (const auto& e : *j) values.push_back(scalar(e));
        } else {
          values.push_back(scalar(*j));
        }
      }
      if (values.empty()) continue;
      for (auto& v : values) opt->add_result(v);
      opt->run_callback();
    }
  }

  static std::string env_name(const std::string& key) {
    std::string s = "FRSAUDIT_";
    for (char c : key) s += c == '-' ? '_' : static_cast<char>(std::toupper(c));
    return s;
  }

 private:
  static bool owned_by(const CLI::App* sub, const CLI::Option* opt) {
    for (const CLI::Option* o : sub->get_options()) {
      if (o == opt) return true;
    }
    return false;
  }
  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
  static std::string scalar(const json& j) {
    if (j.is_string()) return j.get<std::string>();
    if (j.is_boolean()) return j.get<bool>() ? "true" : "false";
    return j.dump();
  }
  static const json* lookup(const json& config, const std::string& sub, const std::string& key) {
    if (!config.is_object()) return nullptr;
    if (auto it = config.find(sub); it != config.end() && it->is_object()) {
      if (auto k = it->find(key); k != it->end()) return &*k;
    }
    if (auto k = config.find(key); k != config.end()) return &*k;
    return nullptr;
  }

  struct Entry {
    CLI::Option* opt;
    std::string key;
  };
  std::vector<Entry> entries_;
};

// --- Run directory ------------------------------------------------------------------

/// Outputs are written into a sibling staging directory that replaces `out`
/// only when the run succeeds.
class RunDir {
 public:
  RunDir(fs::path out, std::string subcommand, std::vector<std::string> argv)
      : out_(std::move(out)), subcommand_(std::move(subcommand)), argv_(std::move(argv)) {
    if (out_.empty()) fail(ErrorCode::InvalidArgument, "--out is required");
    out_ = fs::absolute(out_).lexically_normal();
    if (!out_.has_filename()) out_ = out_.parent_path();
    if (fs::exists(out_) && !fs::exists(out_ / "run.json") && !fs::is_empty(out_)) {
      fail(ErrorCode::InvalidArgument,
           "output directory exists and is not a previous run: " + out_.string());
    }
    staging_ = out_.parent_path() / (out_.filename().string() + ".partial");
    fs::remove_all(staging_);
    fs::create_directories(staging_);
    started_ = iso_now();
  }

  ~RunDir() {
    if (!committed_) {
      std::error_code ec;
      fs::remove_all(staging_, ec);
    }
  }

  const fs::path& final_path() const { return out_; }
  const fs::path& staging() const { return staging_; }

  fs::path file(const fs::path& rel) const {
    const fs::path p = staging_ / rel;
    fs::create_directories(p.parent_path());
    return p;
  }
  void text(const fs::path& rel, std::string_view content) const {
    write_file_atomic(file(rel), content);
  }
  void json_file(const fs::path& rel, const json& j) const { text(rel, j.dump(2) + "\n"); }
  void lines(const fs::path& rel, const std::vector<json>& rows) const {
    std::string s;
    for (const auto& r : rows) s += r.dump() + "\n";
    text(rel, s);
  }

  void input(const fs::path& p) {
    if (fs::is_regular_file(p)) {
      inputs_.push_back({{"path", fs::absolute(p).lexically_normal().string()},
                         {"sha256", file_sha256(p)}});
    } else {
      inputs_.push_back({{"path", fs::absolute(p).lexically_normal().string()}});
    }
  }
  void seed(const std::string& name, std::uint64_t value) { seeds_[name] = value; }
  void setting(const std::string& name, json value) { settings_[name] = std::move(value); }

  json commit() {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(staging_)) {
      if (e.is_regular_file()) files.push_back(fs::relative(e.path(), staging_));
    }
    std::sort(files.begin(), files.end());
    json outputs = json::array();
    for (const auto& f : files) {
      outputs.push_back({{"path", f.generic_string()}, {"sha256", file_sha256(staging_ / f)}});
    }
    json run{{"tool", "frsaudit-cli"},
             {"subcommand", subcommand_},
             {"argv", argv_},
             {"started_at", started_},
             {"finished_at", iso_now()},
             {"seeds", seeds_},
             {"settings", settings_},
             {"inputs", inputs_},
             {"outputs", outputs}};
    write_file_atomic(staging_ / "run.json", run.dump(2) + "\n");
    fs::remove_all(out_);
    fs::rename(staging_, out_);
    committed_ = true;
    return run;
  }

 private:
  fs::path out_;
  fs::path staging_;
  std::string subcommand_;
  std::vector<std::string> argv_;
  std::string started_;
  json inputs_ = json::array();
  json seeds_ = json::object();
  json settings_ = json::object();
  bool committed_ = false;
};

// --- Corpus helpers ------------------------------------------------------------------

struct Corpus {
  Manifest manifest;
  fs::path base;  // image refs resolve against this directory
};

/// A manifest file, a directory holding manifest.json, or a directory with
/// labels.csv (images next to it or under images/), ingested strictly.
Corpus open_corpus(const fs::path& path, RunDir& run) {
  if (path.empty()) fail(ErrorCode::InvalidArgument, "--corpus is required");
  if (fs::is_regular_file(path)) {
    run.input(path);
    return {load_manifest(path), fs::absolute(path).parent_path()};
  }
  if (!fs::is_directory(path)) fail(ErrorCode::Io, "corpus not found: " + path.string());
  if (fs::exists(path / "manifest.json")) {
    run.input(path / "manifest.json");
    return {load_manifest(path / "manifest.json"), fs::absolute(path)};
  }
  const fs::path labels = path / "labels.csv";
  if (!fs::exists(labels)) {
    fail(ErrorCode::BadManifest, "no manifest.json or labels.csv in " + path.string());
  }
  const fs::path images = fs::is_directory(path / "images") ? path / "images" : path;
  run.input(labels);
  IngestResult r = ingest(images, labels);
  return {std::move(r.manifest), fs::absolute(images)};
}

/// Rewrites relative image refs so they resolve from `to_dir`.
Manifest rebase(Manifest m, const fs::path& from_base, const fs::path& to_dir) {
  for (auto& r : m.records) {
    const fs::path ref(r.image_ref);
    if (ref.is_absolute() || r.image_ref.rfind("mem://", 0) == 0) continue;
    r.image_ref = fs::relative(fs::absolute(from_base / ref), to_dir).generic_string();
  }
  return m;
}

void save_run_manifest(const Manifest& m, const fs::path& base, RunDir& run, const fs::path& rel) {
  const fs::path dir = (run.final_path() / rel).parent_path();
  save_manifest(rebase(m, base, dir), run.file(rel));
}

std::vector<VariantKind> parse_kinds(const std::vector<std::string>& specs) {
  std::vector<VariantKind> kinds;
  for (const auto& raw : specs) {
    std::string s = raw;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    const auto colon = s.find(':');
    const std::string name = s.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : s.substr(colon + 1);
    try {
      if (name == "grey" || name == "gray") {
        kinds.push_back(VariantKind::grey());
      } else if (name == "mask") {
        kinds.push_back(VariantKind::mask());
      } else if (name == "rgb") {
        kinds.push_back(VariantKind::rgb(arg.empty() ? 0.3 : std::stod(arg)));
      } else if (name == "spread") {
        kinds.push_back(VariantKind::spread(arg.empty() ? 5 : std::stoi(arg)));
      } else {
        kinds.push_back(VariantKind::parse_tag(raw));
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidArgument, "bad variant kind: " + raw);
    }
    kinds.back().validate();
  }
  return kinds;
}

// --- Backends ------------------------------------------------------------------------

std::shared_ptr<backends::Backend> make_backend(const std::string& spec, model::Task task) {
  using backends::StubBackend;
  if (spec == "stub") return std::make_shared<StubBackend>("stub", StubBackend::Mode::Correct, task);
  if (spec == "stub-male") {
    return std::make_shared<StubBackend>("stub-male", StubBackend::Mode::Fixed, task, "Male");
  }
  if (spec.rfind("local:", 0) == 0) {
    const fs::path p = spec.substr(6);
    return std::make_shared<backends::LocalCnnBackend>(model::load_checkpoint(p),
                                                       "local-" + p.stem().string());
  }
  auto transport = std::make_shared<backends::HttplibTransport>();
  if (spec == "aws") {
    return std::make_shared<backends::AwsRekognitionBackend>(
        backends::AwsCredentials::from_env(), transport);
  }
  if (spec == "azure") return backends::AzureFaceBackend::from_env(transport);
  if (spec == "facepp") return backends::FacePlusPlusBackend::from_env(transport);
  fail(ErrorCode::InvalidArgument,
       "unknown backend '" + spec + "' (stub, stub-male, local:<ckpt>, aws, azure, facepp)");
}

std::vector<std::shared_ptr<backends::PredictionService>> make_services(
    const std::vector<std::string>& specs, model::Task task, const fs::path& cache_dir,
    int parallelism) {
  if (specs.empty()) fail(ErrorCode::InvalidArgument, "at least one --backend is required");
  auto cache = std::make_shared<backends::PredictionCache>(cache_dir);
  auto clock = std::make_shared<backends::SystemClock>();
  backends::ServiceOptions opts;
  opts.parallelism = parallelism;
  std::vector<std::shared_ptr<backends::PredictionService>> services;
  for (const auto& s : specs) {
    services.push_back(
        std::make_shared<backends::PredictionService>(make_backend(s, task), cache, clock, opts));
  }
  return services;
}

void write_report(const audit::AuditReport& report, RunDir& run, const std::string& prefix = "") {
  run.json_file(prefix + "report.json", audit::to_json(report));
  run.text(prefix + "accuracy.csv", audit::accuracy_table_csv(report));
  run.text(prefix + "disparity.csv", audit::disparity_table_csv(report));
  run.text(prefix + "groups.csv", audit::groups_csv(report));
}

model::Task task_of(const std::string& s) {
  try {
    return model::parse_task(s);
  } catch (const Error& e) {
    fail(ErrorCode::InvalidArgument, e.what());
  }
}

mitigation::AnchorPolicy anchors_of(const std::string& s) {
  if (s == "per-gender-country") return mitigation::AnchorPolicy::PerGenderCountry;
  if (s == "all-identities") return mitigation::AnchorPolicy::AllIdentities;
  fail(ErrorCode::InvalidArgument, "anchors must be per-gender-country or all-identities");
}

std::string format_score(double v) { return audit::format2(v); }

// --- Shared option groups -------------------------------------------------------------

struct Common {
  std::string out;
  std::string cache = "frsaudit-cache";
  std::uint64_t seed = 0;
  std::string config;
};

struct TrainingFlags {
  double lr = 1e-5;
  int epochs = 0;  // 0: scheme default
  int batch = 1;
  int repeats = 1;
  double w_triplet = 0.8;
  double w_bce = 0.2;

  mitigation::TrainingConfig config(mitigation::TrainingConfig base, std::uint64_t seed) const {
    base.learning_rate = lr;
    if (epochs > 0) base.epochs = epochs;
    base.batch_size = batch;
    base.repeats = repeats;
    base.loss_mix = {w_triplet, w_bce};
    base.seed = seed;
    base.validate();
    return base;
  }
};

void add_training_flags(CLI::App* app, Layers& layers, TrainingFlags& t) {
  layers.add(app->add_option("--lr", t.lr, "Adam learning rate")->capture_default_str(), "lr");
  layers.add(app->add_option("--epochs", t.epochs, "Epochs (0 keeps the scheme default)")
                 ->capture_default_str(),
             "epochs");
  layers.add(app->add_option("--batch", t.batch, "Batch size")->capture_default_str(), "batch");
  layers.add(app->add_option("--repeats", t.repeats, "Independent repeats (seeds derived from --seed)")
                 ->capture_default_str(),
             "repeats");
  layers.add(app->add_option("--w-triplet", t.w_triplet, "Triplet loss weight")->capture_default_str(),
             "w-triplet");
  layers.add(app->add_option("--w-bce", t.w_bce, "Cross-entropy loss weight")->capture_default_str(),
             "w-bce");
}

/// Trains `repeats` times; writes each checkpoint, the step log and, when a
/// holdout is given, before/after reports.
template <class TrainFn>
void train_and_evaluate(RunDir& run, const model::Checkpoint& start,
                        const mitigation::TrainingConfig& cfg, const Manifest* holdout,
                        const ImageSource* holdout_source, bool by_country, TrainFn train) {
  std::vector<json> log;
  std::vector<audit::AuditReport> after;
  const auto seeds = mitigation::repeat_seeds(cfg.seed, cfg.repeats);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    auto c = cfg;
    c.seed = seeds[i];
    run.seed("repeat" + std::to_string(i), seeds[i]);
    const mitigation::TrainingResult r = train(c);
    for (const auto& e : r.epochs) {
      json j = mitigation::to_json(e);
      j["repeat"] = i;
      log.push_back(std::move(j));
    }
    model::save_checkpoint(r.checkpoint, run.file("checkpoint-" + std::to_string(i) + ".ckpt"));
    if (holdout != nullptr) {
      after.push_back(mitigation::evaluate(r.checkpoint, *holdout, *holdout_source, by_country));
    }
  }
  run.lines("run_log.jsonl", log);
  if (holdout != nullptr) {
    write_report(mitigation::evaluate(start, *holdout, *holdout_source, by_country), run,
                 "baseline_");
    write_report(mitigation::mean_report(after), run);
  }
}

// --- Subcommands -------------------------------------------------------------------

void cmd_ingest(const Common& c, RunDir& run, const std::string& images, const std::string& labels,
                bool lenient) {
  (void)c;
  run.input(labels);
  IngestOptions opts;
  opts.strict = !lenient;
  opts.provenance = "ingest " + fs::path(images).generic_string();
  const IngestResult r = ingest(images, labels, CountryRegistry::canonical(), opts);
  std::vector<json> issues;
  for (const auto& i : r.issues) {
    issues.push_back({{"code", to_string(i.code)}, {"file", i.file}, {"detail", i.detail}});
  }
  run.lines("issues.jsonl", issues);
  save_run_manifest(r.manifest, fs::absolute(images), run, "manifest.json");
  std::cout << "ingested " << r.manifest.records.size() << " records, " << issues.size()
            << " issues\n";
}

void cmd_variants(const Common& c, RunDir& run, const std::string& corpus_path,
                  const std::vector<std::string>& kind_specs, const std::string& landmarks) {
  const Corpus corpus = open_corpus(corpus_path, run);
  const auto kinds = parse_kinds(kind_specs);
  if (kinds.empty()) fail(ErrorCode::InvalidArgument, "--kinds is empty");
  std::unique_ptr<LandmarkProvider> provider;
  if (landmarks.empty()) {
    provider = std::make_unique<TemplateLandmarkProvider>();
  } else {
    run.input(landmarks);
    provider = std::make_unique<FileLandmarkProvider>(landmarks);
  }
  FileImageSource source(corpus.base);
  DirectoryVariantSink sink(run.staging() / "images");
  const VariantRun vr = generate_variants(corpus.manifest.filter_variant("ORIG"), kinds, c.seed,
                                          source, sink, *provider);
  std::vector<json> log;
  for (const auto& e : vr.log) log.push_back(to_json_line(e));
  run.lines("variants_log.jsonl", log);
  // Generated refs are relative to images/, originals to the corpus base.
  Manifest out = vr.manifest;
  for (auto& r : out.records) {
    const fs::path from = r.variant.is_orig() ? corpus.base : run.final_path() / "images";
    r.image_ref = fs::relative(fs::absolute(from / r.image_ref), run.final_path()).generic_string();
  }
  save_manifest(out, run.file("manifest.json"));
  std::cout << "generated " << vr.log.size() - vr.failures() << " variant images, "
            << vr.failures() << " failures\n";
}

int cmd_audit(const Common& c, RunDir& run, const std::string& corpus_path,
              const std::vector<std::string>& backend_specs, const std::string& task,
              bool by_country, const std::vector<std::string>& variant_filter, int balanced,
              int samples, int parallelism) {
  const Corpus corpus = open_corpus(corpus_path, run);
  Manifest m = corpus.manifest;
  if (!variant_filter.empty()) {
    Manifest kept;
    kept.provenance = m.provenance;
    for (const auto& tag : variant_filter) {
      const auto part = m.filter_variant(tag);
      kept.records.insert(kept.records.end(), part.records.begin(), part.records.end());
    }
    m = std::move(kept);
  }
  auto services = make_services(backend_specs, task_of(task), c.cache, parallelism);
  FileImageSource source(corpus.base);
  audit::AuditOptions opts{by_country};
  const audit::AuditReport report =
      balanced > 0
          ? audit::balanced_resample_audit(m, services, source, balanced, samples, c.seed, opts)
          : audit::run_audit(m, services, source, opts);
  write_report(report, run);
  std::vector<json> calls;
  for (const auto& s : services) {
    for (const auto& e : s->call_log()) calls.push_back(backends::to_json_line(e));
  }
  run.lines("calls.jsonl", calls);

  bool aborted = false;
  for (const auto& name : report.backend_names()) {
    const auto all = report.aggregate({name, std::nullopt, std::nullopt, std::nullopt});
    std::cout << name << ": accuracy " << format_score(all.accuracy()) << " over " << all.n
              << " records\n";
  }
  for (const auto& st : report.backends) {
    if (st.aborted) {
      aborted = true;
      print_error(kExitBackend, "BackendAborted", st.descriptor.name + ": " + st.reason);
    }
  }
  return aborted ? kExitBackend : 0;
}

void cmd_holdout(const Common& c, RunDir& run, const std::string& corpus_path, int per_country) {
  const Corpus corpus = open_corpus(corpus_path, run);
  SplitSpec spec;
  spec.per_country_total = per_country;
  const HoldoutSplit split = build_holdout(corpus.manifest, spec, c.seed);
  save_run_manifest(split.holdout, corpus.base, run, "holdout.json");
  save_run_manifest(split.pool, corpus.base, run, "pool.json");
  std::cout << "holdout " << split.holdout.records.size() << " records, pool "
            << split.pool.records.size() << "\n";
}

void cmd_kshot(const Common& c, RunDir& run, const std::string& pool_path, int k,
               double adversarial_fraction, const std::string& adversarial) {
  const Corpus pool = open_corpus(pool_path, run);
  const auto adv = parse_kinds({adversarial}).front();
  const Manifest shots = sample_kshot(pool.manifest, k, adversarial_fraction, adv, c.seed);
  save_run_manifest(shots, pool.base, run, "shots.json");
  std::cout << "sampled " << shots.records.size() << " shots\n";
}

struct TrainInputs {
  std::string checkpoint;
  std::string holdout;
  bool by_country = false;
};

void cmd_train_fewshot(const Common& c, RunDir& run, const TrainInputs& in,
                       const std::string& shots_path, const TrainingFlags& flags) {
  if (in.checkpoint.empty()) fail(ErrorCode::InvalidArgument, "--checkpoint is required");
  run.input(in.checkpoint);
  const model::Checkpoint start = model::load_checkpoint(in.checkpoint);
  const Corpus shots = open_corpus(shots_path, run);
  FileImageSource source(shots.base);
  const auto cfg = flags.config(mitigation::TrainingConfig::few_shot(), c.seed);
  std::optional<Corpus> holdout;
  std::optional<FileImageSource> holdout_source;
  if (!in.holdout.empty()) {
    holdout = open_corpus(in.holdout, run);
    holdout_source.emplace(holdout->base);
  }
  train_and_evaluate(run, start, cfg, holdout ? &holdout->manifest : nullptr,
                     holdout_source ? &*holdout_source : nullptr, in.by_country,
                     [&](const mitigation::TrainingConfig& rc) {
                       return mitigation::finetune_kshot(start, shots.manifest, source, rc);
                     });
  run.json_file("training_config.json", cfg);
}

mitigation::TripletSpec triplet_from_flags(const std::string& positive, double p, double margin,
                                           const std::string& anchors) {
  mitigation::TripletSpec spec;
  spec.positive = parse_kinds({positive}).front();
  spec.opposite_gender_probability = p;
  spec.margin = margin;
  spec.anchors = anchors_of(anchors);
  spec.validate();
  return spec;
}

void cmd_train_contrastive(const Common& c, RunDir& run, const TrainInputs& in,
                           const std::string& pool_path, const mitigation::TripletSpec& spec,
                           const TrainingFlags& flags) {
  if (in.checkpoint.empty()) fail(ErrorCode::InvalidArgument, "--checkpoint is required");
  run.input(in.checkpoint);
  const model::Checkpoint start = model::load_checkpoint(in.checkpoint);
  const Corpus pool = open_corpus(pool_path, run);
  FileImageSource source(pool.base);
  const auto cfg = flags.config(mitigation::TrainingConfig::contrastive(), c.seed);
  std::optional<Corpus> holdout;
  std::optional<FileImageSource> holdout_source;
  if (!in.holdout.empty()) {
    holdout = open_corpus(in.holdout, run);
    holdout_source.emplace(holdout->base);
  }
  train_and_evaluate(run, start, cfg, holdout ? &holdout->manifest : nullptr,
                     holdout_source ? &*holdout_source : nullptr, in.by_country,
                     [&](const mitigation::TrainingConfig& rc) {
                       return mitigation::contrastive_train(start, pool.manifest, source, spec, rc);
                     });
  run.json_file("training_config.json", cfg);
  run.json_file("triplet_spec.json", spec);
}

void cmd_train_country(const Common& c, RunDir& run, const TrainInputs& in,
                       const std::string& stage1_path, const std::string& stage2_path,
                       const std::string& scheme_name, const mitigation::TripletSpec& spec,
                       const TrainingFlags& flags) {
  if (in.checkpoint.empty()) fail(ErrorCode::InvalidArgument, "--checkpoint is required");
  const auto scheme = [&] {
    try {
      return mitigation::parse_scheme(scheme_name);
    } catch (const Error& e) {
      fail(ErrorCode::InvalidArgument, e.what());
    }
  }();
  run.input(in.checkpoint);
  const model::Checkpoint start = model::load_checkpoint(in.checkpoint);
  const Corpus stage1 = open_corpus(stage1_path, run);
  const Corpus stage2 = open_corpus(stage2_path, run);
  // Both stages read through absolute refs so one source serves both.
  const Manifest s1 = rebase(stage1.manifest, stage1.base, "/");
  const Manifest s2 = rebase(stage2.manifest, stage2.base, "/");
  auto absolutize = [](Manifest m) {
    for (auto& r : m.records) r.image_ref = (fs::path("/") / r.image_ref).lexically_normal().string();
    return m;
  };
  const Manifest a1 = absolutize(s1), a2 = absolutize(s2);
  FileImageSource source("/");
  const auto base = scheme == mitigation::TwoStageScheme::ContrastiveThenContrastive
                        ? mitigation::TrainingConfig::contrastive()
                        : mitigation::TrainingConfig::few_shot();
  const auto cfg = flags.config(base, c.seed);
  std::optional<Corpus> holdout;
  std::optional<FileImageSource> holdout_source;
  if (!in.holdout.empty()) {
    holdout = open_corpus(in.holdout, run);
    holdout_source.emplace(holdout->base);
  }
  train_and_evaluate(run, start, cfg, holdout ? &holdout->manifest : nullptr,
                     holdout_source ? &*holdout_source : nullptr, true,
                     [&](const mitigation::TrainingConfig& rc) {
                       return mitigation::two_stage_country(start, a1, a2, source, scheme, rc, rc,
                                                            spec);
                     });
  run.json_file("training_config.json", cfg);
}

void cmd_experiment(RunDir& run, const std::string& spec_path) {
  run.input(spec_path);
  std::ifstream in(spec_path);
  if (!in) fail(ErrorCode::Io, "cannot open " + spec_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("experiment spec: ") + e.what());
  }
  mitigation::ExperimentSpec spec = mitigation::experiment_from_json(j);
  const fs::path base = fs::absolute(spec_path).parent_path();
  auto resolve = [&](fs::path& p) {
    if (!p.empty() && p.is_relative()) p = base / p;
  };
  resolve(spec.checkpoint);
  resolve(spec.pool_manifest);
  resolve(spec.holdout_manifest);
  resolve(spec.stage1_manifest);
  spec.out_dir = run.staging() / "experiment";
  run.seed("training", spec.training_config.seed);
  FileImageSource pool_source(spec.pool_manifest.parent_path());
  FileImageSource holdout_source(spec.holdout_manifest.parent_path());
  const auto result = mitigation::run_experiment(spec, pool_source, holdout_source);
  std::cout << "experiment " << spec.scheme << ": " << result.repeats.size() << " repeats\n";
}

void cmd_explain(const Common& c, RunDir& run, const std::string& checkpoint_path,
                 const std::string& corpus_path, const std::string& target, int limit) {
  (void)c;
  if (checkpoint_path.empty()) fail(ErrorCode::InvalidArgument, "--checkpoint is required");
  run.input(checkpoint_path);
  const model::Checkpoint ckpt = model::load_checkpoint(checkpoint_path);
  const Corpus corpus = open_corpus(corpus_path, run);
  FileImageSource source(corpus.base);
  const auto& cfg = ckpt.network.config();

  std::map<std::string, std::vector<explain::SaliencyMap>> groups;
  std::map<std::string, std::vector<ImageBuffer>> tiles;
  int done = 0;
  for (const auto& r : corpus.manifest.records) {
    if (limit > 0 && done >= limit) break;
    const ImageBuffer img = source.load(r);
    const model::Tensor input = model::to_input(img, cfg);
    int cls = 0;
    if (target == "truth") {
      cls = cfg.label_index(backends::truth_label(r, cfg.task));
    } else if (target == "predicted") {
      const auto p = ckpt.network.predict(input);
      cls = static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
    } else {
      cls = cfg.label_index(target);
    }
    const auto map = explain::gradcam(ckpt.network, input, cls, r.record_id, img.width(),
                                      img.height());
    const std::string group = std::string(to_string(r.region)) + "-" +
                              std::string(to_string(r.gender)) + "-" + r.variant.tag();
    const std::string stem = r.identity_id + "_" + r.variant.tag();
    save_png(explain::heat_overlay(img, map), run.file("maps/" + stem + ".png"));
    explain::write_npz(run.file("maps/" + stem + ".npz"), map);
    tiles[group].push_back(explain::heat_overlay(img, map));
    groups[group].push_back(map);
    ++done;
  }
  json zones = json::object();
  std::vector<ImageBuffer> grid;
  for (const auto& [name, maps] : groups) {
    const auto mean = explain::group_average_map(maps, name);
    explain::write_npz(run.file("groups/" + name + ".npz"), mean);
    zones[name] = explain::to_json(explain::region_profile(mean));
    zones[name]["count"] = mean.count;
    grid.insert(grid.end(), tiles[name].begin(), tiles[name].begin() +
                                                     std::min<std::ptrdiff_t>(4, tiles[name].size()));
  }
  run.json_file("zones.json", zones);
  if (!grid.empty()) save_png(explain::compose_grid(grid, 4), run.file("grid.png"));
  std::cout << "explained " << done << " records in " << groups.size() << " groups\n";
}

void cmd_report(RunDir& run, const std::string& report_path) {
  run.input(report_path);
  std::ifstream in(report_path);
  if (!in) fail(ErrorCode::Io, "cannot open " + report_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(ErrorCode::BadManifest, std::string("report: ") + e.what());
  }
  const audit::AuditReport report = audit::report_from_json(j);
  run.text("accuracy.csv", audit::accuracy_table_csv(report));
  run.text("disparity.csv", audit::disparity_table_csv(report));
  json stability = json::object();
  for (const auto& name : report.backend_names()) {
    run.text("chart-" + name + ".svg", audit::bar_chart_svg(report, name));
    try {
      stability[name] = audit::variant_stability(report, name);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::InsufficientCells) throw;
      stability[name] = nullptr;
    }
  }
  run.json_file("stability.json", stability);
  std::cout << "report for " << report.backend_names().size() << " backends\n";
}

// --- Toy reproductions ----------------------------------------------------------------

// Seed 0 selects the defaults used by the acceptance run: 1 for the gender
// toys and 2 for the country toy, for both the corpus and training.
void toy_mitigation(RunDir& run, std::uint64_t seed, int k) {
  if (seed == 0) seed = 1;
  const auto setup = toy::gender_setup(seed);
  std::string csv = "stage,male,female,disparity\n";
  const auto cfg = toy::finetune_preset(seed);
  const auto ex = toy::kshot_experiment(setup, k, cfg);
  auto row = [&](const std::string& name, const toy::GenderScore& s) {
    csv += name + "," + format_score(s.male) + "," + format_score(s.female) + "," +
           format_score(s.disparity()) + "\n";
  };
  row("pretrained", ex.before);
  for (std::size_t i = 0; i < ex.runs.size(); ++i) row("repeat-" + std::to_string(i), ex.runs[i].after);
  row(std::to_string(k) + "-shot mean", ex.mean_after);
  const double reduction = 1.0 - ex.mean_after.disparity() / ex.before.disparity();
  run.text("mitigation.csv", csv);
  run.json_file("mitigation.json", {{"k", k},
                                    {"training_config", cfg},
                                    {"before_disparity", ex.before.disparity()},
                                    {"after_disparity", ex.mean_after.disparity()},
                                    {"relative_reduction", reduction}});
  std::cout << csv << "relative disparity reduction " << format_score(100 * reduction) << "%\n";
}

void toy_contrastive(RunDir& run, std::uint64_t seed) {
  if (seed == 0) seed = 1;
  const auto setup = toy::gender_setup(seed);
  const auto cfg = toy::contrastive_preset(seed);
  const auto spec = toy::triplet_preset();
  const auto ex = toy::contrastive_experiment(setup, spec, cfg);
  std::string csv = "stage,male,female,disparity,satisfaction\n";
  csv += "pretrained," + format_score(ex.before.male) + "," + format_score(ex.before.female) + "," +
         format_score(ex.before.disparity()) + ",\n";
  for (std::size_t i = 0; i < ex.runs.size(); ++i) {
    const auto& r = ex.runs[i];
    csv += "repeat-" + std::to_string(i) + "," + format_score(r.after.male) + "," +
           format_score(r.after.female) + "," + format_score(r.after.disparity()) + "," +
           format_score(100 * r.final_satisfaction) + "\n";
  }
  csv += "mean," + format_score(ex.mean_after.male) + "," + format_score(ex.mean_after.female) +
         "," + format_score(ex.mean_after.disparity()) + "," +
         format_score(100 * ex.mean_final_satisfaction) + "\n";
  run.text("contrastive.csv", csv);
  run.json_file("contrastive.json",
                {{"training_config", cfg}, {"triplet_spec", spec},
                 {"mean_final_satisfaction", ex.mean_final_satisfaction}});
  std::cout << csv;
}

void toy_country(RunDir& run, std::uint64_t seed) {
  if (seed == 0) seed = 2;
  const auto setup = toy::country_setup(seed);
  const auto ft = toy::finetune_preset(seed);
  const auto ct = toy::contrastive_preset(seed);
  const auto ex = toy::country_experiment(setup, ft, ct, toy::triplet_preset());
  std::string csv = "scheme,macro_accuracy\n";
  csv += "pretrained," + format_score(ex.before) + "\n";
  csv += "finetune-then-finetune," + format_score(ex.mean_finetune) + "\n";
  csv += "contrastive-then-contrastive," + format_score(ex.mean_contrastive) + "\n";
  run.text("country.csv", csv);
  run.json_file("country.json", {{"finetune", ex.finetune}, {"contrastive", ex.contrastive}});
  std::cout << csv;
}

/// The bundled tiny corpus: one male and one female identity per country.
void toy_tiny(RunDir& run, std::uint64_t seed) {
  toy::GenderCorpusOptions o;
  o.width = 48;
  o.height = 64;
  o.males_per_country = 1;
  o.females_per_country = 1;
  o.variants = {};
  o.seed = seed == 0 ? 1 : seed;
  const toy::ToyCorpus corpus = toy::gender_corpus(o);
  std::string csv = "filename,identity_id,name,country,gender\n";
  for (const auto& r : corpus.manifest.records) {
    const std::string file = r.identity_id + ".png";
    save_png(corpus.images.load(r), run.file("images/" + file));
    csv += file + "," + r.identity_id + "," + r.identity_id + "," + r.country + "," +
           std::string(to_string(r.gender)) + "\n";
  }
  run.text("labels.csv", csv);
  std::cout << "wrote " << corpus.manifest.records.size() << " images\n";
}

/// Writes the toy gender corpus (with RGB0.3 variants) to disk together with
/// its holdout/pool split and the shortcut-pretrained checkpoint, so the
/// training subcommands can be exercised end to end.
void toy_corpus(RunDir& run, std::uint64_t seed) {
  const auto setup = toy::gender_setup(seed == 0 ? 1 : seed);
  Manifest all = setup.target.manifest;
  for (auto& r : all.records) {
    const std::string rel = "images/" + r.variant.tag() + "/" + r.identity_id + ".png";
    save_png(setup.target.images.load(r), run.file(rel));
    r.image_ref = rel;
  }
  auto pick = [&](const Manifest& part) {
    Manifest m;
    m.provenance = part.provenance;
    for (const auto& r : part.records) m.records.push_back(*all.find(r.record_id));
    return m;
  };
  save_manifest(all, run.file("manifest.json"));
  save_manifest(pick(setup.split.holdout), run.file("holdout.json"));
  save_manifest(pick(setup.split.pool), run.file("pool.json"));
  model::save_checkpoint(setup.pretrained, run.file("pretrained.ckpt"));
  std::cout << "wrote " << all.records.size() << " records\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Face recognition fairness audit and bias-mitigation toolkit"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Help for every subcommand");

  Common common;
  Layers layers;
  std::vector<std::string> args(argv + 1, argv + argc);

  auto add_common = [&](CLI::App* sub, bool needs_cache = false) {
    layers.add(sub->add_option("--out,-o", common.out, "Run directory (replaced atomically)"), "out");
    layers.add(sub->add_option("--seed", common.seed, "Master seed")->capture_default_str(), "seed");
    sub->add_option("--config", common.config,
                    "JSON settings file; top-level keys or a per-subcommand object")
        ->envname("FRSAUDIT_CONFIG");
    if (needs_cache) {
      layers.add(sub->add_option("--cache", common.cache, "Prediction cache directory")
                     ->capture_default_str(),
                 "cache");
    }
  };

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Build a manifest from an image folder and labels CSV");
  std::string ingest_images, ingest_labels;
  bool ingest_lenient = false;
  add_common(ingest_cmd);
  layers.add(ingest_cmd->add_option("--images", ingest_images, "Image directory"), "images");
  layers.add(ingest_cmd->add_option("--labels", ingest_labels,
                                    "CSV with filename,identity_id,name,country,gender"),
             "labels");
  ingest_cmd->add_flag("--lenient", ingest_lenient, "Report bad rows as issues instead of failing");

  // variants
  auto* variants_cmd = app.add_subcommand("variants", "Generate perturbed image variants");
  std::string corpus_path;
  std::vector<std::string> kinds{"grey"};
  std::string landmarks;
  add_common(variants_cmd);
  layers.add(variants_cmd->add_option("--corpus", corpus_path,
                                      "Manifest file, or directory with manifest.json or labels.csv"),
             "corpus");
  layers.add(variants_cmd->add_option("--kinds", kinds, "grey, mask, rgb[:a], spread[:r]")
                 ->delimiter(',')
                 ->capture_default_str(),
             "kinds");
  layers.add(variants_cmd->add_option("--landmarks", landmarks, "JSON landmark file for masks"),
             "landmarks");

  // audit
  auto* audit_cmd = app.add_subcommand("audit", "Score backends on a corpus per demographic group");
  std::vector<std::string> backend_specs;
  std::string task = "gender";
  bool by_country = false;
  std::vector<std::string> variant_filter;
  int balanced = 0, samples = 10, parallelism = 4;
  add_common(audit_cmd, true);
  layers.add(audit_cmd->add_option("--corpus", corpus_path, "Corpus (see variants --help)"), "corpus");
  layers.add(audit_cmd->add_option("--backend,-b", backend_specs,
                                   "stub, stub-male, local:<ckpt>, aws, azure, facepp")
                 ->delimiter(','),
             "backend");
  layers.add(audit_cmd->add_option("--task", task, "gender or country")->capture_default_str(), "task");
  audit_cmd->add_flag("--by-country", by_country, "Group by country as well as region");
  layers.add(audit_cmd->add_option("--variant", variant_filter, "Only these variant tags")
                 ->delimiter(','),
             "variant");
  layers.add(audit_cmd->add_option("--balanced", balanced,
                                   "Gender-balanced resampling: records per gender per cell"),
             "balanced");
  layers.add(audit_cmd->add_option("--samples", samples, "Resampling draws")->capture_default_str(),
             "samples");
  layers.add(audit_cmd->add_option("--parallelism", parallelism, "Concurrent requests per backend")
                 ->capture_default_str(),
             "parallelism");

  // holdout
  auto* holdout_cmd = app.add_subcommand("holdout", "Split a corpus into holdout and pool");
  int per_country = 60;
  add_common(holdout_cmd);
  layers.add(holdout_cmd->add_option("--corpus", corpus_path, "Corpus"), "corpus");
  layers.add(holdout_cmd->add_option("--per-country", per_country, "Holdout identities per country (2:1 M:F)")
                 ->capture_default_str(),
             "per-country");

  // kshot
  auto* kshot_cmd = app.add_subcommand("kshot", "Sample k identities per gender and country");
  int k = 2;
  double adv_frac = 0;
  std::string adversarial = "rgb:0.3";
  add_common(kshot_cmd);
  layers.add(kshot_cmd->add_option("--pool", corpus_path, "Pool manifest"), "pool");
  layers.add(kshot_cmd->add_option("-k", k, "Shots per gender and country")->capture_default_str(), "k");
  layers.add(kshot_cmd->add_option("--adversarial-fraction", adv_frac,
                                   "Fraction of shots replaced by the adversarial variant")
                 ->capture_default_str(),
             "adversarial-fraction");
  layers.add(kshot_cmd->add_option("--adversarial", adversarial, "Adversarial variant kind")
                 ->capture_default_str(),
             "adversarial");

  // training
  TrainInputs train_in;
  TrainingFlags tflags;
  std::string experiment_spec;
  auto add_train = [&](CLI::App* sub) {
    add_common(sub);
    layers.add(sub->add_option("--checkpoint", train_in.checkpoint, "Starting checkpoint"),
               "checkpoint");
    layers.add(sub->add_option("--holdout", train_in.holdout, "Holdout manifest to evaluate on"),
               "holdout");
    sub->add_option("--spec", experiment_spec, "Experiment spec JSON (runs it instead)");
    add_training_flags(sub, layers, tflags);
  };
  auto* fewshot_cmd = app.add_subcommand("train-fewshot", "k-shot fine-tuning");
  add_train(fewshot_cmd);
  layers.add(fewshot_cmd->add_option("--shots", corpus_path, "Shot manifest"), "shots");
  fewshot_cmd->add_flag("--by-country", train_in.by_country, "Evaluate per country");

  std::string positive = "rgb:0.3", anchors = "per-gender-country";
  double p_opposite = 0.85, margin = 0.2;
  auto add_triplet = [&](CLI::App* sub) {
    layers.add(sub->add_option("--positive", positive, "Positive variant kind")->capture_default_str(),
               "positive");
    layers.add(sub->add_option("--p-opposite", p_opposite, "Opposite-gender negative probability")
                   ->capture_default_str(),
               "p-opposite");
    layers.add(sub->add_option("--margin", margin, "Triplet margin")->capture_default_str(), "margin");
    layers.add(sub->add_option("--anchors", anchors, "per-gender-country or all-identities")
                   ->capture_default_str(),
               "anchors");
  };
  auto* contrastive_cmd = app.add_subcommand("train-contrastive", "Triplet contrastive fine-tuning");
  add_train(contrastive_cmd);
  add_triplet(contrastive_cmd);
  layers.add(contrastive_cmd->add_option("--pool", corpus_path, "Triplet pool manifest"), "pool");
  contrastive_cmd->add_flag("--by-country", train_in.by_country, "Evaluate per country");

  auto* country_cmd = app.add_subcommand("train-country", "Two-stage country-task training");
  std::string stage1_path, scheme = "contrastive-then-contrastive";
  add_train(country_cmd);
  add_triplet(country_cmd);
  layers.add(country_cmd->add_option("--stage1", stage1_path, "Stage-1 manifest"), "stage1");
  layers.add(country_cmd->add_option("--stage2", corpus_path, "Stage-2 manifest"), "stage2");
  layers.add(country_cmd->add_option("--scheme", scheme,
                                     "finetune-then-finetune or contrastive-then-contrastive")
                 ->capture_default_str(),
             "scheme");

  // explain
  auto* explain_cmd = app.add_subcommand("explain", "Grad-CAM maps, group averages and zone profiles");
  std::string explain_ckpt, explain_target = "truth";
  int explain_limit = 0;
  add_common(explain_cmd);
  layers.add(explain_cmd->add_option("--checkpoint", explain_ckpt, "Model checkpoint"), "checkpoint");
  layers.add(explain_cmd->add_option("--corpus", corpus_path, "Corpus"), "corpus");
  layers.add(explain_cmd->add_option("--target", explain_target, "truth, predicted or a class label")
                 ->capture_default_str(),
             "target");
  layers.add(explain_cmd->add_option("--limit", explain_limit, "Explain at most this many records"),
             "limit");

  // report
  auto* report_cmd = app.add_subcommand("report", "Tables and bar charts from an audit report");
  std::string report_path;
  add_common(report_cmd);
  layers.add(report_cmd->add_option("--report", report_path, "report.json from audit"), "report");

  // toy-repro
  auto* toy_cmd = app.add_subcommand("toy-repro", "Run the synthetic toy experiments");
  std::string toy_what;
  add_common(toy_cmd);
  toy_cmd->add_option("experiment", toy_what, "mitigation, contrastive, country, all, tiny or corpus")
      ->required()
      ->check(CLI::IsMember({"mitigation", "contrastive", "country", "all", "tiny", "corpus"}));
  layers.add(toy_cmd->add_option("-k", k, "Shots for mitigation")->capture_default_str(), "k");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(kExitUsage, "UsageError", e.what());
    return kExitUsage;
  }

  CLI::App* sub = app.get_subcommands().front();
  const std::string name = sub->get_name();
  try {
    json config = json::object();
    if (!common.config.empty()) {
      std::ifstream in(common.config);
      if (!in) fail(ErrorCode::InvalidArgument, "cannot open config " + common.config);
      try {
        in >> config;
      } catch (const json::exception& e) {
        fail(ErrorCode::InvalidArgument, std::string("config: ") + e.what());
      }
    }
    try {
      layers.resolve(sub, config);
    } catch (const CLI::ParseError& e) {
      fail(ErrorCode::InvalidArgument, e.what());
    }

    RunDir run(common.out, name, args);
    run.seed("master", common.seed);
    if (!common.config.empty()) run.input(common.config);
    int code = 0;
    if (name == "ingest") {
      if (ingest_images.empty() || ingest_labels.empty()) {
        fail(ErrorCode::InvalidArgument, "--images and --labels are required");
      }
      cmd_ingest(common, run, ingest_images, ingest_labels, ingest_lenient);
    } else if (name == "variants") {
      run.setting("kinds", kinds);
      cmd_variants(common, run, corpus_path, kinds, landmarks);
    } else if (name == "audit") {
      run.setting("backends", backend_specs);
      run.setting("cache", fs::absolute(common.cache).string());
      run.setting("task", task);
      run.setting("by_country", by_country);
      if (balanced > 0) run.setting("balanced", {{"per_gender", balanced}, {"samples", samples}});
      code = cmd_audit(common, run, corpus_path, backend_specs, task, by_country, variant_filter,
                       balanced, samples, parallelism);
    } else if (name == "holdout") {
      cmd_holdout(common, run, corpus_path, per_country);
    } else if (name == "kshot") {
      run.setting("k", k);
      cmd_kshot(common, run, corpus_path, k, adv_frac, adversarial);
    } else if (name == "train-fewshot" || name == "train-contrastive" || name == "train-country") {
      if (!experiment_spec.empty()) {
        cmd_experiment(run, experiment_spec);
      } else if (name == "train-fewshot") {
        cmd_train_fewshot(common, run, train_in, corpus_path, tflags);
      } else {
        const auto spec = triplet_from_flags(positive, p_opposite, margin, anchors);
        if (name == "train-contrastive") {
          cmd_train_contrastive(common, run, train_in, corpus_path, spec, tflags);
        } else {
          cmd_train_country(common, run, train_in, stage1_path, corpus_path, scheme, spec, tflags);
        }
      }
    } else if (name == "explain") {
      cmd_explain(common, run, explain_ckpt, corpus_path, explain_target, explain_limit);
    } else if (name == "report") {
      if (report_path.empty()) fail(ErrorCode::InvalidArgument, "--report is required");
      cmd_report(run, report_path);
    } else if (name == "toy-repro") {
      run.setting("experiment", toy_what);
      if (toy_what == "mitigation" || toy_what == "all") toy_mitigation(run, common.seed, k);
      if (toy_what == "contrastive" || toy_what == "all") toy_contrastive(run, common.seed);
      if (toy_what == "country" || toy_what == "all") toy_country(run, common.seed);
      if (toy_what == "tiny") toy_tiny(run, common.seed);
      if (toy_what == "corpus") toy_corpus(run, common.seed);
    }
    run.commit();
    return code;
  } catch (const Error& e) {
    const int code = exit_code_for(e.code());
    print_error(code, to_string(e.code()), e.what());
    return code;
  } catch (const fs::filesystem_error& e) {
    print_error(kExitData, "Io", e.what());
    return kExitData;
  } catch (const std::exception& e) {
    print_error(kExitData, "Internal", e.what());
    return kExitData;
  }
}
