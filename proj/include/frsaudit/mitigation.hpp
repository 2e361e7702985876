#pragma once

// Bias-mitigation trainers: k-shot fine-tuning, triplet contrastive
// fine-tuning, and the two-stage scheme used for the country task.
//
// Trainers take their checkpoint by const reference and return a new one.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "frsaudit/audit.hpp"
#include "frsaudit/corpus.hpp"
#include "frsaudit/model.hpp"

namespace frsaudit::mitigation {

struct LossMix {
  double triplet = 0.8;
  double bce = 0.2;
};

struct TrainingConfig {
  double learning_rate = 1e-5;
  int epochs = 10;
  LossMix loss_mix;
  int batch_size = 1;
  std::uint64_t seed = 0;
  int repeats = 3;

  static TrainingConfig few_shot() { return {}; }
  static TrainingConfig contrastive() {
    TrainingConfig c;
    c.epochs = 40;
    return c;
  }
  model::AdamConfig adam() const;
  /// Throws InvalidArgument.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainingConfig& c);
void from_json(const nlohmann::json& j, TrainingConfig& c);

enum class AnchorPolicy { PerGenderCountry, AllIdentities };
enum class NegativePolicy { OppositeGender, OtherCountry };

struct TripletSpec {
  VariantKind positive = VariantKind::rgb(0.3);
  /// Probability that a negative has the anchor's opposite gender. Ignored for
  /// OtherCountry negatives.
  double opposite_gender_probability = 0.85;
  double margin = 0.2;
  AnchorPolicy anchors = AnchorPolicy::PerGenderCountry;
  NegativePolicy negatives = NegativePolicy::OppositeGender;

  void validate() const;
};

void to_json(nlohmann::json& j, const TripletSpec& s);
void from_json(const nlohmann::json& j, TripletSpec& s);

struct Triplet {
  FaceRecord anchor;
  FaceRecord positive;
  FaceRecord negative;
};

/// `rounds` independent anchor draws, each covering every anchor cell (or
/// every identity). Triplet t draws from rng::keyed(seed, t), so the result is
/// a pure function of (pool, spec, seed, rounds). Throws MissingVariant naming
/// the first ORIG identity without the positive variant, and InsufficientGroup
/// when an anchor has no admissible negative.
std::vector<Triplet> build_triplets(const Manifest& pool, const TripletSpec& spec,
                                    std::uint64_t seed, int rounds = 1);

/// max(0, |ea-ep|^2 - |ea-en|^2 + margin). Throws DimMismatch.
double triplet_loss(std::span<const double> ea, std::span<const double> ep,
                    std::span<const double> en, double margin);
/// Same, also writing the gradient w.r.t. each embedding (zero when the hinge
/// is inactive).
double triplet_loss(std::span<const double> ea, std::span<const double> ep,
                    std::span<const double> en, double margin, std::span<double> d_ea,
                    std::span<double> d_ep, std::span<double> d_en);

struct TripletExample {
  model::Tensor anchor, positive, negative;
  int label = 0;  // anchor class
};

struct LossTerms {
  double triplet = 0;
  double bce = 0;
  double combined = 0;
  /// Fraction of triplets whose hinge is zero.
  double satisfied = 0;
};

/// Batch-mean combined loss w.triplet * L_triplet + w.bce * L_bce, with the
/// BCE term on anchors only. The mean gradient is accumulated into `grad`
/// (may be empty).
LossTerms combined_loss(const model::Network& net, std::span<const TripletExample> batch,
                        const LossMix& mix, double margin, std::span<double> grad);

/// Input tensors by record id, loaded once.
class InputCache {
 public:
  InputCache(const ImageSource& source, const model::ClassifierConfig& config)
      : source_(source), config_(config) {}
  const model::Tensor& get(const FaceRecord& record);

 private:
  const ImageSource& source_;
  model::ClassifierConfig config_;
  std::map<std::string, model::Tensor> tensors_;
};

struct StepLog {
  std::string stage;
  int epoch = 0;
  int step = 0;
  double triplet = 0;
  double bce = 0;
  double combined = 0;
  double satisfied = 0;
};

struct EpochLog {
  std::string stage;
  int epoch = 0;
  double triplet = 0;
  double bce = 0;
  double combined = 0;
  double satisfaction = 0;  // contrastive only
};

nlohmann::json to_json(const StepLog& s);
nlohmann::json to_json(const EpochLog& e);

struct TrainingResult {
  model::Checkpoint checkpoint;
  std::vector<StepLog> steps;
  std::vector<EpochLog> epochs;
};

/// Fine-tunes on the shot records with mean cross-entropy. Each epoch visits
/// the shots in a seeded order. Throws LabelMismatch, NonFiniteLoss.
TrainingResult finetune_kshot(const model::Checkpoint& checkpoint, const Manifest& shots,
                              const ImageSource& source, const TrainingConfig& config,
                              const std::string& stage = "kshot");

/// Each epoch draws a fresh set of triplets from `pool` and steps on the
/// combined loss. Throws as build_triplets, plus NonFiniteLoss.
TrainingResult contrastive_train(const model::Checkpoint& checkpoint, const Manifest& pool,
                                 const ImageSource& source, const TripletSpec& spec,
                                 const TrainingConfig& config,
                                 const std::string& stage = "contrastive");

enum class TwoStageScheme { FinetuneThenFinetune, ContrastiveThenContrastive };
std::string_view to_string(TwoStageScheme s);
TwoStageScheme parse_scheme(std::string_view s);

/// Country-task training in two sequential stages. Contrastive stages use
/// OtherCountry negatives. An empty stage manifest is skipped.
TrainingResult two_stage_country(const model::Checkpoint& checkpoint, const Manifest& stage1,
                                 const Manifest& stage2, const ImageSource& source,
                                 TwoStageScheme scheme, const TrainingConfig& stage1_config,
                                 const TrainingConfig& stage2_config,
                                 const TripletSpec& spec = {});

/// Seeds for the repeat protocol: derive_seed(seed, "repeat", i).
std::vector<std::uint64_t> repeat_seeds(std::uint64_t seed, int repeats);

/// Evaluates a checkpoint on a manifest through the local backend.
audit::AuditReport evaluate(const model::Checkpoint& checkpoint, const Manifest& manifest,
                            const ImageSource& source, bool by_country = false,
                            const std::string& backend_name = "local-cnn");

/// Mean over countries of per-country accuracy.
double macro_accuracy(const audit::AuditReport& report, const std::string& backend);

// --- Experiment spec files ------------------------------------------------------

struct ShotSpec {
  int k = 2;
  double adversarial_fraction = 0.0;
  VariantKind adversarial = VariantKind::rgb(0.3);
};

struct ExperimentSpec {
  model::Task task = model::Task::Gender;
  /// "kshot", "contrastive", "finetune-then-finetune", "contrastive-then-contrastive".
  std::string scheme = "kshot";
  ShotSpec shots;
  TripletSpec triplet_spec;
  TrainingConfig training_config;
  /// Stage-1 settings for two-stage schemes; defaults to training_config.
  std::optional<TrainingConfig> stage1_config;
  std::filesystem::path checkpoint;
  std::filesystem::path pool_manifest;
  std::filesystem::path holdout_manifest;
  /// Stage-1 pool of two-stage schemes.
  std::filesystem::path stage1_manifest;
  std::filesystem::path out_dir;
};

ExperimentSpec experiment_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentSpec& s);

struct RepeatOutcome {
  std::uint64_t seed = 0;
  audit::AuditReport report;
};

struct ExperimentResult {
  audit::AuditReport baseline;
  std::vector<RepeatOutcome> repeats;
  /// Per-group mean over repeats.
  audit::AuditReport mean;
};

/// Loads the manifests and checkpoint named by the spec, runs every repeat,
/// and writes run_log.jsonl, results.json and results CSVs under out_dir.
ExperimentResult run_experiment(const ExperimentSpec& spec, const ImageSource& pool_source,
                                const ImageSource& holdout_source);

/// Per-group mean of accuracies across reports with identical group sets.
audit::AuditReport mean_report(const std::vector<audit::AuditReport>& reports);

}  // namespace frsaudit::mitigation
