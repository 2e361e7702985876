#pragma once

// Synthetic toy corpora and the small-scale experiments run on them.
//
// Faces are tiny drawn images: a skin-toned ellipse on a noisy background,
// with a hair shape that carries the gender signal (side bands for female
// identities) and a tone that follows the country's region. The country
// corpus adds a per-country headwear stripe colour.

#include <cstdint>
#include <string>
#include <vector>

#include "frsaudit/corpus.hpp"
#include "frsaudit/mitigation.hpp"
#include "frsaudit/model.hpp"

namespace frsaudit::toy {

struct ToyCorpus {
  Manifest manifest;
  MemoryImageSource images;
};

struct GenderCorpusOptions {
  int width = 24;
  int height = 32;
  std::vector<std::string> countries = {"AUS", "NZL", "ENG", "RSA", "BAN", "IND", "PAK", "WIN"};
  int males_per_country = 50;
  int females_per_country = 26;
  /// When false, female identities of Global South countries are drawn with a
  /// Global North tone. Pretraining on such a corpus plants a
  /// "dark tone means male" shortcut.
  bool dark_females = true;
  /// Lowest hair strength; each identity draws from [min_hair, 1].
  double min_hair = 0.25;
  /// Probability that a dark-toned identity gets the other gender's hair
  /// shape.
  double dark_hair_flip = 0.0;
  std::vector<VariantKind> variants = {VariantKind::rgb(0.3)};
  std::string id_prefix = "toy";
  std::uint64_t seed = 1;
};

ToyCorpus gender_corpus(const GenderCorpusOptions& options);

struct CountryCorpusOptions {
  int width = 24;
  int height = 32;
  std::vector<std::string> countries = {"AUS", "ENG", "IND", "PAK"};
  int males_per_country = 50;
  int females_per_country = 26;
  /// Standard deviation of the stripe hue around each country's centre.
  double stripe_jitter = 40;
  std::vector<VariantKind> variants = {VariantKind::rgb(0.3)};
  std::string id_prefix = "cty";
  std::uint64_t seed = 2;
};

ToyCorpus country_corpus(const CountryCorpusOptions& options);

/// Three conv blocks and one dense embedding layer sized for toy images.
model::ClassifierConfig toy_config(model::Task task, std::vector<std::string> labels, int width,
                                   int height, std::uint64_t seed);

struct PretrainOptions {
  int epochs = 6;
  int batch_size = 16;
  double learning_rate = 1e-3;
  std::uint64_t seed = 7;
};

/// Plain supervised training on every record of `manifest`, variants included.
model::Checkpoint pretrain(const model::ClassifierConfig& config, const Manifest& manifest,
                           const ImageSource& source, const PretrainOptions& options);

// --- Presets used by the toy reproductions -------------------------------------

/// lr 1e-5, 10 epochs, Adam, batch 1, 3 repeats.
mitigation::TrainingConfig finetune_preset(std::uint64_t seed);
/// lr 1e-5, 40 epochs, 0.8/0.2 loss mix, batch 1, 3 repeats.
mitigation::TrainingConfig contrastive_preset(std::uint64_t seed);
/// RGB0.3 positives, p = 1.0, margin 0.2, every identity anchors once per epoch.
mitigation::TripletSpec triplet_preset();

// --- Gender experiments ----------------------------------------------------------

struct GenderSetup {
  ToyCorpus target;        // evaluation population: every tone x gender
  HoldoutSplit split;      // 480-record holdout and the remaining pool
  model::Checkpoint pretrained;
};

/// Pretrains on a shortcut corpus (no dark-toned females) and splits a fresh
/// target corpus into holdout and pool.
GenderSetup gender_setup(std::uint64_t seed = 1);

struct GenderScore {
  double male = 0;
  double female = 0;
  double disparity() const;
};

GenderScore gender_score(const audit::AuditReport& report, const std::string& backend = "local-cnn");

struct KshotRun {
  std::uint64_t seed = 0;
  GenderScore after;
};

struct KshotExperiment {
  GenderScore before;
  std::vector<KshotRun> runs;
  GenderScore mean_after;
};

KshotExperiment kshot_experiment(const GenderSetup& setup, int k,
                                 const mitigation::TrainingConfig& config);

struct ContrastiveRun {
  std::uint64_t seed = 0;
  GenderScore after;
  double final_satisfaction = 0;
  /// Largest |combined - (wt*Lt + wb*Lbce)| over every logged step.
  double max_decomposition_error = 0;
};

struct ContrastiveExperiment {
  GenderScore before;
  std::vector<ContrastiveRun> runs;
  GenderScore mean_after;
  double mean_final_satisfaction = 0;
};

ContrastiveExperiment contrastive_experiment(const GenderSetup& setup,
                                             const mitigation::TripletSpec& spec,
                                             const mitigation::TrainingConfig& config);

// --- Country experiment ----------------------------------------------------------

struct CountrySetup {
  ToyCorpus stage1;        // auxiliary country-labelled corpus
  ToyCorpus target;
  HoldoutSplit split;
  model::Checkpoint pretrained;
};

CountrySetup country_setup(std::uint64_t seed = 2);

struct CountryExperiment {
  double before = 0;
  std::vector<double> finetune;     // macro accuracy per repeat
  std::vector<double> contrastive;
  double mean_finetune = 0;
  double mean_contrastive = 0;
};

/// Both schemes run with identical seeds; each scheme uses its own config for
/// both stages (the repeat seeds come from `finetune.seed`).
CountryExperiment country_experiment(const CountrySetup& setup,
                                     const mitigation::TrainingConfig& finetune,
                                     const mitigation::TrainingConfig& contrastive,
                                     const mitigation::TripletSpec& spec = {});

}  // namespace frsaudit::toy
