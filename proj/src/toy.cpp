#include "frsaudit/toy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "frsaudit/error.hpp"
#include "frsaudit/rng.hpp"
#include "frsaudit/variants.hpp"

namespace frsaudit::toy {

namespace {

std::uint8_t clamp_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

struct Face {
  double tone = 200;       // skin brightness
  double hair = 1;         // hair strength in [0, 1]
  bool long_hair = false;  // female hair shape
  bool stripe = false;
  double stripe_rgb[3] = {0, 0, 0};
};

ImageBuffer draw(const Face& f, int w, int h, rng::Stream& s) {
  ImageBuffer img(w, h);
  double bg[3];
  const double level = s.uniform(60, 200);
  for (double& c : bg) c = level + s.uniform(-20, 20);
  const double skin[3] = {f.tone, f.tone * 0.82, f.tone * 0.68};
  const double hair[3] = {35, 25, 20};
  const double cx = (w - 1) / 2.0 + s.uniform(-1, 1);
  const double cy = h * 0.55 + s.uniform(-1, 1);
  const double rx = w * 0.3, ry = h * 0.32;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double px[3] = {bg[0], bg[1], bg[2]};
      const double dx = (x - cx) / rx, dy = (y - cy) / ry;
      if (dx * dx + dy * dy <= 1.0) std::copy(skin, skin + 3, px);
      const bool cap = y >= h * 0.12 && y < h * 0.27 && std::abs(x - cx) < rx + 1;
      const double side = std::abs(std::abs(x - cx) - rx);
      const bool bands = f.long_hair && y >= h * 0.2 && y < h * 0.82 && side < 1.6;
      if (cap || bands)
        for (int c = 0; c < 3; ++c) px[c] += f.hair * (hair[c] - px[c]);
      if (f.stripe && y < h * 0.1)
        for (int c = 0; c < 3; ++c) px[c] = f.stripe_rgb[c];
      for (int c = 0; c < 3; ++c) img.at(x, y, c) = clamp_byte(px[c] + s.uniform(-12, 12));
    }
  }
  return img;
}

void add_identity(ToyCorpus& corpus, const std::string& identity, const std::string& country,
                  Gender gender, const ImageBuffer& image,
                  const std::vector<VariantKind>& variants) {
  FaceRecord r;
  r.identity_id = identity;
  r.display_name = identity;
  r.country = country;
  r.region = CountryRegistry::canonical().region_of(country);
  r.gender = gender;
  r.width = image.width();
  r.height = image.height();
  r.variant = VariantKind::orig();
  r.record_id = make_record_id(identity, r.variant);
  r.image_ref = r.record_id;
  corpus.images.put(r.record_id, image);
  corpus.manifest.records.push_back(r);
  static const TemplateLandmarkProvider landmarks;
  for (const auto& v : variants) {
    FaceRecord vr = r;
    vr.variant = v;
    vr.record_id = make_record_id(identity, v);
    vr.image_ref = vr.record_id;
    corpus.images.put(vr.record_id, apply_variant(image, v, vr, landmarks));
    corpus.manifest.records.push_back(vr);
  }
}

double tone_for(Region region, rng::Stream& s) {
  return region == Region::GlobalNorth ? s.uniform(185, 225) : s.uniform(75, 115);
}

}  // namespace

ToyCorpus gender_corpus(const GenderCorpusOptions& o) {
  ToyCorpus corpus;
  corpus.manifest.provenance = "toy gender corpus seed=" + std::to_string(o.seed);
  for (const auto& country : o.countries) {
    const Region region = CountryRegistry::canonical().region_of(country);
    for (const Gender g : kGenders) {
      const int n = g == Gender::Male ? o.males_per_country : o.females_per_country;
      for (int i = 0; i < n; ++i) {
        const std::string id = o.id_prefix + "-" + country + "-" +
                               std::string(g == Gender::Male ? "M" : "F") + std::to_string(i);
        rng::Stream s(rng::derive_seed(o.seed, id));
        Face f;
        const bool dark = region == Region::GlobalSouth && (g == Gender::Male || o.dark_females);
        f.tone = tone_for(dark ? Region::GlobalSouth : Region::GlobalNorth, s);
        f.hair = s.uniform(o.min_hair, 1.0);
        f.long_hair = (g == Gender::Female) != (dark && s.uniform() < o.dark_hair_flip);
        add_identity(corpus, id, country, g, draw(f, o.width, o.height, s), o.variants);
      }
    }
  }
  return corpus;
}

ToyCorpus country_corpus(const CountryCorpusOptions& o) {
  ToyCorpus corpus;
  corpus.manifest.provenance = "toy country corpus seed=" + std::to_string(o.seed);
  // Stripe colour centres spaced around the colour wheel.
  const int nc = static_cast<int>(o.countries.size());
  for (int ci = 0; ci < nc; ++ci) {
    const auto& country = o.countries[ci];
    const Region region = CountryRegistry::canonical().region_of(country);
    const double hue = 2.0 * M_PI * ci / nc;
    for (const Gender g : kGenders) {
      const int n = g == Gender::Male ? o.males_per_country : o.females_per_country;
      for (int i = 0; i < n; ++i) {
        const std::string id = o.id_prefix + "-" + country + "-" +
                               std::string(g == Gender::Male ? "M" : "F") + std::to_string(i);
        rng::Stream s(rng::derive_seed(o.seed, id));
        Face f;
        f.tone = tone_for(region, s);
        f.hair = s.uniform(0.25, 1.0);
        f.long_hair = g == Gender::Female;
        f.stripe = true;
        const double hj = hue + s.uniform(-1, 1) * o.stripe_jitter * M_PI / 180.0;
        for (int c = 0; c < 3; ++c)
          f.stripe_rgb[c] = 128 + 100 * std::cos(hj - 2.0 * M_PI * c / 3.0);
        add_identity(corpus, id, country, g, draw(f, o.width, o.height, s), o.variants);
      }
    }
  }
  return corpus;
}

model::ClassifierConfig toy_config(model::Task task, std::vector<std::string> labels, int width,
                                   int height, std::uint64_t seed) {
  model::ClassifierConfig c;
  c.input_width = width;
  c.input_height = height;
  c.conv_blocks = {{8, 3, 2}, {16, 3, 2}, {32, 3, 2}};
  c.dense = {64};
  c.task = task;
  c.class_labels = std::move(labels);
  c.weight_init_seed = seed;
  c.validate();
  return c;
}

model::Checkpoint pretrain(const model::ClassifierConfig& config, const Manifest& manifest,
                           const ImageSource& source, const PretrainOptions& o) {
  model::Checkpoint ckpt{model::Network::initialized(config), {}};
  auto& net = ckpt.network;
  mitigation::InputCache cache(source, config);
  std::vector<model::Example> examples;
  for (const auto& r : manifest.records) {
    examples.push_back(
        {cache.get(r), config.label_index(backends::truth_label(r, config.task))});
  }
  model::AdamState adam(net.params().size());
  model::AdamConfig adam_cfg;
  adam_cfg.learning_rate = o.learning_rate;
  std::vector<std::size_t> order(examples.size());
  for (int epoch = 0; epoch < o.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng::Stream s(rng::derive_seed(o.seed, "pretrain", std::to_string(epoch)));
    rng::shuffle(std::span(order), s);
    double total = 0;
    for (std::size_t b = 0; b < order.size(); b += o.batch_size) {
      std::vector<model::Example> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + o.batch_size); ++i)
        batch.push_back(examples[order[i]]);
      total += model::train_step(net, batch, adam, adam_cfg).loss * batch.size();
    }
    ckpt.provenance.loss_curve.push_back(total / examples.size());
  }
  ckpt.provenance.epochs = o.epochs;
  ckpt.provenance.dataset_hash = manifest_hash(manifest);
  ckpt.provenance.notes = {{"pretrain_learning_rate", o.learning_rate},
                           {"batch_size", o.batch_size},
                           {"seed", o.seed}};
  return ckpt;
}

mitigation::TrainingConfig finetune_preset(std::uint64_t seed) {
  auto c = mitigation::TrainingConfig::few_shot();
  c.seed = seed;
  return c;
}

mitigation::TrainingConfig contrastive_preset(std::uint64_t seed) {
  auto c = mitigation::TrainingConfig::contrastive();
  c.seed = seed;
  return c;
}

mitigation::TripletSpec triplet_preset() {
  mitigation::TripletSpec s;
  s.opposite_gender_probability = 1.0;
  s.anchors = mitigation::AnchorPolicy::AllIdentities;
  return s;
}

// --- Gender experiments ----------------------------------------------------------

double GenderScore::disparity() const { return male - female; }

GenderScore gender_score(const audit::AuditReport& report, const std::string& backend) {
  const audit::CellKey cell{backend, std::nullopt, std::nullopt, std::nullopt};
  return {report.aggregate(cell, Gender::Male).accuracy(),
          report.aggregate(cell, Gender::Female).accuracy()};
}

namespace {
// Share of dark-toned source males drawn with long hair.
constexpr double kSourceHairFlip = 0.2;
}  // namespace

GenderSetup gender_setup(std::uint64_t seed) {
  GenderCorpusOptions source_opts;
  source_opts.dark_females = false;
  source_opts.dark_hair_flip = kSourceHairFlip;
  source_opts.variants = {};
  source_opts.id_prefix = "src";
  source_opts.seed = rng::derive_seed(seed, "source");
  const auto source = gender_corpus(source_opts);

  GenderCorpusOptions target_opts;
  target_opts.seed = rng::derive_seed(seed, "target");
  GenderSetup setup{gender_corpus(target_opts), {}, {model::Network(toy_config(model::Task::Gender, {"Male", "Female"}, 24, 32, 0)), {}}};
  setup.split = build_holdout(setup.target.manifest, SplitSpec{}, rng::derive_seed(seed, "holdout"));
  const auto cfg = toy_config(model::Task::Gender, {"Male", "Female"}, source_opts.width,
                              source_opts.height, rng::derive_seed(seed, "init"));
  PretrainOptions po;
  po.seed = rng::derive_seed(seed, "pretrain");
  setup.pretrained = pretrain(cfg, source.manifest, source.images, po);
  return setup;
}

KshotExperiment kshot_experiment(const GenderSetup& setup, int k,
                                 const mitigation::TrainingConfig& config) {
  KshotExperiment out;
  const auto& holdout = setup.split.holdout;
  out.before = gender_score(mitigation::evaluate(setup.pretrained, holdout, setup.target.images));
  for (const auto seed : mitigation::repeat_seeds(config.seed, config.repeats)) {
    auto cfg = config;
    cfg.seed = seed;
    const auto shots = sample_kshot(setup.split.pool, k, 0.0, VariantKind::rgb(0.3), seed);
    const auto trained = mitigation::finetune_kshot(setup.pretrained, shots, setup.target.images, cfg);
    out.runs.push_back(
        {seed, gender_score(mitigation::evaluate(trained.checkpoint, holdout, setup.target.images))});
  }
  for (const auto& r : out.runs) {
    out.mean_after.male += r.after.male / out.runs.size();
    out.mean_after.female += r.after.female / out.runs.size();
  }
  return out;
}

ContrastiveExperiment contrastive_experiment(const GenderSetup& setup,
                                             const mitigation::TripletSpec& spec,
                                             const mitigation::TrainingConfig& config) {
  ContrastiveExperiment out;
  const auto& holdout = setup.split.holdout;
  out.before = gender_score(mitigation::evaluate(setup.pretrained, holdout, setup.target.images));
  for (const auto seed : mitigation::repeat_seeds(config.seed, config.repeats)) {
    auto cfg = config;
    cfg.seed = seed;
    const auto trained = mitigation::contrastive_train(setup.pretrained, setup.split.pool,
                                                       setup.target.images, spec, cfg);
    ContrastiveRun run;
    run.seed = seed;
    run.after = gender_score(mitigation::evaluate(trained.checkpoint, holdout, setup.target.images));
    run.final_satisfaction = trained.epochs.empty() ? 0 : trained.epochs.back().satisfaction;
    for (const auto& s : trained.steps) {
      const double expect = cfg.loss_mix.triplet * s.triplet + cfg.loss_mix.bce * s.bce;
      run.max_decomposition_error = std::max(run.max_decomposition_error, std::abs(s.combined - expect));
    }
    out.runs.push_back(run);
  }
  const double n = static_cast<double>(out.runs.size());
  for (const auto& r : out.runs) {
    out.mean_after.male += r.after.male / n;
    out.mean_after.female += r.after.female / n;
    out.mean_final_satisfaction += r.final_satisfaction / n;
  }
  return out;
}

// --- Country experiment ----------------------------------------------------------

CountrySetup country_setup(std::uint64_t seed) {
  CountryCorpusOptions aux;
  aux.id_prefix = "geo";
  aux.males_per_country = 8;
  aux.females_per_country = 8;
  aux.seed = rng::derive_seed(seed, "stage1");

  CountryCorpusOptions source = aux;
  source.id_prefix = "csrc";
  source.stripe_jitter = 70;
  source.variants = {};
  source.males_per_country = 30;
  source.females_per_country = 30;
  source.seed = rng::derive_seed(seed, "source");
  const auto src = country_corpus(source);

  CountryCorpusOptions target;
  target.seed = rng::derive_seed(seed, "target");
  CountrySetup setup{country_corpus(aux), country_corpus(target), {},
                     {model::Network(toy_config(model::Task::Country, target.countries, 24, 32, 0)), {}}};
  setup.split = build_holdout(setup.target.manifest, SplitSpec{}, rng::derive_seed(seed, "holdout"));
  const auto cfg = toy_config(model::Task::Country, target.countries, target.width, target.height,
                              rng::derive_seed(seed, "init"));
  PretrainOptions po;
  po.epochs = 2;
  po.seed = rng::derive_seed(seed, "pretrain");
  setup.pretrained = pretrain(cfg, src.manifest, src.images, po);
  return setup;
}

CountryExperiment country_experiment(const CountrySetup& setup,
                                     const mitigation::TrainingConfig& finetune,
                                     const mitigation::TrainingConfig& contrastive,
                                     const mitigation::TripletSpec& spec) {
  CountryExperiment out;
  const auto& holdout = setup.split.holdout;
  auto macro = [&](const model::Checkpoint& c) {
    return mitigation::macro_accuracy(mitigation::evaluate(c, holdout, setup.target.images, true),
                                      "local-cnn");
  };
  out.before = macro(setup.pretrained);
  // One image source over both corpora.
  MemoryImageSource images;
  for (const auto* corpus : {&setup.stage1, &setup.target})
    for (const auto& r : corpus->manifest.records) images.put(r.record_id, corpus->images.load(r));

  for (const auto seed : mitigation::repeat_seeds(finetune.seed, finetune.repeats)) {
    const auto shots = sample_kshot(setup.split.pool, 2, 0.0, VariantKind::rgb(0.3), seed);
    // Contrastive stages need positives; the shots keep their RGB0.3 records.
    Manifest shots_with_positives = shots;
    for (const auto& r : shots.records) {
      if (const auto* p = setup.split.pool.find(r.identity_id, "RGB0.3"))
        shots_with_positives.records.push_back(*p);
    }
    for (const auto scheme : {mitigation::TwoStageScheme::FinetuneThenFinetune,
                              mitigation::TwoStageScheme::ContrastiveThenContrastive}) {
      const bool is_ct = scheme == mitigation::TwoStageScheme::ContrastiveThenContrastive;
      auto c1 = is_ct ? contrastive : finetune;
      c1.seed = rng::derive_seed(seed, "stage1");
      auto c2 = is_ct ? contrastive : finetune;
      c2.seed = seed;
      const auto trained = mitigation::two_stage_country(
          setup.pretrained,
          is_ct ? setup.stage1.manifest : setup.stage1.manifest.filter_variant("ORIG"),
          is_ct ? shots_with_positives : shots, images, scheme, c1, c2, spec);
      (is_ct ? out.contrastive : out.finetune).push_back(macro(trained.checkpoint));
    }
  }
  for (const double v : out.finetune) out.mean_finetune += v / out.finetune.size();
  for (const double v : out.contrastive) out.mean_contrastive += v / out.contrastive.size();
  return out;
}

}  // namespace frsaudit::toy
