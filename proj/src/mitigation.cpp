#include "frsaudit/mitigation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>

#include "frsaudit/backends.hpp"
#include "frsaudit/error.hpp"
#include "frsaudit/rng.hpp"

namespace frsaudit::mitigation {

model::AdamConfig TrainingConfig::adam() const {
  model::AdamConfig a;
  a.learning_rate = learning_rate;
  return a;
}

void TrainingConfig::validate() const {
  if (!(learning_rate >= 0) || !std::isfinite(learning_rate))
    fail(ErrorCode::InvalidArgument, "learning_rate must be finite and >= 0");
  if (epochs < 1) fail(ErrorCode::InvalidArgument, "epochs must be >= 1");
  if (batch_size < 1) fail(ErrorCode::InvalidArgument, "batch_size must be >= 1");
  if (repeats < 1) fail(ErrorCode::InvalidArgument, "repeats must be >= 1");
  if (loss_mix.triplet < 0 || loss_mix.bce < 0 ||
      std::abs(loss_mix.triplet + loss_mix.bce - 1.0) > 1e-12)
    fail(ErrorCode::InvalidArgument, "loss weights must be >= 0 and sum to 1");
}

void to_json(nlohmann::json& j, const TrainingConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"optimizer", "adam"},
                     {"loss_mix", {{"triplet", c.loss_mix.triplet}, {"bce", c.loss_mix.bce}}},
                     {"batch_size", c.batch_size},
                     {"seed", c.seed},
                     {"repeats", c.repeats}};
}

void from_json(const nlohmann::json& j, TrainingConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.epochs = j.value("epochs", c.epochs);
  if (j.contains("loss_mix")) {
    c.loss_mix.triplet = j.at("loss_mix").value("triplet", c.loss_mix.triplet);
    c.loss_mix.bce = j.at("loss_mix").value("bce", c.loss_mix.bce);
  }
  c.batch_size = j.value("batch_size", c.batch_size);
  c.seed = j.value("seed", c.seed);
  c.repeats = j.value("repeats", c.repeats);
  if (j.value("optimizer", std::string("adam")) != "adam")
    fail(ErrorCode::InvalidArgument, "only the adam optimizer is supported");
}

void TripletSpec::validate() const {
  positive.validate();
  if (positive.is_orig()) fail(ErrorCode::InvalidArgument, "positive variant must not be ORIG");
  if (!(opposite_gender_probability >= 0 && opposite_gender_probability <= 1))
    fail(ErrorCode::InvalidArgument, "opposite_gender_probability must lie in [0, 1]");
  if (!(margin >= 0) || !std::isfinite(margin))
    fail(ErrorCode::InvalidArgument, "margin must be finite and >= 0");
}

void to_json(nlohmann::json& j, const TripletSpec& s) {
  j = nlohmann::json{
      {"positive", s.positive.tag()},
      {"opposite_gender_probability", s.opposite_gender_probability},
      {"margin", s.margin},
      {"anchors", s.anchors == AnchorPolicy::PerGenderCountry ? "per-gender-country" : "all"},
      {"negatives", s.negatives == NegativePolicy::OppositeGender ? "opposite-gender"
                                                                   : "other-country"}};
}

void from_json(const nlohmann::json& j, TripletSpec& s) {
  if (j.contains("positive")) s.positive = VariantKind::parse_tag(j.at("positive").get<std::string>());
  s.opposite_gender_probability =
      j.value("opposite_gender_probability", s.opposite_gender_probability);
  s.margin = j.value("margin", s.margin);
  const auto anchors = j.value("anchors", std::string("per-gender-country"));
  if (anchors == "per-gender-country") s.anchors = AnchorPolicy::PerGenderCountry;
  else if (anchors == "all") s.anchors = AnchorPolicy::AllIdentities;
  else fail(ErrorCode::InvalidArgument, "unknown anchor policy: " + anchors);
  const auto neg = j.value("negatives", std::string("opposite-gender"));
  if (neg == "opposite-gender") s.negatives = NegativePolicy::OppositeGender;
  else if (neg == "other-country") s.negatives = NegativePolicy::OtherCountry;
  else fail(ErrorCode::InvalidArgument, "unknown negative policy: " + neg);
}

// --- Triplets ------------------------------------------------------------------

std::vector<Triplet> build_triplets(const Manifest& pool, const TripletSpec& spec,
                                    std::uint64_t seed, int rounds) {
  spec.validate();
  const std::string ptag = spec.positive.tag();

  // ORIG records in identity order.
  std::vector<const FaceRecord*> origs;
  for (const auto& r : pool.records)
    if (r.variant.is_orig()) origs.push_back(&r);
  std::sort(origs.begin(), origs.end(),
            [](const FaceRecord* a, const FaceRecord* b) { return a->identity_id < b->identity_id; });
  if (origs.empty()) fail(ErrorCode::InsufficientGroup, "pool has no ORIG records");

  std::map<std::string, const FaceRecord*> positives;
  for (const auto* r : origs) {
    const auto* p = pool.find(r->identity_id, ptag);
    if (!p) fail(ErrorCode::MissingVariant, "identity " + r->identity_id + " has no " + ptag);
    positives[r->identity_id] = p;
  }

  // Anchor cells in (country, gender) order.
  std::map<std::pair<std::string, int>, std::vector<const FaceRecord*>> cells;
  std::map<int, std::vector<const FaceRecord*>> by_gender;
  std::map<std::string, std::vector<const FaceRecord*>> by_country;
  for (const auto* r : origs) {
    cells[{r->country, static_cast<int>(r->gender)}].push_back(r);
    by_gender[static_cast<int>(r->gender)].push_back(r);
    by_country[r->country].push_back(r);
  }
  if (spec.anchors == AnchorPolicy::PerGenderCountry &&
      spec.negatives == NegativePolicy::OppositeGender) {
    for (const auto& [country, list] : by_country) {
      for (const Gender g : kGenders) {
        if (!cells.count({country, static_cast<int>(g)}))
          fail(ErrorCode::InsufficientGroup,
               "country " + country + " has no " + std::string(to_string(g)) + " identity");
      }
    }
  }
  std::vector<std::string> countries;
  for (const auto& [c, list] : by_country) countries.push_back(c);

  auto pick_other = [](const std::vector<const FaceRecord*>& list, const FaceRecord* anchor,
                       std::uint64_t bits) -> const FaceRecord* {
    std::vector<const FaceRecord*> ok;
    for (const auto* r : list)
      if (r->identity_id != anchor->identity_id) ok.push_back(r);
    if (ok.empty()) return nullptr;
    return ok[rng::bounded(bits, ok.size())];
  };

  std::vector<Triplet> out;
  std::uint64_t t = 0;
  for (int round = 0; round < rounds; ++round) {
    std::vector<const FaceRecord*> anchors;
    if (spec.anchors == AnchorPolicy::AllIdentities) {
      anchors = origs;
    } else {
      for (const auto& [cell, list] : cells)
        anchors.push_back(list[rng::bounded(rng::keyed(seed, 0x616e63686f72, round, anchors.size()),
                                            list.size())]);
    }
    for (const auto* a : anchors) {
      const std::uint64_t bernoulli = rng::keyed(seed, t, 1);
      const std::uint64_t choice = rng::keyed(seed, t, 2);
      const FaceRecord* neg = nullptr;
      if (spec.negatives == NegativePolicy::OppositeGender) {
        const bool flip = rng::unit(bernoulli) < spec.opposite_gender_probability;
        const Gender g = flip ? opposite(a->gender) : a->gender;
        const auto it = by_gender.find(static_cast<int>(g));
        if (it != by_gender.end()) neg = pick_other(it->second, a, choice);
      } else {
        std::vector<std::string> others;
        for (const auto& c : countries)
          if (c != a->country) others.push_back(c);
        if (!others.empty()) {
          const auto& c = others[rng::bounded(bernoulli, others.size())];
          neg = pick_other(by_country.at(c), a, choice);
        }
      }
      if (!neg)
        fail(ErrorCode::InsufficientGroup, "no admissible negative for " + a->identity_id);
      out.push_back({*a, *positives.at(a->identity_id), *neg});
      ++t;
    }
  }
  return out;
}

double triplet_loss(std::span<const double> ea, std::span<const double> ep,
                    std::span<const double> en, double margin) {
  if (ea.size() != ep.size() || ea.size() != en.size())
    fail(ErrorCode::DimMismatch, "embedding dimensions differ");
  double dp = 0, dn = 0;
  for (std::size_t i = 0; i < ea.size(); ++i) {
    dp += (ea[i] - ep[i]) * (ea[i] - ep[i]);
    dn += (ea[i] - en[i]) * (ea[i] - en[i]);
  }
  return std::max(0.0, dp - dn + margin);
}

double triplet_loss(std::span<const double> ea, std::span<const double> ep,
                    std::span<const double> en, double margin, std::span<double> d_ea,
                    std::span<double> d_ep, std::span<double> d_en) {
  const double loss = triplet_loss(ea, ep, en, margin);
  if (d_ea.size() != ea.size() || d_ep.size() != ea.size() || d_en.size() != ea.size())
    fail(ErrorCode::DimMismatch, "gradient buffers do not match the embedding");
  for (std::size_t i = 0; i < ea.size(); ++i) {
    if (loss > 0) {
      d_ea[i] = 2 * (en[i] - ep[i]);
      d_ep[i] = -2 * (ea[i] - ep[i]);
      d_en[i] = 2 * (ea[i] - en[i]);
    } else {
      d_ea[i] = d_ep[i] = d_en[i] = 0;
    }
  }
  return loss;
}

LossTerms combined_loss(const model::Network& net, std::span<const TripletExample> batch,
                        const LossMix& mix, double margin, std::span<double> grad) {
  LossTerms terms;
  if (batch.empty()) return terms;
  const double scale = 1.0 / static_cast<double>(batch.size());
  const int classes = net.config().classes();
  std::vector<double> zero_logits(classes, 0.0);
  for (const auto& ex : batch) {
    const auto a = net.forward(ex.anchor);
    const auto p = net.forward(ex.positive);
    const auto n = net.forward(ex.negative);
    const std::size_t d = a.embedding.size();
    std::vector<double> da(d), dp(d), dn(d);
    const double lt = triplet_loss(a.embedding, p.embedding, n.embedding, margin, da, dp, dn);
    std::vector<double> dlogits(classes);
    const double lb = model::cross_entropy(a.logits, ex.label, dlogits);
    terms.triplet += lt * scale;
    terms.bce += lb * scale;
    if (lt == 0) terms.satisfied += scale;
    if (grad.empty()) continue;
    const double wt = mix.triplet * scale, wb = mix.bce * scale;
    for (auto& v : dlogits) v *= wb;
    for (std::size_t i = 0; i < d; ++i) {
      da[i] *= wt;
      dp[i] *= wt;
      dn[i] *= wt;
    }
    net.backward(a, dlogits, da, grad);
    if (lt > 0 && wt != 0) {
      net.backward(p, zero_logits, dp, grad);
      net.backward(n, zero_logits, dn, grad);
    }
  }
  terms.combined = mix.triplet * terms.triplet + mix.bce * terms.bce;
  return terms;
}

const model::Tensor& InputCache::get(const FaceRecord& record) {
  auto it = tensors_.find(record.record_id);
  if (it == tensors_.end())
    it = tensors_.emplace(record.record_id, model::to_input(source_.load(record), config_)).first;
  return it->second;
}

nlohmann::json to_json(const StepLog& s) {
  return {{"stage", s.stage},     {"epoch", s.epoch},   {"step", s.step},
          {"triplet", s.triplet}, {"bce", s.bce},       {"combined", s.combined},
          {"satisfied", s.satisfied}};
}

nlohmann::json to_json(const EpochLog& e) {
  return {{"stage", e.stage}, {"epoch", e.epoch},       {"triplet", e.triplet},
          {"bce", e.bce},     {"combined", e.combined}, {"satisfaction", e.satisfaction}};
}

// --- Trainers ------------------------------------------------------------------

namespace {

void check_finite(double loss) {
  if (!std::isfinite(loss)) fail(ErrorCode::NonFiniteLoss, "training loss is not finite");
}

void record_stage(model::Checkpoint& ckpt, const std::string& stage, const TrainingConfig& config,
                  const std::vector<EpochLog>& epochs, const std::string& dataset_hash) {
  auto& prov = ckpt.provenance;
  for (const auto& e : epochs) prov.loss_curve.push_back(e.combined);
  prov.epochs += config.epochs;
  prov.dataset_hash = dataset_hash;
  if (!prov.notes.contains("stages")) prov.notes["stages"] = nlohmann::json::array();
  nlohmann::json cfg;
  to_json(cfg, config);
  prov.notes["stages"].push_back({{"stage", stage},
                                  {"config", cfg},
                                  {"dataset_hash", dataset_hash},
                                  {"loss_curve_length", epochs.size()}});
}

int label_of(const model::ClassifierConfig& cfg, const FaceRecord& r) {
  return cfg.label_index(backends::truth_label(r, cfg.task));
}

}  // namespace

TrainingResult finetune_kshot(const model::Checkpoint& checkpoint, const Manifest& shots,
                              const ImageSource& source, const TrainingConfig& config,
                              const std::string& stage) {
  config.validate();
  TrainingResult result{checkpoint, {}, {}};
  auto& net = result.checkpoint.network;
  const auto& cfg = net.config();

  std::vector<int> labels;
  for (const auto& r : shots.records) labels.push_back(label_of(cfg, r));
  if (shots.records.empty()) return result;

  InputCache cache(source, cfg);
  std::vector<model::Example> examples;
  for (std::size_t i = 0; i < shots.records.size(); ++i)
    examples.push_back({cache.get(shots.records[i]), labels[i]});

  model::AdamState adam(net.params().size());
  const auto adam_cfg = config.adam();
  std::vector<std::size_t> order(examples.size());
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    rng::Stream s(rng::derive_seed(config.seed, "epoch", std::to_string(epoch)));
    rng::shuffle(std::span(order), s);
    EpochLog log{stage, epoch, 0, 0, 0, 0};
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::vector<model::Example> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i)
        batch.push_back(examples[order[i]]);
      const auto m = model::train_step(net, batch, adam, adam_cfg);
      result.steps.push_back({stage, epoch, step++, 0, m.loss, m.loss, 0});
      log.bce += m.loss * static_cast<double>(batch.size());
    }
    log.bce /= static_cast<double>(order.size());
    log.combined = log.bce;
    result.epochs.push_back(log);
  }
  record_stage(result.checkpoint, stage, config, result.epochs, manifest_hash(shots));
  return result;
}

TrainingResult contrastive_train(const model::Checkpoint& checkpoint, const Manifest& pool,
                                 const ImageSource& source, const TripletSpec& spec,
                                 const TrainingConfig& config, const std::string& stage) {
  config.validate();
  spec.validate();
  TrainingResult result{checkpoint, {}, {}};
  auto& net = result.checkpoint.network;
  const auto& cfg = net.config();
  if (pool.records.empty()) return result;

  InputCache cache(source, cfg);
  model::AdamState adam(net.params().size());
  const auto adam_cfg = config.adam();
  std::vector<double> grad(net.params().size());
  int step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    auto triplets =
        build_triplets(pool, spec, rng::derive_seed(config.seed, "triplets", std::to_string(epoch)));
    rng::Stream s(rng::derive_seed(config.seed, "epoch", std::to_string(epoch)));
    rng::shuffle(std::span(triplets), s);
    EpochLog log{stage, epoch, 0, 0, 0, 0};
    for (std::size_t b = 0; b < triplets.size(); b += config.batch_size) {
      std::vector<TripletExample> batch;
      for (std::size_t i = b; i < std::min(triplets.size(), b + config.batch_size); ++i) {
        const auto& t = triplets[i];
        batch.push_back({cache.get(t.anchor), cache.get(t.positive), cache.get(t.negative),
                         label_of(cfg, t.anchor)});
      }
      std::fill(grad.begin(), grad.end(), 0.0);
      const auto terms = combined_loss(net, batch, config.loss_mix, spec.margin, grad);
      check_finite(terms.combined);
      adam.step(net.params(), grad, adam_cfg);
      result.steps.push_back(
          {stage, epoch, step++, terms.triplet, terms.bce, terms.combined, terms.satisfied});
      const double w = static_cast<double>(batch.size());
      log.triplet += terms.triplet * w;
      log.bce += terms.bce * w;
      log.satisfaction += terms.satisfied * w;
    }
    const double n = static_cast<double>(triplets.size());
    log.triplet /= n;
    log.bce /= n;
    log.satisfaction /= n;
    log.combined = config.loss_mix.triplet * log.triplet + config.loss_mix.bce * log.bce;
    result.epochs.push_back(log);
  }
  record_stage(result.checkpoint, stage, config, result.epochs, manifest_hash(pool));
  return result;
}

std::string_view to_string(TwoStageScheme s) {
  return s == TwoStageScheme::FinetuneThenFinetune ? "finetune-then-finetune"
                                                   : "contrastive-then-contrastive";
}

TwoStageScheme parse_scheme(std::string_view s) {
  if (s == "finetune-then-finetune") return TwoStageScheme::FinetuneThenFinetune;
  if (s == "contrastive-then-contrastive") return TwoStageScheme::ContrastiveThenContrastive;
  fail(ErrorCode::InvalidArgument, "unknown two-stage scheme: " + std::string(s));
}

TrainingResult two_stage_country(const model::Checkpoint& checkpoint, const Manifest& stage1,
                                 const Manifest& stage2, const ImageSource& source,
                                 TwoStageScheme scheme, const TrainingConfig& stage1_config,
                                 const TrainingConfig& stage2_config, const TripletSpec& spec) {
  const auto& cfg = checkpoint.network.config();
  if (cfg.task != model::Task::Country)
    fail(ErrorCode::LabelMismatch, "two-stage training needs a country classifier");
  for (const auto* m : {&stage1, &stage2})
    for (const auto& r : m->records) cfg.label_index(r.country);

  TripletSpec country_spec = spec;
  country_spec.negatives = NegativePolicy::OtherCountry;
  auto run = [&](const model::Checkpoint& ckpt, const Manifest& m, const TrainingConfig& c,
                 const std::string& stage) {
    if (scheme == TwoStageScheme::FinetuneThenFinetune)
      return finetune_kshot(ckpt, m, source, c, stage);
    return contrastive_train(ckpt, m, source, country_spec, c, stage);
  };
  TrainingResult result{checkpoint, {}, {}};
  for (int i = 0; i < 2; ++i) {
    const Manifest& m = i == 0 ? stage1 : stage2;
    if (m.records.empty()) continue;
    auto r = run(result.checkpoint, m, i == 0 ? stage1_config : stage2_config,
                 "stage" + std::to_string(i + 1));
    result.checkpoint = std::move(r.checkpoint);
    result.steps.insert(result.steps.end(), r.steps.begin(), r.steps.end());
    result.epochs.insert(result.epochs.end(), r.epochs.begin(), r.epochs.end());
  }
  return result;
}

std::vector<std::uint64_t> repeat_seeds(std::uint64_t seed, int repeats) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < repeats; ++i)
    out.push_back(rng::derive_seed(seed, "repeat", std::to_string(i)));
  return out;
}

audit::AuditReport evaluate(const model::Checkpoint& checkpoint, const Manifest& manifest,
                            const ImageSource& source, bool by_country,
                            const std::string& backend_name) {
  auto backend = std::make_shared<backends::LocalCnnBackend>(checkpoint, backend_name);
  auto service = std::make_shared<backends::PredictionService>(
      backend, nullptr, std::make_shared<backends::SystemClock>());
  return audit::run_audit(manifest, {service}, source, {by_country});
}

double macro_accuracy(const audit::AuditReport& report, const std::string& backend) {
  std::set<std::string> countries;
  for (const auto& [k, g] : report.groups)
    if (k.backend == backend) countries.insert(k.country);
  if (countries.empty()) fail(ErrorCode::MissingCell, "no groups for backend " + backend);
  double sum = 0;
  for (const auto& c : countries) {
    audit::CellKey cell{backend, std::nullopt, std::nullopt, c};
    sum += report.aggregate(cell).accuracy();
  }
  return sum / static_cast<double>(countries.size());
}

audit::AuditReport mean_report(const std::vector<audit::AuditReport>& reports) {
  if (reports.empty()) fail(ErrorCode::InvalidArgument, "no reports to average");
  audit::AuditReport out;
  out.backends = reports.front().backends;
  out.metadata = reports.front().metadata;
  out.metadata["repeats"] = reports.size();
  out.metadata.erase("records");
  for (const auto& r : reports) out.sample_groups.push_back(r.groups);
  std::set<audit::GroupKey> keys;
  for (const auto& r : reports)
    for (const auto& [k, g] : r.groups) keys.insert(k);
  for (const auto& k : keys) {
    audit::GroupMetrics pooled;
    double sum = 0;
    int present = 0;
    for (const auto& r : reports) {
      const auto it = r.groups.find(k);
      if (it == r.groups.end() || it->second.n == 0) continue;
      pooled += it->second;
      sum += it->second.accuracy();
      ++present;
    }
    pooled.samples = present;
    pooled.mean_accuracy = sum / present;
    out.groups[k] = pooled;
  }
  return out;
}

// --- Experiment specs ----------------------------------------------------------

ExperimentSpec experiment_from_json(const nlohmann::json& j) {
  ExperimentSpec s;
  try {
    s.task = model::parse_task(j.value("task", std::string("gender")));
    s.scheme = j.value("scheme", s.scheme);
    if (j.contains("shots")) {
      const auto& sh = j.at("shots");
      s.shots.k = sh.value("k", s.shots.k);
      s.shots.adversarial_fraction = sh.value("adversarial_fraction", s.shots.adversarial_fraction);
      if (sh.contains("adversarial"))
        s.shots.adversarial = VariantKind::parse_tag(sh.at("adversarial").get<std::string>());
    }
    if (j.contains("triplet_spec")) s.triplet_spec = j.at("triplet_spec").get<TripletSpec>();
    if (s.scheme == "contrastive" || s.scheme == "contrastive-then-contrastive")
      s.training_config = TrainingConfig::contrastive();
    if (j.contains("training_config"))
      from_json(j.at("training_config"), s.training_config);
    if (j.contains("stage1_config")) {
      TrainingConfig c = s.training_config;
      from_json(j.at("stage1_config"), c);
      s.stage1_config = c;
    }
    s.checkpoint = j.value("checkpoint", std::string());
    s.pool_manifest = j.value("pool_manifest", std::string());
    s.holdout_manifest = j.value("holdout_manifest", std::string());
    s.stage1_manifest = j.value("stage1_manifest", std::string());
    s.out_dir = j.value("out_dir", std::string());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("bad experiment spec: ") + e.what());
  }
  static const std::set<std::string> schemes = {"kshot", "contrastive", "finetune-then-finetune",
                                                "contrastive-then-contrastive"};
  if (!schemes.count(s.scheme)) fail(ErrorCode::InvalidArgument, "unknown scheme: " + s.scheme);
  s.training_config.validate();
  s.triplet_spec.validate();
  return s;
}

nlohmann::json to_json(const ExperimentSpec& s) {
  nlohmann::json j{{"task", model::to_string(s.task)},
                   {"scheme", s.scheme},
                   {"shots",
                    {{"k", s.shots.k},
                     {"adversarial_fraction", s.shots.adversarial_fraction},
                     {"adversarial", s.shots.adversarial.tag()}}},
                   {"triplet_spec", s.triplet_spec},
                   {"training_config", s.training_config},
                   {"checkpoint", s.checkpoint.string()},
                   {"pool_manifest", s.pool_manifest.string()},
                   {"holdout_manifest", s.holdout_manifest.string()},
                   {"stage1_manifest", s.stage1_manifest.string()},
                   {"out_dir", s.out_dir.string()}};
  if (s.stage1_config) j["stage1_config"] = *s.stage1_config;
  return j;
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
}

}  // namespace

ExperimentResult run_experiment(const ExperimentSpec& spec, const ImageSource& pool_source,
                                const ImageSource& holdout_source) {
  const auto base = model::load_checkpoint(spec.checkpoint);
  if (base.network.config().task != spec.task)
    fail(ErrorCode::LabelMismatch, "checkpoint task does not match the experiment task");
  const auto pool = load_manifest(spec.pool_manifest);
  const auto holdout = load_manifest(spec.holdout_manifest).filter_variant("ORIG");
  Manifest stage1;
  if (!spec.stage1_manifest.empty()) stage1 = load_manifest(spec.stage1_manifest);
  const bool by_country = spec.task == model::Task::Country;

  std::filesystem::create_directories(spec.out_dir);
  std::ofstream log(spec.out_dir / "run_log.jsonl", std::ios::binary);

  ExperimentResult result;
  result.baseline = evaluate(base, holdout, holdout_source, by_country);
  std::vector<audit::AuditReport> reports;
  for (const auto seed : repeat_seeds(spec.training_config.seed, spec.training_config.repeats)) {
    auto cfg = spec.training_config;
    cfg.seed = seed;
    const auto trained = [&] {
      if (spec.scheme == "contrastive")
        return contrastive_train(base, pool, pool_source, spec.triplet_spec, cfg);
      const auto shots = sample_kshot(pool, spec.shots.k, spec.shots.adversarial_fraction,
                                      spec.shots.adversarial, seed);
      if (spec.scheme == "kshot") return finetune_kshot(base, shots, pool_source, cfg);
      auto c1 = spec.stage1_config.value_or(spec.training_config);
      c1.seed = rng::derive_seed(seed, "stage1");
      return two_stage_country(base, stage1, shots, pool_source, parse_scheme(spec.scheme), c1,
                               cfg, spec.triplet_spec);
    }();
    for (const auto& s : trained.steps) {
      auto j = to_json(s);
      j["seed"] = seed;
      log << j.dump() << '\n';
    }
    for (const auto& e : trained.epochs) {
      auto j = to_json(e);
      j["seed"] = seed;
      j["kind"] = "epoch";
      log << j.dump() << '\n';
    }
    auto report = evaluate(trained.checkpoint, holdout, holdout_source, by_country);
    reports.push_back(report);
    result.repeats.push_back({seed, std::move(report)});
  }
  result.mean = mean_report(reports);

  nlohmann::json out{{"spec", to_json(spec)},
                     {"baseline", audit::to_json(result.baseline)},
                     {"mean", audit::to_json(result.mean)},
                     {"repeats", nlohmann::json::array()}};
  for (const auto& r : result.repeats)
    out["repeats"].push_back({{"seed", r.seed}, {"report", audit::to_json(r.report)}});
  write_text(spec.out_dir / "results.json", out.dump(2) + "\n");
  write_text(spec.out_dir / "accuracy.csv", audit::accuracy_table_csv(result.mean));
  write_text(spec.out_dir / "disparity.csv", audit::disparity_table_csv(result.mean));
  write_text(spec.out_dir / "baseline_accuracy.csv", audit::accuracy_table_csv(result.baseline));
  return result;
}

}  // namespace frsaudit::mitigation
