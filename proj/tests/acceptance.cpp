// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fail.
//
// Usage: acceptance [criterion numbers...]   (default: all)

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "frsaudit/audit.hpp"
#include "frsaudit/backends.hpp"
#include "frsaudit/corpus.hpp"
#include "frsaudit/explain.hpp"
#include "frsaudit/mitigation.hpp"
#include "frsaudit/model.hpp"
#include "frsaudit/rng.hpp"
#include "frsaudit/toy.hpp"
#include "frsaudit/variants.hpp"
#include "helpers.hpp"

using namespace frsaudit;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

struct Criterion {
  int number;
  std::string name;
  double budget_seconds;
  std::function<void(Outcome&)> run;
};

double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// --- 1: disparity arithmetic --------------------------------------------------------

// Accuracies as integer hundredths of a percent, so the expected differences
// are exact integer subtractions.
audit::AuditReport planted_report(long male_hundredths, long female_hundredths) {
  audit::AuditReport r;
  audit::GroupKey k{"fpp", "ORIG", Region::GlobalSouth, "", Gender::Male};
  r.groups[k] = {10000, male_hundredths, 0, 0, std::nullopt, 1};
  k.gender = Gender::Female;
  r.groups[k] = {10000, female_hundredths, 0, 0, std::nullopt, 1};
  return r;
}

void metric_oracle(Outcome& o) {
  struct Cell {
    const char* name;
    long male, female;  // hundredths
  };
  const Cell cells[] = {{"FPP/GS/ORIG", 9976, 6125},
                        {"MSFT/GS/ORIG", 9893, 8835},
                        {"FPP/GN/RGB0.3 balanced", 5924, 8505}};
  for (const auto& c : cells) {
    const double expected = static_cast<double>(c.male - c.female) / 100.0;
    const double scalar = audit::disparity(c.male / 100.0, c.female / 100.0);
    const auto report = planted_report(c.male, c.female);
    const double from_report =
        audit::disparity(report, {"fpp", std::string("ORIG"), Region::GlobalSouth, std::nullopt});
    o.require(scalar == expected, std::string(c.name) + " scalar");
    o.require(from_report == expected, std::string(c.name) + " report");
    o.require(audit::format2(scalar) == audit::format2(expected), c.name);
    o.detail << " " << c.name << "=" << audit::format2(scalar);
  }
  // The reference balanced overall RGB0.3 entry for FPP (-8.14) pools both
  // regions' balanced samples; the region-level cell alone gives -25.81 and
  // the two-region mean of region disparities gives -8.56. Neither equals the
  // pooled figure, which cannot be recovered from region-level cells.
  const double gn = audit::disparity(59.24, 85.05);
  const double gs = audit::disparity(77.80, 69.11);
  o.require(gn < 0, "sign convention: male minus female");
  o.require(audit::round2((gn + gs) / 2) != -8.14, "aggregation difference documented");
  o.detail << "; region-mean " << audit::format2((gn + gs) / 2) << " vs pooled -8.14";
}

// --- 2: filter properties --------------------------------------------------------

void filter_suite(Outcome& o) {
  const int w = kFaceWidth, h = kFaceHeight;
  long noise_violations = 0, multiset_violations = 0, radius_violations = 0, grey_violations = 0,
       determinism_violations = 0;
  rng::Stream params(2024);
  for (int i = 0; i < 1000; ++i) {
    const auto img = testing::random_image(w, h, 1000 + i);
    const std::uint64_t seed = params.next();

    const double a = 0.01 + 0.99 * params.uniform();
    const int bound = static_cast<int>(std::lround(a * 255));
    const auto noisy = rgb_noise(img, a, seed);
    for (std::size_t p = 0; p < img.pixels().size(); ++p) {
      if (std::abs(int(noisy.pixels()[p]) - int(img.pixels()[p])) > bound) ++noise_violations;
    }
    if (!(rgb_noise(img, a, seed) == noisy)) ++determinism_violations;

    const int radius = 1 + static_cast<int>(params.below(8));
    const auto spread_img = spread(img, radius, seed);
    std::vector<std::array<std::uint8_t, 3>> before, after;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        before.push_back({img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)});
        after.push_back({spread_img.at(x, y, 0), spread_img.at(x, y, 1), spread_img.at(x, y, 2)});
      }
    std::sort(before.begin(), before.end());
    std::sort(after.begin(), after.end());
    if (before != after) ++multiset_violations;
    for (const auto& s : spread_schedule(w, h, radius, seed)) {
      if (std::abs(s.from % w - s.to % w) > radius || std::abs(s.from / w - s.to / w) > radius)
        ++radius_violations;
    }
    if (!(spread(img, radius, seed) == spread_img)) ++determinism_violations;

    const auto grey = greyscale(img);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        if (grey.at(x, y, 0) != grey.at(x, y, 1) || grey.at(x, y, 1) != grey.at(x, y, 2))
          ++grey_violations;
    if (!(greyscale(grey) == grey)) ++grey_violations;
  }
  o.require(noise_violations == 0, "rgb noise bound");
  o.require(multiset_violations == 0, "spread multiset");
  o.require(radius_violations == 0, "spread radius");
  o.require(grey_violations == 0, "greyscale");
  o.require(determinism_violations == 0, "determinism");
  o.detail << " 1000 images: noise " << noise_violations << ", multiset " << multiset_violations
           << ", radius " << radius_violations << ", grey " << grey_violations
           << ", determinism " << determinism_violations << " violations";
}

// --- 3: numerical checks ------------------------------------------------------------

model::ClassifierConfig three_block(std::uint64_t seed) {
  return toy::toy_config(model::Task::Gender, {"Male", "Female"}, 24, 32, seed);
}

model::Tensor random_input(const model::ClassifierConfig& c, std::uint64_t seed) {
  model::Tensor t(c.input_channels, c.input_height, c.input_width);
  rng::Stream s(seed);
  for (auto& v : t.values) v = s.uniform();
  return t;
}

void numerical_checks(Outcome& o) {
  model::Network net = model::Network::initialized(three_block(21));
  o.require(net.config().conv_blocks.size() == 3, "three conv blocks");
  rng::Stream s(77);
  for (auto& v : net.params()) v += 0.01 * s.uniform(-1, 1);
  const double hstep = 1e-6;

  // Cross-entropy over a batch.
  std::vector<model::Example> batch;
  for (int i = 0; i < 4; ++i) batch.push_back({random_input(net.config(), 300 + i), i % 2});
  std::vector<double> grad(net.params().size(), 0.0);
  model::classification_gradient(net, batch, grad);
  double worst_bce = 0;
  for (int k = 0; k < 30; ++k) {
    const std::size_t i = s.below(net.params().size());
    const double orig = net.params()[i];
    net.params()[i] = orig + hstep;
    const double up = model::classification_gradient(net, batch, {});
    net.params()[i] = orig - hstep;
    const double down = model::classification_gradient(net, batch, {});
    net.params()[i] = orig;
    const double numeric = (up - down) / (2 * hstep);
    if (std::abs(numeric) < 1e-9 && std::abs(grad[i]) < 1e-9) continue;
    worst_bce = std::max(worst_bce, rel_err(grad[i], numeric));
  }
  o.require(worst_bce < 1e-4, "cross-entropy gradient");

  // Combined 0.8/0.2 loss on triplets.
  std::vector<mitigation::TripletExample> triplets;
  for (int i = 0; i < 3; ++i) {
    triplets.push_back({random_input(net.config(), 400 + i), random_input(net.config(), 500 + i),
                        random_input(net.config(), 600 + i), i % 2});
  }
  double worst_combined = 0;
  for (const double margin : {2.5, 0.2}) {
    std::vector<double> g(net.params().size(), 0.0);
    const auto terms = mitigation::combined_loss(net, triplets, {0.8, 0.2}, margin, g);
    o.require(std::abs(terms.combined - (0.8 * terms.triplet + 0.2 * terms.bce)) < 1e-12,
              "combined decomposition");
    for (int k = 0; k < 30; ++k) {
      const std::size_t i = s.below(net.params().size());
      const double orig = net.params()[i];
      net.params()[i] = orig + hstep;
      const double up = mitigation::combined_loss(net, triplets, {0.8, 0.2}, margin, {}).combined;
      net.params()[i] = orig - hstep;
      const double down = mitigation::combined_loss(net, triplets, {0.8, 0.2}, margin, {}).combined;
      net.params()[i] = orig;
      const double numeric = (up - down) / (2 * hstep);
      if (std::abs(numeric) < 1e-9 && std::abs(g[i]) < 1e-9) continue;
      worst_combined = std::max(worst_combined, rel_err(g[i], numeric));
    }
  }
  o.require(worst_combined < 1e-4, "combined gradient");

  // Grad-CAM channel weights: mean over the plane of d(logit)/d(activation).
  double worst_cam = 0;
  for (std::uint64_t seed : {31ULL, 32ULL}) {
    const auto cam_net = model::Network::initialized(three_block(seed));
    const auto x = random_input(cam_net.config(), seed * 7);
    const auto A = cam_net.forward(x).conv_outputs.back();
    const std::size_t plane = static_cast<std::size_t>(A.height) * A.width;
    for (int target = 0; target < 2; ++target) {
      const auto w = explain::gradcam_channel_weights(cam_net, x, target);
      for (int c = 0; c < A.channels; ++c) {
        model::Tensor up = A, down = A;
        for (std::size_t i = 0; i < plane; ++i) {
          up.values[c * plane + i] += 1e-5;
          down.values[c * plane + i] -= 1e-5;
        }
        const double numeric = (cam_net.logits_from_last_conv(up)[target] -
                                cam_net.logits_from_last_conv(down)[target]) /
                               2e-5 / static_cast<double>(plane);
        if (std::abs(numeric) < 1e-9 && std::abs(w[c]) < 1e-9) continue;
        worst_cam = std::max(worst_cam, rel_err(w[c], numeric));
      }
    }
  }
  o.require(worst_cam < 1e-3, "grad-cam weights");

  // Softmax on the simplex for 1,000 random logit vectors.
  long simplex_violations = 0;
  rng::Stream ls(5);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> logits(2 + ls.below(9));
    for (auto& v : logits) v = ls.uniform(-50, 50);
    const auto p = model::softmax(logits);
    const double sum = std::accumulate(p.begin(), p.end(), 0.0);
    const bool ok = std::all_of(p.begin(), p.end(), [](double v) { return v >= 0 && v <= 1; }) &&
                    std::abs(sum - 1.0) < 1e-12;
    if (!ok) ++simplex_violations;
  }
  o.require(simplex_violations == 0, "softmax simplex");
  o.detail << " max rel err: cross-entropy " << worst_bce << ", combined " << worst_combined
           << ", grad-cam " << worst_cam << "; simplex violations " << simplex_violations;
}

// --- 4, 5: toy gender mitigation -----------------------------------------------------

const toy::GenderSetup& gender_setup() {
  static const toy::GenderSetup setup = toy::gender_setup(1);
  return setup;
}

void print_score(Outcome& o, const char* label, const toy::GenderScore& s) {
  o.detail << " " << label << " M " << audit::format2(s.male) << " F " << audit::format2(s.female)
           << " (disp " << audit::format2(s.disparity()) << ")";
}

void toy_kshot(Outcome& o) {
  const auto cfg = toy::finetune_preset(1);
  o.require(cfg.learning_rate == 1e-5 && cfg.epochs == 10 && cfg.repeats == 3, "protocol");
  const auto ex = toy::kshot_experiment(gender_setup(), 2, cfg);
  o.require(ex.runs.size() == 3, "three repeats");
  const double before = ex.before.disparity();
  const double after = ex.mean_after.disparity();
  const double reduction = (before - after) / before;
  print_score(o, "before", ex.before);
  print_score(o, "after", ex.mean_after);
  o.detail << " reduction " << audit::format2(100 * reduction) << "%";
  o.require(before >= 30, "pretrained disparity >= 30");
  o.require(reduction >= 0.5, "relative reduction >= 50%");
  o.require(ex.mean_after.male >= 80, "majority accuracy >= 80");
}

void toy_contrastive(Outcome& o) {
  const auto cfg = toy::contrastive_preset(1);
  const auto spec = toy::triplet_preset();
  o.require(cfg.epochs == 40 && spec.margin == 0.2 && spec.opposite_gender_probability == 1.0 &&
                spec.positive.tag() == "RGB0.3",
            "protocol");
  const auto ex = toy::contrastive_experiment(gender_setup(), spec, cfg);
  double worst_decomposition = 0;
  for (const auto& r : ex.runs) worst_decomposition = std::max(worst_decomposition, r.max_decomposition_error);
  print_score(o, "before", ex.before);
  print_score(o, "after", ex.mean_after);
  o.detail << " satisfaction " << ex.mean_final_satisfaction << " decomposition err "
           << worst_decomposition;
  // The 0-shot baseline is the pretrained model itself: zero improvement.
  o.require(ex.mean_final_satisfaction >= 0.9, "satisfaction >= 0.9");
  o.require(ex.mean_after.female - ex.before.female >= 0.0, "minority improvement >= 0-shot");
  o.require(worst_decomposition <= 1e-9, "decomposition identity");
}

// --- 6: sampler and split ------------------------------------------------------------

void sampler_split(Outcome& o) {
  const auto base = testing::synthetic_manifest(testing::eight_countries(), 50, 26);
  long bad_size = 0, overlaps = 0;
  std::set<std::size_t> kshot_sizes;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto split = build_holdout(base, SplitSpec{}, seed);
    if (split.holdout.records.size() != 480) ++bad_size;
    std::map<std::pair<std::string, Gender>, int> cells;
    for (const auto& r : split.holdout.records) ++cells[{r.country, r.gender}];
    for (const auto& [cell, n] : cells)
      if (n != (cell.second == Gender::Male ? 40 : 20)) ++bad_size;
    const auto held = split.holdout.identities();
    const std::set<std::string> held_set(held.begin(), held.end());
    for (const auto& r : split.pool.records)
      if (held_set.count(r.identity_id)) ++overlaps;
    if (seed < 10) {
      for (const int k : {1, 2}) {
        const auto shots = sample_kshot(split.pool, k, 0.0, VariantKind::rgb(0.3), seed);
        const std::size_t expected = static_cast<std::size_t>(k) * 2 * 8;
        if (shots.records.size() != expected) ++bad_size;
        kshot_sizes.insert(shots.records.size());
      }
    }
  }
  o.require(bad_size == 0, "sizes");
  o.require(overlaps == 0, "identity disjointness");
  o.detail << " k-shot sizes {";
  for (auto n : kshot_sizes) o.detail << " " << n;
  o.detail << " }, holdout 480 over 100 seeds, size errors " << bad_size << ", overlaps "
           << overlaps;
}

// --- 7: triplet constraints ------------------------------------------------------------

void triplet_constraints(Outcome& o) {
  toy::GenderCorpusOptions opts;
  opts.males_per_country = 3;
  opts.females_per_country = 3;
  opts.seed = 17;
  const auto corpus = toy::gender_corpus(opts);
  mitigation::TripletSpec spec;  // per-(gender, country) anchors: 16 per round
  spec.opposite_gender_probability = 1.0;
  const auto exact = mitigation::build_triplets(corpus.manifest, spec, 3, 625);
  long violations = 0;
  for (const auto& t : exact) {
    if (t.negative.gender == t.anchor.gender) ++violations;
    if (t.positive.identity_id != t.anchor.identity_id || t.positive.variant.tag() != "RGB0.3" ||
        !t.anchor.variant.is_orig())
      ++violations;
  }
  spec.opposite_gender_probability = 0.85;
  const auto mixed = mitigation::build_triplets(corpus.manifest, spec, 4, 625);
  long opposite = 0;
  for (const auto& t : mixed) opposite += t.negative.gender != t.anchor.gender;
  const double fraction = static_cast<double>(opposite) / mixed.size();
  o.require(exact.size() == 10000 && mixed.size() == 10000, "10,000 triplets");
  o.require(violations == 0, "p=1 violations");
  o.require(fraction >= 0.84 && fraction <= 0.86, "p=0.85 fraction");
  o.detail << " p=1: " << violations << " violations in " << exact.size() << "; p=0.85: "
           << fraction;
}

// --- 8: cache and rate limiter ----------------------------------------------------------

class CountingBackend final : public backends::Backend {
 public:
  CountingBackend() {
    desc_ = {"counting", backends::BackendKind::Remote, model::Task::Gender, 1000.0, "v1"};
  }
  const backends::BackendDescriptor& descriptor() const override { return desc_; }
  backends::RawAnswer infer(const backends::InferenceInput& in) override {
    ++calls;
    return {std::string(to_string(in.record.gender)), 0.9};
  }
  long calls = 0;

 private:
  backends::BackendDescriptor desc_;
};

void cache_contract(Outcome& o) {
  const auto dir = testing::temp_dir("acceptance_cache");
  toy::GenderCorpusOptions opts;
  opts.males_per_country = 2;
  opts.females_per_country = 2;
  const auto corpus = toy::gender_corpus(opts);
  auto backend = std::make_shared<CountingBackend>();
  auto clock = std::make_shared<backends::FakeClock>();
  auto audit_once = [&] {
    auto service = std::make_shared<backends::PredictionService>(
        backend, std::make_shared<backends::PredictionCache>(dir), clock);
    return audit::run_audit(corpus.manifest, {service}, corpus.images);
  };
  const auto first = audit_once();
  const long first_calls = backend->calls;
  const auto second = audit_once();
  const long second_calls = backend->calls - first_calls;
  o.require(first_calls == static_cast<long>(corpus.manifest.records.size()), "first audit calls");
  o.require(second_calls == 0, "second audit calls");
  o.require(audit::to_json(first) == audit::to_json(second), "identical reports");

  std::size_t worst_excess = 0;
  for (const double rate : {1.0, 3.0, 4.5, 10.0}) {
    backends::FakeClock fc;
    backends::RateLimiter limiter(rate, fc);
    rng::Stream s(static_cast<std::uint64_t>(rate * 10));
    std::vector<double> grants;
    for (int i = 0; i < 10000; ++i) {
      if (s.below(3) == 0) fc.advance(s.uniform(0, 1.5));
      grants.push_back(limiter.acquire());
    }
    const auto budget = static_cast<std::size_t>(std::max(1.0, std::floor(rate)));
    for (std::size_t i = 0, j = 0; i < grants.size(); ++i) {
      while (j < grants.size() && grants[j] < grants[i] + 1.0) ++j;
      if (j - i > budget) worst_excess = std::max(worst_excess, j - i - budget);
    }
  }
  o.require(worst_excess == 0, "rate budget");
  o.detail << " calls " << first_calls << " then " << second_calls
           << "; worst window excess " << worst_excess;
}

// --- 9: country toy -------------------------------------------------------------------

void country_toy(Outcome& o) {
  const auto setup = toy::country_setup(2);
  const auto ex = toy::country_experiment(setup, toy::finetune_preset(2), toy::contrastive_preset(2),
                                          toy::triplet_preset());
  o.require(ex.finetune.size() == 3 && ex.contrastive.size() == 3, "three repeats");
  o.require(ex.mean_contrastive >= ex.mean_finetune, "contrastive >= finetune");
  o.detail << " pretrained " << audit::format2(ex.before) << ", finetune-then-finetune "
           << audit::format2(ex.mean_finetune) << ", contrastive-then-contrastive "
           << audit::format2(ex.mean_contrastive);
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "metric oracle", 1, metric_oracle},
      {2, "filter properties", 120, filter_suite},
      {3, "numerical checks", 300, numerical_checks},
      {4, "toy k-shot mitigation", 900, toy_kshot},
      {5, "toy contrastive mitigation", 1200, toy_contrastive},
      {6, "sampler and split", 30, sampler_split},
      {7, "triplet constraints", 60, triplet_constraints},
      {8, "backend cache and rate limit", 60, cache_contract},
      {9, "country toy ranking", 1200, country_toy},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.number)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      c.run(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (secs > c.budget_seconds) o.require(false, "runtime budget");
    if (!o.pass) ++failed;
    std::printf("%s #%d %s (%.2f s):%s\n", o.pass ? "PASS" : "FAIL", c.number, c.name.c_str(), secs,
                o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
