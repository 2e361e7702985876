#include "frsaudit/audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include "frsaudit/error.hpp"
#include "frsaudit/rng.hpp"

namespace frsaudit::audit {

double GroupMetrics::accuracy() const {
  if (mean_accuracy) return *mean_accuracy;
  return n == 0 ? 0.0 : 100.0 * static_cast<double>(correct) / static_cast<double>(n);
}

GroupMetrics& GroupMetrics::operator+=(const GroupMetrics& o) {
  n += o.n;
  correct += o.correct;
  face_not_found += o.face_not_found;
  errors += o.errors;
  return *this;
}

namespace {

bool matches(const GroupKey& k, const CellKey& cell, std::optional<Gender> gender) {
  return k.backend == cell.backend && (!cell.variant || k.variant == *cell.variant) &&
         (!cell.region || k.region == *cell.region) &&
         (!cell.country || k.country == *cell.country) && (!gender || k.gender == *gender);
}

GroupMetrics fold(const std::map<GroupKey, GroupMetrics>& groups, const CellKey& cell,
                  std::optional<Gender> gender) {
  GroupMetrics m;
  for (const auto& [k, g] : groups) {
    if (matches(k, cell, gender)) m += g;
  }
  return m;
}

}  // namespace

GroupMetrics AuditReport::aggregate(const CellKey& cell, std::optional<Gender> gender) const {
  GroupMetrics m = fold(groups, cell, gender);
  if (sample_groups.empty()) return m;
  double sum = 0;
  int present = 0;
  for (const auto& sample : sample_groups) {
    const auto s = fold(sample, cell, gender);
    if (s.n == 0) continue;
    sum += s.accuracy();
    ++present;
  }
  m.samples = present;
  if (present > 0) m.mean_accuracy = sum / present;
  return m;
}

std::vector<std::string> AuditReport::backend_names() const {
  std::vector<std::string> out;
  for (const auto& b : backends) out.push_back(b.descriptor.name);
  return out;
}

std::vector<std::string> AuditReport::variants() const {
  std::set<std::string> tags;
  for (const auto& [k, g] : groups) tags.insert(k.variant);
  std::vector<std::string> out(tags.begin(), tags.end());
  // ORIG first, then the rest in tag order.
  std::stable_partition(out.begin(), out.end(), [](const std::string& t) { return t == "ORIG"; });
  return out;
}

bool AuditReport::by_country() const { return metadata.value("by_country", false); }

// --- Statistics ------------------------------------------------------------------

double round2(double v) { return std::round(v * 100.0) / 100.0; }

std::string format2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", round2(v));
  return std::string(buf) == "-0.00" ? "0.00" : buf;
}

double disparity(double male_accuracy, double female_accuracy) {
  return round2(male_accuracy - female_accuracy);
}

double disparity(const AuditReport& report, const CellKey& cell) {
  const auto m = report.aggregate(cell, Gender::Male);
  const auto f = report.aggregate(cell, Gender::Female);
  if (m.n == 0 || f.n == 0) {
    fail(ErrorCode::MissingCell, "disparity needs both gender cells for backend '" +
                                     cell.backend + "' variant '" + cell.variant.value_or("*") + "'");
  }
  if (m.mean_accuracy || f.mean_accuracy) return disparity(m.accuracy(), f.accuracy());
  // Exact rational difference before rounding.
  const double num = static_cast<double>(m.correct * f.n - f.correct * m.n);
  return round2(100.0 * num / (static_cast<double>(m.n) * static_cast<double>(f.n)));
}

double population_stddev(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0;
  for (const double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0;
  for (const double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

double variant_stability(const AuditReport& report, const std::string& backend) {
  std::vector<double> acc;
  for (const auto& v : report.variants()) {
    const auto m = report.aggregate({backend, v, std::nullopt, std::nullopt});
    if (m.n > 0) acc.push_back(m.accuracy());
  }
  if (acc.size() < 2) {
    fail(ErrorCode::InsufficientCells, "backend '" + backend + "' has " +
                                           std::to_string(acc.size()) +
                                           " variant cell(s); stability needs at least 2");
  }
  return population_stddev(acc);
}

// --- Scoring ----------------------------------------------------------------------

ScoreSet score(const Manifest& manifest,
               const std::vector<std::shared_ptr<backends::PredictionService>>& services,
               const ImageSource& source) {
  ScoreSet out;
  for (const auto& svc : services) {
    BackendStatus status{svc->descriptor(), false, ""};
    const auto preds = svc->predict_batch(manifest.records, source);
    if (svc->auth_failed()) {
      status.aborted = true;
      status.reason = "AuthError: backend credentials were rejected";
      out.statuses.push_back(status);
      continue;
    }
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const auto& r = manifest.records[i];
      const bool correct =
          preds[i].ok() && *preds[i].label == backends::truth_label(r, svc->descriptor().task);
      out.rows.push_back({r, svc->descriptor().name, preds[i], correct});
    }
    out.statuses.push_back(status);
  }
  return out;
}

namespace {

std::map<GroupKey, GroupMetrics> fold_rows(const std::vector<const ScoredRecord*>& rows,
                                           bool by_country) {
  std::map<GroupKey, GroupMetrics> groups;
  for (const auto* row : rows) {
    const auto& r = row->record;
    GroupKey k{row->backend, r.variant.tag(), r.region, by_country ? r.country : "", r.gender};
    auto& g = groups[k];
    ++g.n;
    if (row->correct) ++g.correct;
    if (row->prediction.face_not_detected()) ++g.face_not_found;
    else if (!row->prediction.ok()) ++g.errors;
  }
  return groups;
}

nlohmann::json base_metadata(const AuditOptions& options) {
  return {{"by_country", options.by_country},
          {"averaging", "micro"},
          {"stddev", "population"},
          {"face_not_found", "scored incorrect, counted in n"}};
}

}  // namespace

AuditReport aggregate(const ScoreSet& scores, const AuditOptions& options) {
  std::vector<const ScoredRecord*> rows;
  for (const auto& r : scores.rows) rows.push_back(&r);
  AuditReport report;
  report.groups = fold_rows(rows, options.by_country);
  report.backends = scores.statuses;
  report.metadata = base_metadata(options);
  return report;
}

AuditReport run_audit(const Manifest& manifest,
                      const std::vector<std::shared_ptr<backends::PredictionService>>& services,
                      const ImageSource& source, const AuditOptions& options) {
  auto report = aggregate(score(manifest, services, source), options);
  report.metadata["corpus_hash"] = manifest_hash(manifest);
  report.metadata["records"] = manifest.records.size();
  return report;
}

std::vector<std::vector<std::string>> balanced_samples(const Manifest& manifest, int n_per_gender,
                                                       int samples, std::uint64_t seed) {
  if (n_per_gender < 1 || samples < 1) {
    fail(ErrorCode::InvalidArgument, "n_per_gender and samples must be positive");
  }
  std::set<std::string> males_set, females_set;
  for (const auto& r : manifest.records) {
    (r.gender == Gender::Male ? males_set : females_set).insert(r.identity_id);
  }
  std::vector<std::string> males(males_set.begin(), males_set.end());
  std::vector<std::string> females(females_set.begin(), females_set.end());
  const auto n = static_cast<std::size_t>(n_per_gender);
  for (const auto& [pool, name] : {std::pair{&males, "male"}, std::pair{&females, "female"}}) {
    if (pool->size() < n) {
      fail(ErrorCode::InsufficientGroup, std::string("balanced resample needs ") +
                                             std::to_string(n) + " " + name +
                                             " identities, available=" +
                                             std::to_string(pool->size()));
    }
  }
  if (females.size() > n) {
    rng::Stream s(rng::derive_seed(seed, "balanced-female"));
    rng::shuffle(std::span(females), s);
    females.resize(n);
  }
  std::vector<std::vector<std::string>> out;
  for (int i = 0; i < samples; ++i) {
    auto drawn = males;
    rng::Stream s(rng::derive_seed(seed, "balanced-male", std::to_string(i)));
    rng::shuffle(std::span(drawn), s);
    drawn.resize(n);
    drawn.insert(drawn.end(), females.begin(), females.end());
    std::sort(drawn.begin(), drawn.end());
    out.push_back(std::move(drawn));
  }
  return out;
}

AuditReport balanced_resample(const ScoreSet& scores, const Manifest& manifest, int n_per_gender,
                              int samples, std::uint64_t seed, const AuditOptions& options) {
  const auto sets = balanced_samples(manifest, n_per_gender, samples, seed);
  AuditReport report;
  report.backends = scores.statuses;
  report.metadata = base_metadata(options);
  report.metadata["balanced"] = {{"n_per_gender", n_per_gender},
                                 {"samples", samples},
                                 {"seed", seed},
                                 {"corpus_hash", manifest_hash(manifest)}};
  for (const auto& ids : sets) {
    const std::set<std::string> keep(ids.begin(), ids.end());
    std::vector<const ScoredRecord*> rows;
    for (const auto& r : scores.rows) {
      if (keep.count(r.record.identity_id)) rows.push_back(&r);
    }
    report.sample_groups.push_back(fold_rows(rows, options.by_country));
  }
  // Pooled counts plus the mean of per-sample accuracies for every group.
  std::set<GroupKey> keys;
  for (const auto& s : report.sample_groups)
    for (const auto& [k, g] : s) keys.insert(k);
  for (const auto& k : keys) {
    GroupMetrics pooled;
    double sum = 0;
    int present = 0;
    for (const auto& s : report.sample_groups) {
      const auto it = s.find(k);
      if (it == s.end() || it->second.n == 0) continue;
      pooled += it->second;
      sum += it->second.accuracy();
      ++present;
    }
    pooled.samples = present;
    pooled.mean_accuracy = sum / present;
    report.groups[k] = pooled;
  }
  return report;
}

AuditReport balanced_resample_audit(
    const Manifest& manifest,
    const std::vector<std::shared_ptr<backends::PredictionService>>& services,
    const ImageSource& source, int n_per_gender, int samples, std::uint64_t seed,
    const AuditOptions& options) {
  // Validate before spending any backend calls.
  balanced_samples(manifest, n_per_gender, samples, seed);
  return balanced_resample(score(manifest, services, source), manifest, n_per_gender, samples,
                           seed, options);
}

// --- Serialisation -------------------------------------------------------------

namespace {

nlohmann::json groups_json(const std::map<GroupKey, GroupMetrics>& groups) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& [k, g] : groups) {
    nlohmann::json row{{"backend", k.backend},
                       {"variant", k.variant},
                       {"region", to_string(k.region)},
                       {"gender", to_string(k.gender)},
                       {"n", g.n},
                       {"correct", g.correct},
                       {"face_not_found", g.face_not_found},
                       {"errors", g.errors},
                       {"accuracy", g.accuracy()}};
    if (!k.country.empty()) row["country"] = k.country;
    if (g.mean_accuracy) {
      row["mean_accuracy"] = *g.mean_accuracy;
      row["samples"] = g.samples;
    }
    arr.push_back(row);
  }
  return arr;
}

std::map<GroupKey, GroupMetrics> groups_from_json(const nlohmann::json& arr) {
  std::map<GroupKey, GroupMetrics> out;
  for (const auto& row : arr) {
    GroupKey k{row.at("backend").get<std::string>(), row.at("variant").get<std::string>(),
               parse_region(row.at("region").get<std::string>()), row.value("country", ""),
               parse_gender(row.at("gender").get<std::string>())};
    GroupMetrics g;
    g.n = row.at("n").get<long>();
    g.correct = row.at("correct").get<long>();
    g.face_not_found = row.value("face_not_found", 0L);
    g.errors = row.value("errors", 0L);
    if (row.contains("mean_accuracy")) {
      g.mean_accuracy = row["mean_accuracy"].get<double>();
      g.samples = row.value("samples", 1);
    }
    out[k] = g;
  }
  return out;
}

std::vector<std::pair<std::string, Region>> table_rows(const AuditReport& r) {
  std::vector<std::pair<std::string, Region>> rows;
  for (const auto& v : r.variants()) {
    for (const Region reg : {Region::GlobalNorth, Region::GlobalSouth}) rows.emplace_back(v, reg);
  }
  return rows;
}

std::string region_short(Region r) { return r == Region::GlobalNorth ? "GN" : "GS"; }

}  // namespace

nlohmann::json to_json(const AuditReport& r) {
  nlohmann::json j;
  j["metadata"] = r.metadata;
  nlohmann::json backends = nlohmann::json::array();
  for (const auto& b : r.backends) {
    backends.push_back({{"descriptor", b.descriptor}, {"aborted", b.aborted}, {"reason", b.reason}});
  }
  j["backends"] = backends;
  j["groups"] = groups_json(r.groups);
  if (!r.sample_groups.empty()) {
    j["sample_groups"] = nlohmann::json::array();
    for (const auto& s : r.sample_groups) j["sample_groups"].push_back(groups_json(s));
  }
  // Derived tables, for readers; ignored when loading.
  nlohmann::json disp = nlohmann::json::array();
  nlohmann::json stability = nlohmann::json::object();
  for (const auto& b : r.backend_names()) {
    for (const auto& [v, reg] : table_rows(r)) {
      const CellKey cell{b, v, reg, std::nullopt};
      if (r.aggregate(cell, Gender::Male).n == 0 || r.aggregate(cell, Gender::Female).n == 0) continue;
      disp.push_back({{"backend", b}, {"variant", v}, {"region", to_string(reg)},
                      {"male", round2(r.aggregate(cell, Gender::Male).accuracy())},
                      {"female", round2(r.aggregate(cell, Gender::Female).accuracy())},
                      {"disparity", disparity(r, cell)}});
    }
    try {
      stability[b] = variant_stability(r, b);
    } catch (const Error&) {
      stability[b] = nullptr;
    }
  }
  j["disparity"] = disp;
  j["variant_stability"] = stability;
  return j;
}

AuditReport report_from_json(const nlohmann::json& j) {
  AuditReport r;
  r.metadata = j.value("metadata", nlohmann::json::object());
  for (const auto& b : j.at("backends")) {
    BackendStatus s;
    const auto& d = b.at("descriptor");
    s.descriptor.name = d.at("name").get<std::string>();
    s.descriptor.kind = d.at("kind").get<std::string>() == "remote" ? backends::BackendKind::Remote
                                                                     : backends::BackendKind::Local;
    s.descriptor.task = model::parse_task(d.at("task").get<std::string>());
    s.descriptor.rate_limit = d.at("rate_limit").get<double>();
    s.descriptor.version = d.at("version").get<std::string>();
    s.aborted = b.value("aborted", false);
    s.reason = b.value("reason", "");
    r.backends.push_back(s);
  }
  r.groups = groups_from_json(j.at("groups"));
  if (j.contains("sample_groups")) {
    for (const auto& s : j["sample_groups"]) r.sample_groups.push_back(groups_from_json(s));
  }
  return r;
}

// --- Tables and charts -----------------------------------------------------------

std::string accuracy_table_csv(const AuditReport& report) {
  std::ostringstream out;
  out << "variant,region";
  const auto names = report.backend_names();
  for (const auto& b : names) out << "," << b << " M," << b << " F";
  out << "\n";
  for (const auto& [v, reg] : table_rows(report)) {
    out << v << "," << region_short(reg);
    for (const auto& b : names) {
      for (const Gender g : kGenders) {
        const auto m = report.aggregate({b, v, reg, std::nullopt}, g);
        out << "," << (m.n > 0 ? format2(m.accuracy()) : "");
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string disparity_table_csv(const AuditReport& report) {
  std::ostringstream out;
  out << "variant,region";
  const auto names = report.backend_names();
  for (const auto& b : names) out << "," << b;
  out << "\n";
  for (const auto& [v, reg] : table_rows(report)) {
    out << v << "," << region_short(reg);
    for (const auto& b : names) {
      out << ",";
      try {
        out << format2(disparity(report, {b, v, reg, std::nullopt}));
      } catch (const Error&) {
      }
    }
    out << "\n";
  }
  return out.str();
}

std::string groups_csv(const AuditReport& report) {
  std::ostringstream out;
  out << "backend,variant,region,country,gender,n,correct,face_not_found,errors,accuracy\n";
  for (const auto& [k, g] : report.groups) {
    out << k.backend << "," << k.variant << "," << region_short(k.region) << "," << k.country
        << "," << to_string(k.gender) << "," << g.n << "," << g.correct << "," << g.face_not_found
        << "," << g.errors << "," << format2(g.accuracy()) << "\n";
  }
  return out.str();
}

std::string bar_chart_svg(const AuditReport& report, const std::string& backend) {
  const auto rows = table_rows(report);
  const int bar = 14, gap = 18, left = 50, top = 30, plot_h = 200;
  const int group_w = 2 * bar + gap;
  const int width = left + static_cast<int>(rows.size()) * group_w + 20;
  const int height = top + plot_h + 60;
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
      << "\" font-family=\"sans-serif\" font-size=\"10\">\n";
  svg << "<text x=\"" << left << "\" y=\"16\" font-size=\"12\">" << backend
      << " accuracy by variant and region (M blue, F orange)</text>\n";
  for (int t = 0; t <= 100; t += 25) {
    const double y = top + plot_h - plot_h * t / 100.0;
    svg << "<line x1=\"" << left << "\" x2=\"" << width - 10 << "\" y1=\"" << y << "\" y2=\"" << y
        << "\" stroke=\"#ddd\"/><text x=\"" << left - 6 << "\" y=\"" << y + 3
        << "\" text-anchor=\"end\">" << t << "</text>\n";
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& [v, reg] = rows[i];
    const int x0 = left + static_cast<int>(i) * group_w + gap / 2;
    int bi = 0;
    for (const Gender g : kGenders) {
      const auto m = report.aggregate({backend, v, reg, std::nullopt}, g);
      if (m.n > 0) {
        const double h = plot_h * m.accuracy() / 100.0;
        svg << "<rect x=\"" << x0 + bi * bar << "\" y=\"" << top + plot_h - h << "\" width=\""
            << bar - 1 << "\" height=\"" << h << "\" fill=\""
            << (g == Gender::Male ? "#4477aa" : "#ee7733") << "\"><title>" << v << " "
            << region_short(reg) << " " << to_string(g) << " " << format2(m.accuracy())
            << "</title></rect>\n";
      }
      ++bi;
    }
    svg << "<text x=\"" << x0 + bar << "\" y=\"" << top + plot_h + 14
        << "\" text-anchor=\"middle\">" << region_short(reg) << "</text>\n";
    if (reg == Region::GlobalNorth) {
      svg << "<text x=\"" << x0 + bar + group_w / 2 << "\" y=\"" << top + plot_h + 30
          << "\" text-anchor=\"middle\">" << v << "</text>\n";
    }
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace frsaudit::audit
