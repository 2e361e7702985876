#pragma once

// Accuracy, disparity and stability statistics over backend predictions,
// plus JSON/CSV/SVG report emission.

#include <compare>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "frsaudit/backends.hpp"
#include "frsaudit/corpus.hpp"

namespace frsaudit::audit {

struct GroupKey {
  std::string backend;
  std::string variant;  // variant tag, e.g. "ORIG", "RGB0.3"
  Region region = Region::GlobalNorth;
  std::string country;  // empty unless grouping by country
  Gender gender = Gender::Male;

  auto operator<=>(const GroupKey&) const = default;
};

struct GroupMetrics {
  long n = 0;
  long correct = 0;
  long face_not_found = 0;  // included in n, scored incorrect
  long errors = 0;          // other per-record failures, scored incorrect
  /// Set for resampled reports: mean of per-sample accuracies.
  std::optional<double> mean_accuracy;
  int samples = 1;

  /// Percentage 100 * correct / n (or the resampled mean).
  double accuracy() const;
  GroupMetrics& operator+=(const GroupMetrics& o);
};

struct BackendStatus {
  backends::BackendDescriptor descriptor;
  bool aborted = false;
  std::string reason;
};

/// Non-gender parts of a key; unset parts are aggregated over (micro).
struct CellKey {
  std::string backend;
  std::optional<std::string> variant;
  std::optional<Region> region;
  std::optional<std::string> country;
};

struct AuditReport {
  std::map<GroupKey, GroupMetrics> groups;
  /// Per-sample group tables of a resampled report; empty for a plain audit.
  std::vector<std::map<GroupKey, GroupMetrics>> sample_groups;
  std::vector<BackendStatus> backends;
  nlohmann::json metadata = nlohmann::json::object();

  /// Micro aggregate of every group matching `cell` (and `gender` if set).
  /// For resampled reports the accuracy is the mean of per-sample aggregates.
  GroupMetrics aggregate(const CellKey& cell, std::optional<Gender> gender = std::nullopt) const;
  std::vector<std::string> backend_names() const;
  std::vector<std::string> variants() const;
  bool by_country() const;
};

nlohmann::json to_json(const AuditReport& r);
AuditReport report_from_json(const nlohmann::json& j);

/// Half-away-from-zero rounding to two decimals.
double round2(double v);
std::string format2(double v);

/// male - female, rounded to two decimals; sign preserved.
double disparity(double male_accuracy, double female_accuracy);
/// Disparity of a report cell. Throws MissingCell when either gender is absent.
double disparity(const AuditReport& report, const CellKey& cell);

/// Population standard deviation.
double population_stddev(const std::vector<double>& values);
/// Population SD of per-variant overall accuracies of one backend. Throws
/// InsufficientCells with fewer than two variants.
double variant_stability(const AuditReport& report, const std::string& backend);

// --- Scoring -------------------------------------------------------------------

struct ScoredRecord {
  FaceRecord record;
  std::string backend;
  backends::Prediction prediction;
  bool correct = false;
};

struct ScoreSet {
  std::vector<ScoredRecord> rows;
  std::vector<BackendStatus> statuses;
};

/// Scores every record exactly once per backend. A backend whose credentials
/// are rejected is marked aborted and contributes no rows.
ScoreSet score(const Manifest& manifest,
               const std::vector<std::shared_ptr<backends::PredictionService>>& services,
               const ImageSource& source);

struct AuditOptions {
  bool by_country = false;
};

/// Deterministic fold over scored rows; independent of row order.
AuditReport aggregate(const ScoreSet& scores, const AuditOptions& options = {});

AuditReport run_audit(const Manifest& manifest,
                      const std::vector<std::shared_ptr<backends::PredictionService>>& services,
                      const ImageSource& source, const AuditOptions& options = {});

/// Identity sets used by balanced_resample_audit: every sample holds the same
/// `n_per_gender` female identities (a seeded fixed subset) and a fresh seeded
/// draw of `n_per_gender` male identities without replacement. Throws
/// InsufficientGroup.
std::vector<std::vector<std::string>> balanced_samples(const Manifest& manifest, int n_per_gender,
                                                       int samples, std::uint64_t seed);

/// Averages per-group accuracies over the balanced samples.
AuditReport balanced_resample_audit(
    const Manifest& manifest,
    const std::vector<std::shared_ptr<backends::PredictionService>>& services,
    const ImageSource& source, int n_per_gender, int samples, std::uint64_t seed,
    const AuditOptions& options = {});

/// Same, from already scored rows.
AuditReport balanced_resample(const ScoreSet& scores, const Manifest& manifest, int n_per_gender,
                              int samples, std::uint64_t seed, const AuditOptions& options = {});

// --- Emission ------------------------------------------------------------------

/// Rows: variant x region; columns: backend x gender accuracies.
std::string accuracy_table_csv(const AuditReport& report);
/// Rows: variant x region; columns: backend disparities.
std::string disparity_table_csv(const AuditReport& report);
/// One row per group.
std::string groups_csv(const AuditReport& report);
/// Grouped bar chart of male/female accuracy per variant x region.
std::string bar_chart_svg(const AuditReport& report, const std::string& backend);

}  // namespace frsaudit::audit
