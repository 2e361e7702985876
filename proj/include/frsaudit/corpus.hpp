#pragma once

// Face corpus data model: labeled records, manifests, ingestion of labeled
// image directories, face-crop normalization and the deterministic split and
// few-shot samplers used by the audit and mitigation experiments.

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "frsaudit/error.hpp"
#include "frsaudit/image.hpp"

namespace frsaudit {

enum class Gender { Male, Female };
enum class Region { GlobalNorth, GlobalSouth };

std::string_view to_string(Gender g);
std::string_view to_string(Region r);
Gender parse_gender(std::string_view text);
Region parse_region(std::string_view text);
inline Gender opposite(Gender g) {
  return g == Gender::Male ? Gender::Female : Gender::Male;
}
inline constexpr Gender kGenders[] = {Gender::Male, Gender::Female};

/// Country code -> region. Ships with the eight canonical cricket nations;
/// new countries must declare their region explicitly.
class CountryRegistry {
 public:
  CountryRegistry();

  static const CountryRegistry& canonical();

  void add(const std::string& code, Region region);
  bool contains(std::string_view code) const;
  Region region_of(std::string_view code) const;
  std::vector<std::string> codes() const;

 private:
  std::map<std::string, Region, std::less<>> regions_;
};

inline constexpr int kFaceWidth = 200;
inline constexpr int kFaceHeight = 256;

struct VariantKind {
  enum class Kind { Orig, Rgb, Grey, Spread, Mask };

  Kind kind = Kind::Orig;
  std::optional<double> amplitude;     // Rgb only
  std::optional<int> radius;           // Spread only
  std::optional<std::uint64_t> seed;   // Rgb, Spread

  static VariantKind orig() { return {}; }
  static VariantKind rgb(double amplitude, std::optional<std::uint64_t> seed = {});
  static VariantKind grey() { return {Kind::Grey, {}, {}, {}}; }
  static VariantKind spread(int radius = 5, std::optional<std::uint64_t> seed = {});
  static VariantKind mask() { return {Kind::Mask, {}, {}, {}}; }

  /// Short label identifying the variant set: ORIG, RGB0.3, RGB0.5, GREY,
  /// SPRD, MASK. Seeds and the spread radius are parameters, not identity.
  std::string tag() const;
  static VariantKind parse_tag(std::string_view tag);

  bool is_orig() const noexcept { return kind == Kind::Orig; }
  /// Throws BadManifest when the optional fields do not match the kind.
  void validate() const;
};

void to_json(nlohmann::json& j, const VariantKind& v);
void from_json(const nlohmann::json& j, VariantKind& v);

struct FaceRecord {
  std::string record_id;
  std::string identity_id;
  std::string display_name;
  std::string country;
  Region region = Region::GlobalNorth;
  Gender gender = Gender::Male;
  VariantKind variant;
  std::string image_ref;
  int width = 0;
  int height = 0;
};

void to_json(nlohmann::json& j, const FaceRecord& r);
void from_json(const nlohmann::json& j, FaceRecord& r);

std::string make_record_id(std::string_view identity_id, const VariantKind& v);

struct Manifest {
  static constexpr int kSchemaVersion = 1;

  int schema_version = kSchemaVersion;
  std::string provenance;
  std::vector<FaceRecord> records;

  /// Record ids unique, one record per (identity, variant tag), region
  /// consistent with country.
  void validate(const CountryRegistry& registry = CountryRegistry::canonical()) const;

  const FaceRecord* find(std::string_view record_id) const;
  const FaceRecord* find(std::string_view identity_id, std::string_view tag) const;
  /// Records of one variant set, in manifest order.
  Manifest filter_variant(std::string_view tag) const;
  /// Records whose identity appears in `identities`.
  Manifest filter_identities(const std::vector<std::string>& identities) const;
  std::vector<std::string> identities() const;
  std::vector<std::string> countries() const;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

Manifest load_manifest(const std::filesystem::path& path,
                       const CountryRegistry& registry = CountryRegistry::canonical());
void save_manifest(const Manifest& m, const std::filesystem::path& path);
/// SHA-256 of the canonical JSON serialization.
std::string manifest_hash(const Manifest& m);
/// image_refs (resolved against `base`) that do not exist on disk.
std::vector<std::string> unresolved_image_refs(const Manifest& m,
                                               const std::filesystem::path& base);

/// Where pixel data for a record comes from.
class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual ImageBuffer load(const FaceRecord& record) const = 0;
  /// Encoded file bytes as they would be shipped to a remote backend.
  virtual std::vector<std::uint8_t> bytes(const FaceRecord& record) const = 0;
};

class FileImageSource final : public ImageSource {
 public:
  explicit FileImageSource(std::filesystem::path base) : base_(std::move(base)) {}
  ImageBuffer load(const FaceRecord& record) const override;
  std::vector<std::uint8_t> bytes(const FaceRecord& record) const override;
  std::filesystem::path resolve(const FaceRecord& record) const;

 private:
  std::filesystem::path base_;
};

/// In-memory images keyed by record_id; bytes() are PNG encodings.
class MemoryImageSource final : public ImageSource {
 public:
  void put(const std::string& record_id, ImageBuffer image);
  ImageBuffer load(const FaceRecord& record) const override;
  std::vector<std::uint8_t> bytes(const FaceRecord& record) const override;
  std::size_t size() const noexcept { return images_.size(); }

 private:
  std::map<std::string, ImageBuffer, std::less<>> images_;
};

// ---------------------------------------------------------------------------
// Ingestion

struct IngestIssue {
  ErrorCode code;
  std::string file;
  std::string detail;
};

struct IngestResult {
  Manifest manifest;
  std::vector<IngestIssue> issues;
};

struct IngestOptions {
  /// Throw on the first batch of issues instead of returning them.
  bool strict = true;
  std::string provenance = "ingest";
};

/// Builds one ORIG record per labeled image in `directory`. The labels file
/// is UTF-8 CSV with header `filename,identity_id,name,country,gender`.
/// image_refs are stored relative to `directory`.
IngestResult ingest(const std::filesystem::path& directory,
                    const std::filesystem::path& labels_csv,
                    const CountryRegistry& registry = CountryRegistry::canonical(),
                    const IngestOptions& options = {});

// ---------------------------------------------------------------------------
// Crop normalization

struct BBox {
  int x = 0, y = 0, width = 0, height = 0;
};

/// The bbox grown symmetrically to the 200:256 aspect, then shifted (or, if
/// larger than the image, clamped) to lie inside the image.
RectF crop_region(const BBox& bbox, int image_width, int image_height);

/// Crop to the face region and resample (bilinear) to exactly 200x256.
ImageBuffer normalize_crop(const ImageBuffer& image, const BBox& bbox);

// ---------------------------------------------------------------------------
// Splits and samplers

struct SplitSpec {
  int per_country_total = 60;
  int male_parts = 2;
  int female_parts = 1;
  /// Held-out identities are removed from the training pool entirely.
  bool disjoint = true;

  int males_per_country() const;
  int females_per_country() const;
};

struct HoldoutSplit {
  Manifest holdout;  // ORIG records of the held-out identities
  Manifest pool;     // everything else
};

HoldoutSplit build_holdout(const Manifest& manifest, const SplitSpec& spec,
                           std::uint64_t seed);

/// k identities per (country, gender) cell. floor(fraction * total) of the
/// returned records use `adversarial` instead of ORIG: every cell first gets
/// floor(fraction * k), and the remainder is spread over cells taken
/// alternately from seeded male and female cell orders.
Manifest sample_kshot(const Manifest& pool, int k, double adversarial_fraction,
                      const VariantKind& adversarial, std::uint64_t seed);

}  // namespace frsaudit
