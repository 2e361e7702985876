#include "frsaudit/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "frsaudit/digest.hpp"
#include "frsaudit/rng.hpp"

namespace frsaudit {

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

// RFC 4180 fields: quoted fields may contain commas, newlines and "" escapes.
std::vector<std::vector<std::string>> parse_csv(std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool field_started = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        quoted = true;
        field_started = true;
        break;
      case ',':
        row.push_back(std::move(field));
        field.clear();
        field_started = true;
        break;
      case '\r':
        break;
      case '\n':
        if (field_started || !field.empty() || !row.empty()) {
          row.push_back(std::move(field));
          rows.push_back(std::move(row));
        }
        field.clear();
        row.clear();
        field_started = false;
        break;
      default:
        field.push_back(c);
        field_started = true;
    }
  }
  if (field_started || !field.empty() || !row.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_amplitude(double a) {
  std::ostringstream os;
  os << a;
  return os.str();
}

bool is_image_file(const std::filesystem::path& p) {
  const auto ext = lower(p.extension().string());
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

std::string_view to_string(Gender g) { return g == Gender::Male ? "Male" : "Female"; }

std::string_view to_string(Region r) {
  return r == Region::GlobalNorth ? "GlobalNorth" : "GlobalSouth";
}

Gender parse_gender(std::string_view text) {
  const auto t = lower(trim(text));
  if (t == "male" || t == "m") return Gender::Male;
  if (t == "female" || t == "f") return Gender::Female;
  fail(ErrorCode::InvalidArgument, "unknown gender '" + std::string(text) + "'");
}

Region parse_region(std::string_view text) {
  const auto t = lower(trim(text));
  if (t == "globalnorth" || t == "gn") return Region::GlobalNorth;
  if (t == "globalsouth" || t == "gs") return Region::GlobalSouth;
  fail(ErrorCode::InvalidArgument, "unknown region '" + std::string(text) + "'");
}

// --- CountryRegistry --------------------------------------------------------

CountryRegistry::CountryRegistry() {
  for (const char* code : {"AUS", "NZL", "ENG", "RSA"}) regions_[code] = Region::GlobalNorth;
  for (const char* code : {"BAN", "IND", "PAK", "WIN"}) regions_[code] = Region::GlobalSouth;
}

const CountryRegistry& CountryRegistry::canonical() {
  static const CountryRegistry registry;
  return registry;
}

void CountryRegistry::add(const std::string& code, Region region) {
  if (code.empty()) fail(ErrorCode::InvalidArgument, "empty country code");
  regions_[code] = region;
}

bool CountryRegistry::contains(std::string_view code) const {
  return regions_.find(code) != regions_.end();
}

Region CountryRegistry::region_of(std::string_view code) const {
  const auto it = regions_.find(code);
  if (it == regions_.end()) {
    fail(ErrorCode::UnknownCountry,
         "country '" + std::string(code) + "' has no declared region");
  }
  return it->second;
}

std::vector<std::string> CountryRegistry::codes() const {
  std::vector<std::string> out;
  for (const auto& [code, region] : regions_) out.push_back(code);
  return out;
}

// --- VariantKind ------------------------------------------------------------

VariantKind VariantKind::rgb(double amplitude, std::optional<std::uint64_t> seed) {
  return {Kind::Rgb, amplitude, {}, seed};
}

VariantKind VariantKind::spread(int radius, std::optional<std::uint64_t> seed) {
  return {Kind::Spread, {}, radius, seed};
}

std::string VariantKind::tag() const {
  switch (kind) {
    case Kind::Orig: return "ORIG";
    case Kind::Rgb: return "RGB" + format_amplitude(amplitude.value_or(0.0));
    case Kind::Grey: return "GREY";
    case Kind::Spread: return "SPRD";
    case Kind::Mask: return "MASK";
  }
  return "ORIG";
}

VariantKind VariantKind::parse_tag(std::string_view tag) {
  const std::string t = lower(trim(tag));
  if (t == "orig") return orig();
  if (t == "grey" || t == "gray") return grey();
  if (t == "sprd" || t == "spread") return spread();
  if (t == "mask") return mask();
  if (t.rfind("rgb", 0) == 0) {
    std::string rest = t.substr(3);
    if (!rest.empty() && rest.front() == '_') rest.erase(0, 1);
    try {
      std::size_t used = 0;
      const double a = std::stod(rest, &used);
      if (used == rest.size()) return rgb(a);
    } catch (const std::exception&) {
    }
  }
  fail(ErrorCode::InvalidArgument, "unknown variant '" + std::string(tag) + "'");
}

void VariantKind::validate() const {
  if (amplitude.has_value() != (kind == Kind::Rgb)) {
    fail(ErrorCode::BadManifest, "amplitude must be present exactly for RGB variants");
  }
  if (radius.has_value() != (kind == Kind::Spread)) {
    fail(ErrorCode::BadManifest, "radius must be present exactly for SPRD variants");
  }
  if (seed.has_value() && kind != Kind::Rgb && kind != Kind::Spread) {
    fail(ErrorCode::BadManifest, "seed is only meaningful for RGB and SPRD variants");
  }
}

void to_json(nlohmann::json& j, const VariantKind& v) {
  static constexpr const char* kNames[] = {"ORIG", "RGB", "GREY", "SPRD", "MASK"};
  j = nlohmann::json{{"kind", kNames[static_cast<int>(v.kind)]}};
  if (v.amplitude) j["amplitude"] = *v.amplitude;
  if (v.radius) j["radius"] = *v.radius;
  if (v.seed) j["seed"] = *v.seed;
}

void from_json(const nlohmann::json& j, VariantKind& v) {
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "ORIG") v.kind = VariantKind::Kind::Orig;
  else if (kind == "RGB") v.kind = VariantKind::Kind::Rgb;
  else if (kind == "GREY") v.kind = VariantKind::Kind::Grey;
  else if (kind == "SPRD") v.kind = VariantKind::Kind::Spread;
  else if (kind == "MASK") v.kind = VariantKind::Kind::Mask;
  else fail(ErrorCode::BadManifest, "unknown variant kind '" + kind + "'");
  v.amplitude = j.contains("amplitude") ? std::optional(j["amplitude"].get<double>())
                                        : std::nullopt;
  v.radius = j.contains("radius") ? std::optional(j["radius"].get<int>()) : std::nullopt;
  v.seed = j.contains("seed") ? std::optional(j["seed"].get<std::uint64_t>())
                              : std::nullopt;
  v.validate();
}

// --- FaceRecord / Manifest --------------------------------------------------

std::string make_record_id(std::string_view identity_id, const VariantKind& v) {
  return std::string(identity_id) + "/" + v.tag();
}

void to_json(nlohmann::json& j, const FaceRecord& r) {
  j = nlohmann::json{{"record_id", r.record_id},
                     {"identity_id", r.identity_id},
                     {"display_name", r.display_name},
                     {"country", r.country},
                     {"region", to_string(r.region)},
                     {"gender", to_string(r.gender)},
                     {"variant", r.variant},
                     {"image_ref", r.image_ref},
                     {"width", r.width},
                     {"height", r.height}};
}

void from_json(const nlohmann::json& j, FaceRecord& r) {
  r.record_id = j.at("record_id").get<std::string>();
  r.identity_id = j.at("identity_id").get<std::string>();
  r.display_name = j.value("display_name", "");
  r.country = j.at("country").get<std::string>();
  r.region = parse_region(j.at("region").get<std::string>());
  r.gender = parse_gender(j.at("gender").get<std::string>());
  r.variant = j.at("variant").get<VariantKind>();
  r.image_ref = j.at("image_ref").get<std::string>();
  r.width = j.value("width", 0);
  r.height = j.value("height", 0);
}

void Manifest::validate(const CountryRegistry& registry) const {
  std::set<std::string, std::less<>> ids;
  std::set<std::pair<std::string, std::string>> cells;
  for (const auto& r : records) {
    if (!ids.insert(r.record_id).second) {
      fail(ErrorCode::BadManifest, "duplicate record_id '" + r.record_id + "'");
    }
    if (!cells.emplace(r.identity_id, r.variant.tag()).second) {
      fail(ErrorCode::DuplicateIdentityVariant,
           "identity '" + r.identity_id + "' has two " + r.variant.tag() + " records");
    }
    if (registry.region_of(r.country) != r.region) {
      fail(ErrorCode::BadManifest, "record '" + r.record_id + "' region disagrees with country " +
                                       r.country);
    }
    r.variant.validate();
  }
}

const FaceRecord* Manifest::find(std::string_view record_id) const {
  const auto it = std::find_if(records.begin(), records.end(),
                               [&](const FaceRecord& r) { return r.record_id == record_id; });
  return it == records.end() ? nullptr : &*it;
}

const FaceRecord* Manifest::find(std::string_view identity_id, std::string_view tag) const {
  const auto it = std::find_if(records.begin(), records.end(), [&](const FaceRecord& r) {
    return r.identity_id == identity_id && r.variant.tag() == tag;
  });
  return it == records.end() ? nullptr : &*it;
}

Manifest Manifest::filter_variant(std::string_view tag) const {
  Manifest out{schema_version, provenance, {}};
  for (const auto& r : records) {
    if (r.variant.tag() == tag) out.records.push_back(r);
  }
  return out;
}

Manifest Manifest::filter_identities(const std::vector<std::string>& identities) const {
  const std::set<std::string, std::less<>> keep(identities.begin(), identities.end());
  Manifest out{schema_version, provenance, {}};
  for (const auto& r : records) {
    if (keep.contains(r.identity_id)) out.records.push_back(r);
  }
  return out;
}

std::vector<std::string> Manifest::identities() const {
  std::set<std::string> ids;
  for (const auto& r : records) ids.insert(r.identity_id);
  return {ids.begin(), ids.end()};
}

std::vector<std::string> Manifest::countries() const {
  std::set<std::string> codes;
  for (const auto& r : records) codes.insert(r.country);
  return {codes.begin(), codes.end()};
}

void to_json(nlohmann::json& j, const Manifest& m) {
  j = nlohmann::json{{"schema_version", m.schema_version},
                     {"provenance", m.provenance},
                     {"records", m.records}};
}

void from_json(const nlohmann::json& j, Manifest& m) {
  m.schema_version = j.at("schema_version").get<int>();
  if (m.schema_version != Manifest::kSchemaVersion) {
    fail(ErrorCode::BadManifest,
         "unsupported manifest schema_version " + std::to_string(m.schema_version));
  }
  m.provenance = j.value("provenance", "");
  m.records = j.at("records").get<std::vector<FaceRecord>>();
}

Manifest load_manifest(const std::filesystem::path& path, const CountryRegistry& registry) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open manifest " + path.string());
  Manifest m;
  try {
    m = nlohmann::json::parse(in).get<Manifest>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::BadManifest, path.string() + ": " + e.what());
  }
  m.validate(registry);
  return m;
}

void save_manifest(const Manifest& m, const std::filesystem::path& path) {
  write_file_atomic(path, nlohmann::json(m).dump(2) + "\n");
}

std::string manifest_hash(const Manifest& m) {
  return digest::sha256_hex(nlohmann::json(m).dump());
}

std::vector<std::string> unresolved_image_refs(const Manifest& m,
                                               const std::filesystem::path& base) {
  std::vector<std::string> missing;
  for (const auto& r : m.records) {
    if (!std::filesystem::exists(base / r.image_ref)) missing.push_back(r.image_ref);
  }
  return missing;
}

// --- Image sources ----------------------------------------------------------

std::filesystem::path FileImageSource::resolve(const FaceRecord& record) const {
  const std::filesystem::path ref(record.image_ref);
  return ref.is_absolute() ? ref : base_ / ref;
}

ImageBuffer FileImageSource::load(const FaceRecord& record) const {
  return load_image(resolve(record));
}

std::vector<std::uint8_t> FileImageSource::bytes(const FaceRecord& record) const {
  try {
    return read_file_bytes(resolve(record));
  } catch (const Error& e) {
    fail(ErrorCode::UnreadableImage, e.what());
  }
}

void MemoryImageSource::put(const std::string& record_id, ImageBuffer image) {
  images_.insert_or_assign(record_id, std::move(image));
}

ImageBuffer MemoryImageSource::load(const FaceRecord& record) const {
  const auto it = images_.find(record.record_id);
  if (it == images_.end()) {
    fail(ErrorCode::UnreadableImage, "no image for record '" + record.record_id + "'");
  }
  return it->second;
}

std::vector<std::uint8_t> MemoryImageSource::bytes(const FaceRecord& record) const {
  return encode_png(load(record));
}

// --- Ingestion --------------------------------------------------------------

IngestResult ingest(const std::filesystem::path& directory,
                    const std::filesystem::path& labels_csv,
                    const CountryRegistry& registry, const IngestOptions& options) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(directory)) {
    fail(ErrorCode::Io, "not a directory: " + directory.string());
  }
  std::ifstream in(labels_csv, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open labels file " + labels_csv.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  std::string text = buffer.str();
  if (text.rfind("\xEF\xBB\xBF", 0) == 0) text.erase(0, 3);
  const auto rows = parse_csv(text);

  static const std::vector<std::string> kHeader = {"filename", "identity_id", "name",
                                                   "country", "gender"};
  if (rows.empty()) fail(ErrorCode::MissingLabel, "labels file is empty");
  std::vector<std::string> header;
  for (const auto& h : rows.front()) header.push_back(lower(trim(h)));
  if (header != kHeader) {
    fail(ErrorCode::InvalidArgument,
         "labels header must be filename,identity_id,name,country,gender");
  }

  struct Label {
    std::string identity, name, country, gender;
  };
  IngestResult result;
  std::map<std::string, Label> labels;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& row = rows[i];
    if (row.size() != kHeader.size()) {
      result.issues.push_back({ErrorCode::InvalidArgument, "",
                               "labels row " + std::to_string(i + 1) + " has " +
                                   std::to_string(row.size()) + " fields"});
      continue;
    }
    labels[trim(row[0])] = {trim(row[1]), trim(row[2]), trim(row[3]), trim(row[4])};
  }

  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());

  result.manifest.provenance = options.provenance;
  std::set<std::string> seen_files;
  std::map<std::string, std::string> identity_file;
  for (const auto& file : files) {
    const std::string name = file.filename().string();
    seen_files.insert(name);
    const auto it = labels.find(name);
    if (it == labels.end()) {
      result.issues.push_back({ErrorCode::MissingLabel, name, "no label row"});
      continue;
    }
    const Label& label = it->second;
    FaceRecord rec;
    try {
      rec.gender = parse_gender(label.gender);
      rec.region = registry.region_of(label.country);
    } catch (const Error& e) {
      result.issues.push_back({e.code(), name, e.what()});
      continue;
    }
    if (label.identity.empty()) {
      result.issues.push_back({ErrorCode::MissingLabel, name, "empty identity_id"});
      continue;
    }
    if (const auto [prev, inserted] = identity_file.emplace(label.identity, name); !inserted) {
      result.issues.push_back({ErrorCode::DuplicateIdentityVariant, name,
                               "identity '" + label.identity + "' already ingested from " +
                                   prev->second});
      continue;
    }
    ImageBuffer img;
    try {
      img = load_image(file);
    } catch (const Error& e) {
      result.issues.push_back({ErrorCode::UnreadableImage, name, e.what()});
      continue;
    }
    rec.identity_id = label.identity;
    rec.display_name = label.name;
    rec.country = label.country;
    rec.variant = VariantKind::orig();
    rec.record_id = make_record_id(rec.identity_id, rec.variant);
    rec.image_ref = name;
    rec.width = img.width();
    rec.height = img.height();
    result.manifest.records.push_back(std::move(rec));
  }
  for (const auto& [file, label] : labels) {
    if (!seen_files.contains(file)) {
      result.issues.push_back({ErrorCode::UnreadableImage, file, "labeled file not found"});
    }
  }

  if (options.strict && !result.issues.empty()) {
    std::string message;
    for (const auto& issue : result.issues) {
      message += std::string(to_string(issue.code)) + "(" + issue.file + "): " + issue.detail + "; ";
    }
    fail(result.issues.front().code, message);
  }
  return result;
}

// --- Crop normalization -----------------------------------------------------

RectF crop_region(const BBox& bbox, int image_width, int image_height) {
  if (bbox.width <= 0 || bbox.height <= 0) {
    fail(ErrorCode::EmptyBBox, "bounding box has zero area");
  }
  if (bbox.x < 0 || bbox.y < 0 || bbox.x + bbox.width > image_width ||
      bbox.y + bbox.height > image_height) {
    fail(ErrorCode::BBoxOutOfBounds, "bounding box exceeds image bounds");
  }
  RectF r{static_cast<double>(bbox.x), static_cast<double>(bbox.y),
          static_cast<double>(bbox.width), static_cast<double>(bbox.height)};
  // Compare w/h with 200/256 exactly in integers.
  const long long lhs = static_cast<long long>(bbox.width) * kFaceHeight;
  const long long rhs = static_cast<long long>(bbox.height) * kFaceWidth;
  if (lhs < rhs) {
    const double w = r.height * kFaceWidth / kFaceHeight;
    r.x -= (w - r.width) / 2;
    r.width = w;
  } else if (lhs > rhs) {
    const double h = r.width * kFaceHeight / kFaceWidth;
    r.y -= (h - r.height) / 2;
    r.height = h;
  }
  auto fit = [](double& pos, double& len, double limit) {
    if (len >= limit) {
      pos = 0;
      len = limit;
    } else {
      pos = std::clamp(pos, 0.0, limit - len);
    }
  };
  fit(r.x, r.width, image_width);
  fit(r.y, r.height, image_height);
  return r;
}

ImageBuffer normalize_crop(const ImageBuffer& image, const BBox& bbox) {
  const RectF region = crop_region(bbox, image.width(), image.height());
  return resample_bilinear(image, region, kFaceWidth, kFaceHeight);
}

// --- Splits -----------------------------------------------------------------

int SplitSpec::males_per_country() const {
  return per_country_total / (male_parts + female_parts) * male_parts;
}

int SplitSpec::females_per_country() const {
  return per_country_total / (male_parts + female_parts) * female_parts;
}

namespace {

using CellKey = std::pair<std::string, Gender>;

// Sorted ORIG identities per (country, gender).
std::map<CellKey, std::vector<std::string>> orig_identities_by_cell(const Manifest& m) {
  std::map<CellKey, std::set<std::string>> cells;
  for (const auto& r : m.records) {
    if (r.variant.is_orig()) cells[{r.country, r.gender}].insert(r.identity_id);
  }
  std::map<CellKey, std::vector<std::string>> out;
  for (auto& [key, ids] : cells) out[key] = {ids.begin(), ids.end()};
  return out;
}

std::vector<std::string> pick(std::vector<std::string> candidates, std::size_t n,
                              std::uint64_t seed, const CellKey& cell) {
  rng::Stream stream(rng::derive_seed(seed, cell.first, to_string(cell.second)));
  rng::shuffle(std::span(candidates), stream);
  candidates.resize(n);
  return candidates;
}

[[noreturn]] void insufficient(const CellKey& cell, std::size_t needed, std::size_t available) {
  fail(ErrorCode::InsufficientGroup,
       "InsufficientGroup(" + cell.first + ", " + std::string(to_string(cell.second)) +
           ", needed=" + std::to_string(needed) + ", available=" + std::to_string(available) +
           ")");
}

}  // namespace

HoldoutSplit build_holdout(const Manifest& manifest, const SplitSpec& spec, std::uint64_t seed) {
  const int parts = spec.male_parts + spec.female_parts;
  if (spec.male_parts < 0 || spec.female_parts < 0 || parts <= 0 ||
      spec.per_country_total <= 0 || spec.per_country_total % parts != 0) {
    fail(ErrorCode::InvalidArgument, "per_country_total must be divisible by the ratio sum");
  }
  const auto cells = orig_identities_by_cell(manifest);
  std::set<std::string> held;
  for (const auto& country : manifest.countries()) {
    for (const Gender g : kGenders) {
      const CellKey key{country, g};
      const std::size_t needed = static_cast<std::size_t>(
          g == Gender::Male ? spec.males_per_country() : spec.females_per_country());
      const auto it = cells.find(key);
      const std::size_t available = it == cells.end() ? 0 : it->second.size();
      if (available < needed) insufficient(key, needed, available);
      if (needed == 0) continue;
      for (auto& id : pick(it->second, needed, seed, key)) held.insert(std::move(id));
    }
  }

  HoldoutSplit split;
  split.holdout.provenance = manifest.provenance + " | holdout seed=" + std::to_string(seed);
  split.pool.provenance = manifest.provenance + " | pool seed=" + std::to_string(seed);
  for (const auto& r : manifest.records) {
    const bool is_held = held.contains(r.identity_id);
    if (is_held && r.variant.is_orig()) {
      split.holdout.records.push_back(r);
    } else if (!is_held || !spec.disjoint) {
      split.pool.records.push_back(r);
    }
  }
  return split;
}

Manifest sample_kshot(const Manifest& pool, int k, double adversarial_fraction,
                      const VariantKind& adversarial, std::uint64_t seed) {
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be at least 1");
  if (!(adversarial_fraction >= 0.0 && adversarial_fraction <= 1.0)) {
    fail(ErrorCode::InvalidArgument, "adversarial fraction must lie in [0, 1]");
  }
  const auto cells = orig_identities_by_cell(pool);
  const auto countries = pool.countries();

  std::vector<CellKey> keys;
  std::map<CellKey, std::vector<std::string>> chosen;
  for (const auto& country : countries) {
    for (const Gender g : kGenders) {
      const CellKey key{country, g};
      const auto it = cells.find(key);
      const std::size_t available = it == cells.end() ? 0 : it->second.size();
      if (available < static_cast<std::size_t>(k)) insufficient(key, k, available);
      chosen[key] = pick(it->second, static_cast<std::size_t>(k), seed ^ 0x6b73686f74ULL, key);
      keys.push_back(key);
    }
  }

  // Adversarial allocation: floor(fraction * total) overall.
  constexpr double kEps = 1e-9;
  const int total = k * static_cast<int>(keys.size());
  const int target = static_cast<int>(std::floor(adversarial_fraction * total + kEps));
  const int base = static_cast<int>(std::floor(adversarial_fraction * k + kEps));
  int remainder = target - base * static_cast<int>(keys.size());
  std::map<CellKey, int> adversarial_count;
  for (const auto& key : keys) adversarial_count[key] = base;
  if (remainder > 0) {
    std::vector<CellKey> males, females;
    for (const auto& key : keys) (key.second == Gender::Male ? males : females).push_back(key);
    rng::Stream stream(rng::derive_seed(seed, "kshot-remainder"));
    rng::shuffle(std::span(males), stream);
    rng::shuffle(std::span(females), stream);
    std::vector<CellKey> order;
    for (std::size_t i = 0; i < std::max(males.size(), females.size()); ++i) {
      if (i < males.size()) order.push_back(males[i]);
      if (i < females.size()) order.push_back(females[i]);
    }
    for (std::size_t i = 0; i < order.size() && remainder > 0; ++i, --remainder) {
      ++adversarial_count[order[i]];
    }
  }

  const std::string adv_tag = adversarial.tag();
  Manifest out;
  out.provenance = pool.provenance + " | kshot k=" + std::to_string(k) +
                   " fraction=" + format_amplitude(adversarial_fraction) + " kind=" + adv_tag +
                   " seed=" + std::to_string(seed);
  for (const auto& key : keys) {
    const auto& ids = chosen[key];
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const bool use_adv = static_cast<int>(i) < adversarial_count[key];
      const std::string tag = use_adv ? adv_tag : "ORIG";
      const FaceRecord* rec = pool.find(ids[i], tag);
      if (rec == nullptr) {
        fail(ErrorCode::MissingVariant, "MissingVariant(" + ids[i] + ", " + tag + ")");
      }
      out.records.push_back(*rec);
    }
  }
  return out;
}

}  // namespace frsaudit
