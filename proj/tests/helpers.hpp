#pragma once

#include <filesystem>
#include <string>

#include "frsaudit/corpus.hpp"
#include "frsaudit/image.hpp"
#include "frsaudit/rng.hpp"

namespace testing {

inline frsaudit::ImageBuffer random_image(int w, int h, std::uint64_t seed) {
  frsaudit::ImageBuffer img(w, h);
  frsaudit::rng::Stream s(seed);
  for (auto& p : img.pixels()) p = static_cast<std::uint8_t>(s.below(256));
  return img;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("frsaudit_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// ORIG records: `per_cell` identities of each gender in each of `countries`.
inline frsaudit::Manifest synthetic_manifest(const std::vector<std::string>& countries,
                                             int males, int females) {
  using namespace frsaudit;
  Manifest m;
  m.provenance = "synthetic";
  for (const auto& c : countries) {
    for (const Gender g : kGenders) {
      const int n = g == Gender::Male ? males : females;
      for (int i = 0; i < n; ++i) {
        FaceRecord r;
        r.identity_id = c + "-" + std::string(to_string(g)) + "-" + std::to_string(i);
        r.display_name = r.identity_id;
        r.country = c;
        r.region = CountryRegistry::canonical().region_of(c);
        r.gender = g;
        r.variant = VariantKind::orig();
        r.record_id = make_record_id(r.identity_id, r.variant);
        r.image_ref = r.identity_id + ".png";
        r.width = kFaceWidth;
        r.height = kFaceHeight;
        m.records.push_back(r);
      }
    }
  }
  return m;
}

inline const std::vector<std::string>& eight_countries() {
  static const std::vector<std::string> c = {"AUS", "NZL", "ENG", "RSA",
                                             "BAN", "IND", "PAK", "WIN"};
  return c;
}

}  // namespace testing
