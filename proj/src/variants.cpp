#include "frsaudit/variants.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "frsaudit/error.hpp"
#include "frsaudit/rng.hpp"

namespace frsaudit {

namespace {

constexpr std::uint64_t kSpreadSalt = 0x5350524541440000ULL;  // "SPREAD"

}  // namespace

int noise_bound(double amplitude) {
  return static_cast<int>(std::floor(amplitude * 255.0 + 0.5));
}

ImageBuffer rgb_noise(const ImageBuffer& img, double amplitude, std::uint64_t seed) {
  if (!(amplitude > 0.0 && amplitude <= 1.0)) {
    fail(ErrorCode::BadAmplitude, "RGB noise amplitude must lie in (0, 1]");
  }
  const int bound = noise_bound(amplitude);
  ImageBuffer out = img;
  if (bound == 0) return out;
  const auto span = static_cast<std::uint64_t>(2 * bound + 1);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < ImageBuffer::kChannels; ++c) {
        const int n = static_cast<int>(rng::bounded(rng::keyed(seed, x, y, c), span)) - bound;
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(img.at(x, y, c) + n, 0, 255));
      }
    }
  }
  return out;
}

std::vector<PixelSwap> spread_schedule(int width, int height, int radius, std::uint64_t seed) {
  if (radius < 1) fail(ErrorCode::BadRadius, "spread radius must be at least 1");
  std::vector<PixelSwap> schedule;
  schedule.reserve(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y) {
    const int y0 = std::max(0, y - radius);
    const int wy = std::min(height - 1, y + radius) - y0 + 1;
    for (int x = 0; x < width; ++x) {
      const int x0 = std::max(0, x - radius);
      const int wx = std::min(width - 1, x + radius) - x0 + 1;
      const int p = y * width + x;
      const auto j = static_cast<int>(rng::bounded(rng::keyed(seed ^ kSpreadSalt, p),
                                                   static_cast<std::uint64_t>(wx) * wy));
      const int q = (y0 + j / wx) * width + (x0 + j % wx);
      schedule.push_back({p, q});
    }
  }
  return schedule;
}

ImageBuffer spread(const ImageBuffer& img, int radius, std::uint64_t seed) {
  const auto schedule = spread_schedule(img.width(), img.height(), radius, seed);
  ImageBuffer out = img;
  auto px = out.pixels();
  for (const auto& s : schedule) {
    for (int c = 0; c < ImageBuffer::kChannels; ++c) {
      std::swap(px[static_cast<std::size_t>(s.from) * 3 + c],
                px[static_cast<std::size_t>(s.to) * 3 + c]);
    }
  }
  return out;
}

ImageBuffer greyscale(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      const int luma =
          (299 * img.at(x, y, 0) + 587 * img.at(x, y, 1) + 114 * img.at(x, y, 2) + 500) / 1000;
      for (int c = 0; c < ImageBuffer::kChannels; ++c) {
        out.at(x, y, c) = static_cast<std::uint8_t>(luma);
      }
    }
  }
  return out;
}

// --- Mask -------------------------------------------------------------------

std::vector<Point2> MaskGeometry::polygon() const {
  const auto& l = landmarks;
  return {l.nose_bridge_left, l.nose_bridge_right, l.cheek_right,
          l.chin_right,       l.chin_left,         l.cheek_left};
}

double polygon_area(const std::vector<Point2>& poly) {
  double twice = 0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % poly.size()];
    twice += a.x * b.y - b.x * a.y;
  }
  return twice / 2;
}

namespace {

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Point2& p, const Point2& a, const Point2& b) {
  return std::min(a.x, b.x) <= p.x && p.x <= std::max(a.x, b.x) &&
         std::min(a.y, b.y) <= p.y && p.y <= std::max(a.y, b.y);
}

bool segments_intersect(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
  const double d1 = cross(c, d, a);
  const double d2 = cross(c, d, b);
  const double d3 = cross(a, b, c);
  const double d4 = cross(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) &&
      ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  return (d1 == 0 && on_segment(a, c, d)) || (d2 == 0 && on_segment(b, c, d)) ||
         (d3 == 0 && on_segment(c, a, b)) || (d4 == 0 && on_segment(d, a, b));
}

}  // namespace

bool polygon_is_simple(const std::vector<Point2>& poly) {
  const std::size_t n = poly.size();
  if (n < 3) return false;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool adjacent = j == i + 1 || (i == 0 && j == n - 1);
      if (adjacent) continue;
      if (segments_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n])) {
        return false;
      }
    }
  }
  return true;
}

bool polygon_contains(const std::vector<Point2>& poly, double x, double y) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > y) != (b.y > y) && x < (b.x - a.x) * (y - a.y) / (b.y - a.y) + a.x) {
      inside = !inside;
    }
  }
  return inside;
}

ImageBuffer apply_mask(const ImageBuffer& img, const MaskGeometry& geometry) {
  auto poly = geometry.polygon();
  for (auto& p : poly) {
    p.x = std::clamp(p.x, 0.0, static_cast<double>(img.width()));
    p.y = std::clamp(p.y, 0.0, static_cast<double>(img.height()));
  }
  ImageBuffer out = img;
  if (std::abs(polygon_area(poly)) < 1e-9) return out;
  if (!polygon_is_simple(poly)) {
    fail(ErrorCode::InvalidMaskPolygon, "mask polygon is self-intersecting");
  }
  double top = poly.front().y, bottom = poly.front().y;
  for (const auto& p : poly) {
    top = std::min(top, p.y);
    bottom = std::max(bottom, p.y);
  }
  const double extent = bottom - top;
  for (int y = 0; y < img.height(); ++y) {
    const double cy = y + 0.5;
    if (cy < top || cy > bottom) continue;
    const double t = extent > 0 ? (cy - top) / extent : 0.0;
    const double shade = 1.0 - MaskGeometry::kShadeRamp * t;
    for (int x = 0; x < img.width(); ++x) {
      if (!polygon_contains(poly, x + 0.5, cy)) continue;
      for (int c = 0; c < ImageBuffer::kChannels; ++c) {
        out.at(x, y, c) =
            static_cast<std::uint8_t>(std::floor(geometry.color[c] * shade + 0.5));
      }
    }
  }
  return out;
}

std::optional<MaskLandmarks> TemplateLandmarkProvider::locate(const FaceRecord&,
                                                              const ImageBuffer& image) const {
  if (image.empty()) return std::nullopt;
  const double w = image.width();
  const double h = image.height();
  MaskLandmarks l;
  l.nose_bridge_left = {0.36 * w, 0.50 * h};
  l.nose_bridge_right = {0.64 * w, 0.50 * h};
  l.cheek_right = {0.80 * w, 0.62 * h};
  l.chin_right = {0.66 * w, 0.90 * h};
  l.chin_left = {0.34 * w, 0.90 * h};
  l.cheek_left = {0.20 * w, 0.62 * h};
  return l;
}

FileLandmarkProvider::FileLandmarkProvider(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open landmarks file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
    for (const auto& [identity, pts] : doc.items()) {
      auto point = [&](const char* name) {
        const auto& p = pts.at(name);
        return Point2{p.at(0).get<double>(), p.at(1).get<double>()};
      };
      landmarks_[identity] = {point("nose_bridge_left"), point("nose_bridge_right"),
                              point("cheek_left"),       point("cheek_right"),
                              point("chin_left"),        point("chin_right")};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, "bad landmarks file: " + std::string(e.what()));
  }
}

std::optional<MaskLandmarks> FileLandmarkProvider::locate(const FaceRecord& record,
                                                          const ImageBuffer&) const {
  const auto it = landmarks_.find(record.identity_id);
  if (it == landmarks_.end()) return std::nullopt;
  return it->second;
}

ImageBuffer mask_face(const ImageBuffer& img, const FaceRecord& record,
                      const LandmarkProvider& provider) {
  const auto landmarks = provider.locate(record, img);
  if (!landmarks) {
    fail(ErrorCode::FaceNotFound, "no face landmarks for '" + record.identity_id + "'");
  }
  return apply_mask(img, MaskGeometry{*landmarks});
}

ImageBuffer apply_variant(const ImageBuffer& img, const VariantKind& kind,
                          const FaceRecord& record, const LandmarkProvider& provider) {
  using Kind = VariantKind::Kind;
  switch (kind.kind) {
    case Kind::Orig: return img;
    case Kind::Rgb: return rgb_noise(img, kind.amplitude.value_or(0.0), kind.seed.value_or(0));
    case Kind::Grey: return greyscale(img);
    case Kind::Spread: return spread(img, kind.radius.value_or(5), kind.seed.value_or(0));
    case Kind::Mask: return mask_face(img, record, provider);
  }
  return img;
}

// --- Generation -------------------------------------------------------------

std::string DirectoryVariantSink::store(const FaceRecord& record, const ImageBuffer& image) {
  const std::filesystem::path rel =
      std::filesystem::path(record.variant.tag()) / (record.identity_id + ".png");
  save_png(image, root_ / rel);
  return rel.generic_string();
}

std::string MemoryVariantSink::store(const FaceRecord& record, const ImageBuffer& image) {
  target_.put(record.record_id, image);
  return "mem://" + record.record_id;
}

nlohmann::json to_json_line(const VariantLogEntry& e) {
  nlohmann::json j{{"identity_id", e.identity_id}, {"kind", e.tag}, {"seed", e.seed},
                   {"status", e.ok ? "ok" : "failed"}};
  if (e.ok) j["image_ref"] = e.image_ref;
  else j["error"] = e.error;
  return j;
}

std::size_t VariantRun::failures() const {
  return static_cast<std::size_t>(
      std::count_if(log.begin(), log.end(), [](const auto& e) { return !e.ok; }));
}

std::uint64_t variant_seed(std::uint64_t master_seed, const std::string& identity_id,
                           const std::string& tag) {
  return rng::derive_seed(master_seed, identity_id, tag);
}

VariantRun generate_variants(const Manifest& manifest, const std::vector<VariantKind>& kinds,
                             std::uint64_t master_seed, const ImageSource& source,
                             VariantSink& sink, const LandmarkProvider& landmarks) {
  VariantRun run;
  run.manifest = manifest;
  for (const auto& kind : kinds) {
    if (kind.is_orig()) fail(ErrorCode::InvalidArgument, "ORIG is not a generated variant");
  }
  for (const auto& orig : manifest.records) {
    if (!orig.variant.is_orig()) continue;
    std::optional<ImageBuffer> pixels;
    for (const auto& requested : kinds) {
      VariantKind kind = requested;
      const std::string tag = kind.tag();
      VariantLogEntry entry{orig.identity_id, tag, 0, true, {}, {}};
      if (kind.kind == VariantKind::Kind::Rgb || kind.kind == VariantKind::Kind::Spread) {
        kind.seed = variant_seed(master_seed, orig.identity_id, tag);
        entry.seed = *kind.seed;
      } else {
        kind.seed.reset();
      }
      if (kind.kind == VariantKind::Kind::Spread && !kind.radius) kind.radius = 5;
      try {
        if (!pixels) pixels = source.load(orig);
        const ImageBuffer img = apply_variant(*pixels, kind, orig, landmarks);
        FaceRecord rec = orig;
        rec.variant = kind;
        rec.record_id = make_record_id(orig.identity_id, kind);
        rec.width = img.width();
        rec.height = img.height();
        rec.image_ref = sink.store(rec, img);
        entry.image_ref = rec.image_ref;
        run.manifest.records.push_back(std::move(rec));
      } catch (const Error& e) {
        entry.ok = false;
        entry.error = std::string(to_string(e.code())) + ": " + e.what();
      }
      run.log.push_back(std::move(entry));
    }
  }
  run.manifest.provenance = manifest.provenance + " | variants seed=" + std::to_string(master_seed);
  return run;
}

}  // namespace frsaudit
