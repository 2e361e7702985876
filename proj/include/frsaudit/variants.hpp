#pragma once

// Deterministic adversarial image filters. Every filter is a pure function of
// (input pixels, parameters, seed); randomness is drawn from a counter-based
// generator so results never depend on evaluation order.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "frsaudit/corpus.hpp"
#include "frsaudit/image.hpp"

namespace frsaudit {

/// Bound of the additive noise: round(amplitude * 255), half up.
int noise_bound(double amplitude);

/// Additive uniform integer noise in [-b, b] per channel per pixel, clamped
/// to [0, 255]. Throws BadAmplitude unless amplitude is in (0, 1].
ImageBuffer rgb_noise(const ImageBuffer& img, double amplitude, std::uint64_t seed);

struct PixelSwap {
  int from;  // raster index of the visited pixel
  int to;    // raster index of its partner
};

/// The swap schedule used by spread(): each position visited once in raster
/// order and paired with a uniformly drawn position within Chebyshev
/// distance `radius` (window clipped at the image border).
std::vector<PixelSwap> spread_schedule(int width, int height, int radius, std::uint64_t seed);

/// Pixel-swap spread. Preserves the multiset of pixel values exactly.
ImageBuffer spread(const ImageBuffer& img, int radius, std::uint64_t seed);

/// y = round(0.299 R + 0.587 G + 0.114 B), half up, written to all channels.
ImageBuffer greyscale(const ImageBuffer& img);

struct Point2 {
  double x = 0, y = 0;
};

/// Six facial anchors the mask polygon is built from.
struct MaskLandmarks {
  Point2 nose_bridge_left, nose_bridge_right;
  Point2 cheek_left, cheek_right;
  Point2 chin_left, chin_right;
};

struct MaskGeometry {
  static constexpr std::array<std::uint8_t, 3> kN95Blue = {65, 105, 225};
  /// Brightness falls linearly by this fraction from the top of the mask to
  /// its bottom edge.
  static constexpr double kShadeRamp = 0.3;

  MaskLandmarks landmarks;
  std::array<std::uint8_t, 3> color = kN95Blue;

  /// bridge L, bridge R, cheek R, chin R, chin L, cheek L.
  std::vector<Point2> polygon() const;
};

double polygon_area(const std::vector<Point2>& poly);
bool polygon_is_simple(const std::vector<Point2>& poly);
/// Even-odd test at a point; used with pixel centres (x + 0.5, y + 0.5).
bool polygon_contains(const std::vector<Point2>& poly, double x, double y);

/// Fills polygon-interior pixels with the mask colour times the shade ramp.
/// Vertices are clamped to the image. A zero-area polygon leaves the image
/// unchanged; a self-intersecting one throws InvalidMaskPolygon.
ImageBuffer apply_mask(const ImageBuffer& img, const MaskGeometry& geometry);

/// Pluggable landmark detection. nullopt means no face was found.
class LandmarkProvider {
 public:
  virtual ~LandmarkProvider() = default;
  virtual std::optional<MaskLandmarks> locate(const FaceRecord& record,
                                              const ImageBuffer& image) const = 0;
};

/// Fixed fractional anchor positions for aligned 200x256 face crops.
class TemplateLandmarkProvider final : public LandmarkProvider {
 public:
  std::optional<MaskLandmarks> locate(const FaceRecord& record,
                                      const ImageBuffer& image) const override;
};

/// Landmarks read from a JSON object keyed by identity_id:
/// {"<identity>": {"nose_bridge_left": [x, y], ...}}. Identities absent from
/// the file are reported as FaceNotFound.
class FileLandmarkProvider final : public LandmarkProvider {
 public:
  explicit FileLandmarkProvider(const std::filesystem::path& path);
  std::optional<MaskLandmarks> locate(const FaceRecord& record,
                                      const ImageBuffer& image) const override;

 private:
  std::map<std::string, MaskLandmarks> landmarks_;
};

/// Locates landmarks and composites the mask; throws FaceNotFound when the
/// provider cannot locate the face.
ImageBuffer mask_face(const ImageBuffer& img, const FaceRecord& record,
                      const LandmarkProvider& provider);

/// Applies one variant kind with explicit parameters (seed required for RGB
/// and SPRD).
ImageBuffer apply_variant(const ImageBuffer& img, const VariantKind& kind,
                          const FaceRecord& record, const LandmarkProvider& provider);

/// Destination of generated variant images; returns the stored image_ref.
class VariantSink {
 public:
  virtual ~VariantSink() = default;
  virtual std::string store(const FaceRecord& record, const ImageBuffer& image) = 0;
};

/// Writes `<root>/<tag>/<identity_id>.png`; image_refs relative to `root`.
class DirectoryVariantSink final : public VariantSink {
 public:
  explicit DirectoryVariantSink(std::filesystem::path root) : root_(std::move(root)) {}
  std::string store(const FaceRecord& record, const ImageBuffer& image) override;

 private:
  std::filesystem::path root_;
};

class MemoryVariantSink final : public VariantSink {
 public:
  explicit MemoryVariantSink(MemoryImageSource& target) : target_(target) {}
  std::string store(const FaceRecord& record, const ImageBuffer& image) override;

 private:
  MemoryImageSource& target_;
};

struct VariantLogEntry {
  std::string identity_id;
  std::string tag;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string image_ref;
  std::string error;
};

nlohmann::json to_json_line(const VariantLogEntry& entry);

struct VariantRun {
  Manifest manifest;  // input records plus every generated variant record
  std::vector<VariantLogEntry> log;
  std::size_t failures() const;
};

/// Per-image seed: hash(master_seed, identity_id, tag), so output does not
/// depend on manifest order.
std::uint64_t variant_seed(std::uint64_t master_seed, const std::string& identity_id,
                           const std::string& tag);

/// One new record per (ORIG identity, requested kind). Failures (for example
/// FaceNotFound while masking) keep the image out of that variant set only.
VariantRun generate_variants(const Manifest& manifest, const std::vector<VariantKind>& kinds,
                             std::uint64_t master_seed, const ImageSource& source,
                             VariantSink& sink, const LandmarkProvider& landmarks);

}  // namespace frsaudit
