#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "doctest.h"
#include "frsaudit/digest.hpp"
#include "frsaudit/error.hpp"
#include "frsaudit/variants.hpp"
#include "helpers.hpp"

using namespace frsaudit;

TEST_CASE("rgb_noise: amplitude rounding to zero is the identity") {
  const auto img = testing::random_image(32, 32, 1);
  CHECK(noise_bound(0.0019) == 0);
  CHECK(rgb_noise(img, 0.0019, 42) == img);
}

TEST_CASE("rgb_noise: deterministic and seed-sensitive") {
  const auto img = testing::random_image(40, 30, 2);
  CHECK(rgb_noise(img, 0.3, 42) == rgb_noise(img, 0.3, 42));
  CHECK_FALSE(rgb_noise(img, 0.3, 42) == rgb_noise(img, 0.3, 43));
  CHECK(rgb_noise(img, 0.3, 42).width() == 40);
}

TEST_CASE("rgb_noise: rejects amplitudes outside (0, 1]") {
  const auto img = testing::random_image(4, 4, 3);
  for (double a : {0.0, -0.1, 1.01}) {
    try {
      rgb_noise(img, a, 1);
      FAIL("expected BadAmplitude");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::BadAmplitude);
    }
  }
  CHECK_NOTHROW(rgb_noise(img, 1.0, 1));
}

TEST_CASE("rgb_noise: bound attained and mean |delta| matches the noise law") {
  const auto img = testing::random_image(64, 64, 4);
  const auto out = rgb_noise(img, 0.3, 99);
  const int bound = 77;  // round(0.3 * 255) = round(76.5)
  CHECK(noise_bound(0.3) == bound);

  int max_delta = 0;
  double sum = 0;
  // Brute-force oracle: exact mean and variance of |clamp(v + n) - v| for
  // n uniform on [-b, b], per input value.
  double expected = 0, variance = 0;
  for (int y = 0; y < 64; ++y) {
    for (int x = 0; x < 64; ++x) {
      for (int c = 0; c < 3; ++c) {
        const int v = img.at(x, y, c);
        const int d = std::abs(out.at(x, y, c) - v);
        max_delta = std::max(max_delta, d);
        sum += d;
        double m1 = 0, m2 = 0;
        for (int n = -bound; n <= bound; ++n) {
          const double a = std::abs(std::clamp(v + n, 0, 255) - v);
          m1 += a;
          m2 += a * a;
        }
        m1 /= 2 * bound + 1;
        m2 /= 2 * bound + 1;
        expected += m1;
        variance += m2 - m1 * m1;
      }
    }
  }
  const double count = 64.0 * 64 * 3;
  CHECK(max_delta == bound);
  const double sigma = std::sqrt(variance) / count;
  CHECK(std::abs(sum / count - expected / count) <= 3 * sigma);
}

TEST_CASE("spread: 1x1 image is fixed") {
  const auto img = testing::random_image(1, 1, 5);
  CHECK(spread(img, 3, 1) == img);
}

TEST_CASE("spread: rejects radius below 1") {
  try {
    spread(testing::random_image(3, 3, 1), 0, 1);
    FAIL("expected BadRadius");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::BadRadius);
  }
}

TEST_CASE("spread: 4x4 distinct pixels match an independent swap replay") {
  ImageBuffer img(4, 4);
  for (int i = 0; i < 16; ++i) {
    img.at(i % 4, i / 4, 0) = static_cast<std::uint8_t>(i * 10);
    img.at(i % 4, i / 4, 1) = static_cast<std::uint8_t>(i);
    img.at(i % 4, i / 4, 2) = static_cast<std::uint8_t>(200 - i);
  }
  const std::uint64_t seed = 1234;
  const auto out = spread(img, 1, seed);

  // Replay: visit raster positions, draw the partner uniformly from the
  // clipped 3x3 window with the documented counter-keyed draw, swap.
  int where[16];
  for (int i = 0; i < 16; ++i) where[i] = i;  // where[pos] = original index
  for (int p = 0; p < 16; ++p) {
    const int x = p % 4, y = p / 4;
    std::vector<int> window;
    for (int yy = std::max(0, y - 1); yy <= std::min(3, y + 1); ++yy) {
      for (int xx = std::max(0, x - 1); xx <= std::min(3, x + 1); ++xx) window.push_back(yy * 4 + xx);
    }
    const auto j = rng::bounded(rng::keyed(seed ^ 0x5350524541440000ULL, p), window.size());
    std::swap(where[p], where[window[j]]);
  }
  for (int p = 0; p < 16; ++p) {
    const int src = where[p];
    CHECK(out.at(p % 4, p / 4, 0) == img.at(src % 4, src / 4, 0));
    CHECK(out.at(p % 4, p / 4, 1) == img.at(src % 4, src / 4, 1));
  }
}

TEST_CASE("spread: every swap stays within the radius") {
  const auto schedule = spread_schedule(37, 23, 5, 8);
  CHECK(schedule.size() == 37u * 23u);
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    const auto& s = schedule[i];
    CHECK(s.from == static_cast<int>(i));
    CHECK(std::abs(s.from % 37 - s.to % 37) <= 5);
    CHECK(std::abs(s.from / 37 - s.to / 37) <= 5);
  }
}

TEST_CASE("greyscale: fixed points, red and idempotence") {
  ImageBuffer img(2, 1);
  img.at(0, 0, 0) = img.at(0, 0, 1) = img.at(0, 0, 2) = 128;
  img.at(1, 0, 0) = 255;
  const auto g = greyscale(img);
  CHECK(g.at(0, 0, 0) == 128);
  CHECK(g.at(0, 0, 2) == 128);
  // round(0.299 * 255) = round(76.245)
  CHECK(g.at(1, 0, 0) == 76);
  CHECK(g.at(1, 0, 1) == 76);
  CHECK(g.at(1, 0, 2) == 76);

  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto once = greyscale(testing::random_image(17, 9, s));
    CHECK(greyscale(once) == once);
  }
}

namespace {

MaskLandmarks rectangle_landmarks(double x0, double y0, double x1, double y1) {
  const double ym = (y0 + y1) / 2;
  MaskLandmarks l;
  l.nose_bridge_left = {x0, y0};
  l.nose_bridge_right = {x1, y0};
  l.cheek_right = {x1, ym};
  l.chin_right = {x1, y1};
  l.chin_left = {x0, y1};
  l.cheek_left = {x0, ym};
  return l;
}

class FailingProvider final : public LandmarkProvider {
 public:
  explicit FailingProvider(std::set<std::string> missing) : missing_(std::move(missing)) {}
  std::optional<MaskLandmarks> locate(const FaceRecord& r, const ImageBuffer& img) const override {
    if (missing_.contains(r.identity_id)) return std::nullopt;
    return TemplateLandmarkProvider().locate(r, img);
  }

 private:
  std::set<std::string> missing_;
};

}  // namespace

TEST_CASE("apply_mask: zero-area polygon leaves the image unchanged") {
  const auto img = testing::random_image(30, 30, 6);
  CHECK(apply_mask(img, MaskGeometry{rectangle_landmarks(5, 5, 5, 20)}) == img);
}

TEST_CASE("apply_mask: axis-aligned rectangle changes exactly its pixels") {
  const auto img = testing::random_image(40, 50, 7);
  const int x0 = 8, y0 = 10, x1 = 30, y1 = 41;
  MaskGeometry geom{rectangle_landmarks(x0, y0, x1, y1)};
  const auto out = apply_mask(img, geom);
  for (int y = 0; y < 50; ++y) {
    for (int x = 0; x < 40; ++x) {
      const bool inside = x >= x0 && x < x1 && y >= y0 && y < y1;
      for (int c = 0; c < 3; ++c) {
        if (inside) {
          const double t = (y + 0.5 - y0) / (y1 - y0);
          const double v = geom.color[c] * (1 - MaskGeometry::kShadeRamp * t);
          REQUIRE(out.at(x, y, c) == static_cast<int>(std::floor(v + 0.5)));
        } else {
          REQUIRE(out.at(x, y, c) == img.at(x, y, c));
        }
      }
    }
  }
}

TEST_CASE("apply_mask: self-intersecting polygon is rejected") {
  auto l = rectangle_landmarks(5, 5, 25, 25);
  std::swap(l.chin_left, l.chin_right);
  try {
    apply_mask(testing::random_image(30, 30, 1), MaskGeometry{l});
    FAIL("expected InvalidMaskPolygon");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidMaskPolygon);
  }
}

TEST_CASE("mask_face: landmark failure surfaces FaceNotFound") {
  FaceRecord r;
  r.identity_id = "x";
  try {
    mask_face(testing::random_image(20, 20, 1), r, FailingProvider({"x"}));
    FAIL("expected FaceNotFound");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::FaceNotFound);
  }
}

namespace {

struct Corpus {
  Manifest manifest;
  MemoryImageSource images;
};

Corpus ten_faces() {
  Corpus c;
  c.manifest = testing::synthetic_manifest({"AUS", "IND"}, 3, 2);
  for (const auto& r : c.manifest.records) {
    c.images.put(r.record_id, testing::random_image(kFaceWidth, kFaceHeight,
                                                    rng::hash_string(r.identity_id)));
  }
  return c;
}

}  // namespace

TEST_CASE("generate_variants: counts per requested kind") {
  auto corpus = ten_faces();
  REQUIRE(corpus.manifest.records.size() == 10);
  MemoryImageSource out;
  MemoryVariantSink sink(out);
  const auto run = generate_variants(
      corpus.manifest,
      {VariantKind::rgb(0.3), VariantKind::rgb(0.5), VariantKind::spread(), VariantKind::grey()},
      7, corpus.images, sink, TemplateLandmarkProvider());
  CHECK(run.manifest.records.size() == 50);
  CHECK(run.failures() == 0);
  CHECK_NOTHROW(run.manifest.validate());
  const auto* rec = run.manifest.find(corpus.manifest.records[0].identity_id, "RGB0.3");
  REQUIRE(rec != nullptr);
  CHECK(rec->variant.seed.has_value());
}

TEST_CASE("generate_variants: landmark failures shrink only the MASK set") {
  auto corpus = ten_faces();
  MemoryImageSource out;
  MemoryVariantSink sink(out);
  const FailingProvider provider(
      {corpus.manifest.records[1].identity_id, corpus.manifest.records[4].identity_id});
  const auto run = generate_variants(corpus.manifest, {VariantKind::grey(), VariantKind::mask()}, 7,
                                     corpus.images, sink, provider);
  CHECK(run.manifest.filter_variant("MASK").records.size() == 8);
  CHECK(run.manifest.filter_variant("GREY").records.size() == 10);
  CHECK(run.failures() == 2);
}

TEST_CASE("generate_variants: output independent of manifest order") {
  auto corpus = ten_faces();
  const std::vector<VariantKind> kinds = {VariantKind::rgb(0.3), VariantKind::spread(3)};

  auto hashes = [&](const Manifest& m) {
    MemoryImageSource out;
    MemoryVariantSink sink(out);
    const auto run = generate_variants(m, kinds, 21, corpus.images, sink, TemplateLandmarkProvider());
    std::map<std::string, std::string> h;
    for (const auto& r : run.manifest.records) {
      if (!r.variant.is_orig()) h[r.record_id] = digest::sha256_hex(encode_png(out.load(r)));
    }
    return h;
  };
  auto shuffled = corpus.manifest;
  rng::Stream s(5);
  rng::shuffle(std::span(shuffled.records), s);
  CHECK(hashes(corpus.manifest) == hashes(shuffled));
}

TEST_CASE("generate_variants: directory sink layout") {
  auto corpus = ten_faces();
  const auto dir = testing::temp_dir("variants_out");
  DirectoryVariantSink sink(dir);
  const auto run = generate_variants(corpus.manifest, {VariantKind::grey()}, 1, corpus.images, sink,
                                     TemplateLandmarkProvider());
  const auto& id = corpus.manifest.records[0].identity_id;
  CHECK(std::filesystem::exists(dir / "GREY" / (id + ".png")));
  CHECK(run.manifest.find(id, "GREY")->image_ref == "GREY/" + id + ".png");
  const auto loaded = load_image(dir / "GREY" / (id + ".png"));
  CHECK(loaded == greyscale(corpus.images.load(corpus.manifest.records[0])));
}
