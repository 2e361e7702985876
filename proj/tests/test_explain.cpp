#include <doctest.h>

#include <cmath>
#include <numeric>

#include "frsaudit/error.hpp"
#include "frsaudit/explain.hpp"
#include "frsaudit/rng.hpp"
#include "helpers.hpp"

using namespace frsaudit;
using namespace frsaudit::explain;
using model::ClassifierConfig;
using model::Network;
using model::Tensor;

namespace {

ClassifierConfig three_block(std::uint64_t seed) {
  ClassifierConfig c;
  c.input_width = 16;
  c.input_height = 20;
  c.conv_blocks = {{3, 3, 2}, {4, 3, 2}, {5, 3, 1}};
  c.dense = {6};
  c.weight_init_seed = seed;
  return c;
}

Tensor random_tensor(const ClassifierConfig& c, std::uint64_t seed) {
  Tensor t(c.input_channels, c.input_height, c.input_width);
  rng::Stream s(seed);
  for (auto& v : t.values) v = s.uniform();
  return t;
}

SaliencyMap random_map(int gw, int gh, int w, int h, std::uint64_t seed) {
  SaliencyMap m;
  m.grid_width = gw;
  m.grid_height = gh;
  m.width = w;
  m.height = h;
  rng::Stream s(seed);
  m.grid.resize(static_cast<std::size_t>(gw * gh));
  for (auto& v : m.grid) v = s.uniform();
  m.upsampled.resize(static_cast<std::size_t>(w * h));
  for (auto& v : m.upsampled) v = s.uniform();
  normalize_min_max(m.upsampled);
  return m;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Io;
}

}  // namespace

TEST_CASE("zero last-conv activations give an all-zero map") {
  const Network net(three_block(1));  // all parameters zero
  const auto m = gradcam(net, random_tensor(net.config(), 2), 0);
  for (const double v : m.grid) CHECK(v == 0.0);
  for (const double v : m.upsampled) CHECK(v == 0.0);
}

TEST_CASE("single-channel toy network matches the closed form on a 2x2 grid") {
  ClassifierConfig c;
  c.input_width = 2;
  c.input_height = 2;
  c.input_channels = 1;
  c.conv_blocks = {{1, 1, 1}};
  c.dense = {};
  Network net(c);
  net.tensor_values("conv0.weight")[0] = 2.0;
  auto lw = net.tensor_values("logits.weight");
  const double row[4] = {0.5, -1.0, 3.0, 1.5};
  for (int i = 0; i < 4; ++i) lw[i] = row[i];
  Tensor x(1, 2, 2);
  x.values = {0.25, -0.5, 1.0, 0.75};
  const auto m = gradcam(net, x, 0, "toy", 2, 2);
  // A = ReLU(2x) = {0.5, 0, 2, 1.5}; weight = mean(row) = 1.0.
  const double w = (0.5 - 1.0 + 3.0 + 1.5) / 4;
  const double A[4] = {0.5, 0.0, 2.0, 1.5};
  REQUIRE(m.grid.size() == 4);
  for (int i = 0; i < 4; ++i) CHECK(m.grid[i] == doctest::Approx(std::max(0.0, w * A[i])));
  // Class 1 has zero weights: zero map.
  const auto m1 = gradcam(net, x, 1, "toy", 2, 2);
  for (const double v : m1.grid) CHECK(v == 0.0);
  // Negative weight: ReLU clips everything.
  for (int i = 0; i < 4; ++i) lw[i] = -row[i];
  const auto neg = gradcam(net, x, 0, "toy", 2, 2);
  for (const double v : neg.grid) CHECK(v == 0.0);
}

TEST_CASE("channel weights match finite differences of the target logit") {
  for (std::uint64_t seed : {3ULL, 4ULL, 5ULL}) {
    const auto net = Network::initialized(three_block(seed));
    const auto x = random_tensor(net.config(), seed * 31);
    const auto act = net.forward(x);
    const auto& A = act.conv_outputs.back();
    for (int target = 0; target < 2; ++target) {
      const auto w = gradcam_channel_weights(net, x, target);
      const std::size_t plane = static_cast<std::size_t>(A.height) * A.width;
      const double h = 1e-5;
      for (int k = 0; k < A.channels; ++k) {
        Tensor up = A, down = A;
        for (std::size_t i = 0; i < plane; ++i) {
          up.values[k * plane + i] += h;
          down.values[k * plane + i] -= h;
        }
        const double numeric = (net.logits_from_last_conv(up)[target] -
                                net.logits_from_last_conv(down)[target]) /
                               (2 * h) / static_cast<double>(plane);
        const double rel = std::abs(w[k] - numeric) /
                           std::max({std::abs(w[k]), std::abs(numeric), 1e-8});
        CHECK(rel < 1e-3);
      }
    }
  }
}

TEST_CASE("map is unchanged when other class logits move") {
  auto net = Network::initialized(three_block(8));
  const auto x = random_tensor(net.config(), 9);
  const auto before = gradcam(net, x, 0);
  net.tensor_values("logits.bias")[1] += 5.0;
  const auto after = gradcam(net, x, 0);
  CHECK(before.grid == after.grid);
  CHECK(before.upsampled == after.upsampled);
}

TEST_CASE("map invariants: non-negative grid and unit maximum") {
  for (std::uint64_t seed = 10; seed < 20; ++seed) {
    const auto net = Network::initialized(three_block(seed));
    const auto m = gradcam(net, random_tensor(net.config(), seed), static_cast<int>(seed % 2));
    CHECK(m.width == kFaceWidth);
    CHECK(m.height == kFaceHeight);
    for (const double v : m.grid) CHECK(v >= 0.0);
    const bool zero = std::all_of(m.grid.begin(), m.grid.end(), [](double v) { return v == 0.0; });
    const double mx = *std::max_element(m.upsampled.begin(), m.upsampled.end());
    CHECK(mx == (zero ? 0.0 : 1.0));
  }
}

TEST_CASE("bad target class is rejected") {
  const auto net = Network::initialized(three_block(1));
  CHECK(code_of([&] { gradcam(net, random_tensor(net.config(), 1), 2); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("group average of one map is that map") {
  const auto m = random_map(3, 4, 10, 12, 1);
  const auto g = group_average_map({m}, "g");
  CHECK(g.upsampled == m.upsampled);
  CHECK(g.count == 1);
}

TEST_CASE("averaging with an all-zero map renormalises to the other map") {
  const auto m = random_map(3, 4, 10, 12, 2);
  auto z = m;
  std::fill(z.grid.begin(), z.grid.end(), 0.0);
  std::fill(z.upsampled.begin(), z.upsampled.end(), 0.0);
  const auto g = group_average_map({m, z});
  for (std::size_t i = 0; i < m.grid.size(); ++i) CHECK(g.grid[i] == doctest::Approx(m.grid[i] / 2));
  for (std::size_t i = 0; i < m.upsampled.size(); ++i) {
    CHECK(g.upsampled[i] == doctest::Approx(m.upsampled[i]).epsilon(1e-12));
  }
  CHECK(g.count == 2);
}

TEST_CASE("group average matches a scalar loop and ignores order") {
  std::vector<SaliencyMap> maps;
  for (std::uint64_t s = 0; s < 7; ++s) maps.push_back(random_map(4, 5, 20, 24, 100 + s));
  const auto g = group_average_map(maps);
  std::vector<double> mean(maps[0].upsampled.size(), 0.0);
  for (std::size_t i = 0; i < mean.size(); ++i) {
    for (const auto& m : maps) mean[i] += m.upsampled[i];
    mean[i] /= static_cast<double>(maps.size());
  }
  const double lo = *std::min_element(mean.begin(), mean.end());
  const double hi = *std::max_element(mean.begin(), mean.end());
  for (std::size_t i = 0; i < mean.size(); ++i) {
    CHECK(std::abs(g.upsampled[i] - (mean[i] - lo) / (hi - lo)) < 1e-6);
  }
  auto shuffled = maps;
  rng::Stream s(4);
  rng::shuffle(std::span(shuffled), s);
  const auto g2 = group_average_map(shuffled);
  CHECK(g2.upsampled == g.upsampled);
  CHECK(g2.grid == g.grid);
}

TEST_CASE("group average errors") {
  CHECK(code_of([] { group_average_map({}); }) == ErrorCode::EmptyGroup);
  CHECK(code_of([] { group_average_map({random_map(3, 4, 10, 12, 1), random_map(3, 4, 10, 13, 2)}); }) ==
        ErrorCode::DimMismatch);
}

TEST_CASE("uniform map profile equals zone areas") {
  SaliencyMap m;
  m.upsampled.assign(static_cast<std::size_t>(kFaceWidth * kFaceHeight), 0.7);
  const auto p = region_profile(m);
  // Count zone pixels by centre membership.
  double area[4] = {0, 0, 0, 0};
  for (int y = 0; y < kFaceHeight; ++y) {
    for (int x = 0; x < kFaceWidth; ++x) {
      const double fy = (y + 0.5) / kFaceHeight, fx = (x + 0.5) / kFaceWidth;
      int z = 3;
      if (fy >= 0.10 && fy < 0.35) z = 0;
      else if (fy >= 0.35 && fy < 0.60 && fx >= 0.35 && fx < 0.65) z = 1;
      else if (fy >= 0.60 && fy < 0.75 && fx >= 0.30 && fx < 0.70) z = 2;
      area[z] += 1;
    }
  }
  const double total = kFaceWidth * kFaceHeight;
  CHECK(p.forehead == doctest::Approx(area[0] / total));
  CHECK(p.nose == doctest::Approx(area[1] / total));
  CHECK(p.mouth == doctest::Approx(area[2] / total));
  CHECK(p.periphery == doctest::Approx(area[3] / total));
  CHECK(area[0] == 64 * 200);  // rows 26..89
  CHECK(p.forehead + p.nose + p.mouth + p.periphery == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("single nose pixel gives nose fraction one") {
  SaliencyMap m;
  m.upsampled.assign(static_cast<std::size_t>(kFaceWidth * kFaceHeight), 0.0);
  m.upsampled[static_cast<std::size_t>(120 * kFaceWidth + 100)] = 1.0;
  CHECK(zone_of(100, 120, kFaceWidth, kFaceHeight) == Zone::Nose);
  CHECK(region_profile(m).nose == 1.0);
}

TEST_CASE("gaussian bump on the nose dominates and matches direct summation") {
  SaliencyMap m;
  m.upsampled.resize(static_cast<std::size_t>(kFaceWidth * kFaceHeight));
  const double cx = 100, cy = 0.475 * kFaceHeight, sigma = 15;
  double nose = 0, total = 0;
  for (int y = 0; y < kFaceHeight; ++y) {
    for (int x = 0; x < kFaceWidth; ++x) {
      const double v = std::exp(-((x + 0.5 - cx) * (x + 0.5 - cx) + (y + 0.5 - cy) * (y + 0.5 - cy)) /
                                (2 * sigma * sigma));
      m.upsampled[static_cast<std::size_t>(y * kFaceWidth + x)] = v;
      total += v;
      if (y >= 90 && y < 154 && x >= 70 && x < 130) nose += v;  // centre-membership bounds
    }
  }
  const auto p = region_profile(m);
  CHECK(p.nose == doctest::Approx(nose / total).epsilon(1e-9));
  CHECK(p.nose > p.forehead);
  CHECK(p.nose > p.mouth);
  CHECK(p.nose > p.periphery);
}

TEST_CASE("exporters produce well-formed files") {
  const auto net = Network::initialized(three_block(2));
  const auto m = gradcam(net, random_tensor(net.config(), 3), 1, "r");
  const auto img = testing::random_image(kFaceWidth, kFaceHeight, 5);
  const auto overlay = heat_overlay(img, m);
  CHECK(overlay.width() == kFaceWidth);
  const auto grid = compose_grid({overlay, overlay, overlay}, 2);
  CHECK(grid.width() == 2 * kFaceWidth);
  CHECK(grid.height() == 2 * kFaceHeight);

  const auto dir = testing::temp_dir("npz");
  write_npz(dir / "m.npz", m);
  const auto bytes = read_file_bytes(dir / "m.npz");
  REQUIRE(bytes.size() > 8 * m.upsampled.size());
  CHECK(bytes[0] == 'P');
  CHECK(bytes[1] == 'K');
  const std::string text(bytes.begin(), bytes.end());
  CHECK(text.find("grid.npy") != std::string::npos);
  CHECK(text.find("'shape': (256, 200)") != std::string::npos);
}
