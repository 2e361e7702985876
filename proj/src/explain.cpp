#include "frsaudit/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <zlib.h>

#include "frsaudit/error.hpp"

namespace frsaudit::explain {

namespace {

void check_target(const model::Network& net, int target_class) {
  if (net.config().conv_blocks.empty()) fail(ErrorCode::NoConvLayer, "model has no conv layer");
  if (target_class < 0 || target_class >= net.config().classes()) {
    fail(ErrorCode::InvalidArgument, "target class " + std::to_string(target_class) +
                                         " out of range for " +
                                         std::to_string(net.config().classes()) + " classes");
  }
}

struct CamParts {
  model::Network::Activations act;
  std::vector<double> weights;
};

CamParts cam_parts(const model::Network& net, const model::Tensor& input, int target_class) {
  check_target(net, target_class);
  CamParts parts{net.forward(input), {}};
  std::vector<double> d_logits(static_cast<std::size_t>(net.config().classes()), 0.0);
  d_logits[static_cast<std::size_t>(target_class)] = 1.0;
  model::Tensor dA;
  net.backward(parts.act, d_logits, {}, {}, &dA);
  const std::size_t plane = static_cast<std::size_t>(dA.height) * dA.width;
  parts.weights.assign(static_cast<std::size_t>(dA.channels), 0.0);
  for (int c = 0; c < dA.channels; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += dA.values[c * plane + i];
    parts.weights[static_cast<std::size_t>(c)] = s / static_cast<double>(plane);
  }
  return parts;
}

}  // namespace

std::vector<double> gradcam_channel_weights(const model::Network& net, const model::Tensor& input,
                                            int target_class) {
  return cam_parts(net, input, target_class).weights;
}

std::vector<double> weighted_activation(const model::Tensor& activation,
                                        const std::vector<double>& weights) {
  if (weights.size() != static_cast<std::size_t>(activation.channels)) {
    fail(ErrorCode::DimMismatch, "one weight per channel required");
  }
  const std::size_t plane = static_cast<std::size_t>(activation.height) * activation.width;
  std::vector<double> out(plane, 0.0);
  for (int c = 0; c < activation.channels; ++c) {
    const double w = weights[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < plane; ++i) out[i] += w * activation.values[c * plane + i];
  }
  for (auto& v : out) v = std::max(v, 0.0);
  return out;
}

std::vector<double> upsample_bilinear(const std::vector<double>& grid, int gw, int gh, int ow,
                                      int oh) {
  std::vector<double> out(static_cast<std::size_t>(ow) * oh);
  const double sx = static_cast<double>(gw) / ow, sy = static_cast<double>(gh) / oh;
  for (int y = 0; y < oh; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(gh - 1));
    const int y0 = static_cast<int>(std::floor(fy));
    const int y1 = std::min(y0 + 1, gh - 1);
    const double ty = fy - y0;
    for (int x = 0; x < ow; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(gw - 1));
      const int x0 = static_cast<int>(std::floor(fx));
      const int x1 = std::min(x0 + 1, gw - 1);
      const double tx = fx - x0;
      auto g = [&](int xx, int yy) { return grid[static_cast<std::size_t>(yy) * gw + xx]; };
      const double top = g(x0, y0) * (1 - tx) + g(x1, y0) * tx;
      const double bot = g(x0, y1) * (1 - tx) + g(x1, y1) * tx;
      out[static_cast<std::size_t>(y) * ow + x] = top * (1 - ty) + bot * ty;
    }
  }
  return out;
}

void normalize_min_max(std::vector<double>& values) {
  if (values.empty()) return;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi == lo) {
    std::fill(values.begin(), values.end(), hi == 0.0 ? 0.0 : 1.0);
    return;
  }
  for (auto& v : values) v = (v - lo) / (hi - lo);
}

SaliencyMap gradcam(const model::Network& net, const model::Tensor& input, int target_class,
                    std::string record_id, int out_width, int out_height) {
  const auto parts = cam_parts(net, input, target_class);
  const auto& A = parts.act.conv_outputs.back();
  SaliencyMap m;
  m.grid_width = A.width;
  m.grid_height = A.height;
  m.grid = weighted_activation(A, parts.weights);
  m.width = out_width;
  m.height = out_height;
  m.upsampled = upsample_bilinear(m.grid, A.width, A.height, out_width, out_height);
  normalize_min_max(m.upsampled);
  m.target_class = target_class;
  m.record_id = std::move(record_id);
  return m;
}

SaliencyMap group_average_map(const std::vector<SaliencyMap>& maps, std::string group_label) {
  if (maps.empty()) fail(ErrorCode::EmptyGroup, "no maps for group '" + group_label + "'");
  const auto& first = maps.front();
  for (const auto& m : maps) {
    if (m.grid_width != first.grid_width || m.grid_height != first.grid_height ||
        m.width != first.width || m.height != first.height ||
        m.grid.size() != first.grid.size() || m.upsampled.size() != first.upsampled.size()) {
      fail(ErrorCode::DimMismatch, "saliency maps in group '" + group_label + "' differ in size");
    }
  }
  // Sorting each pixel's values before summing makes the mean independent of
  // the order of `maps`.
  auto mean_of = [&](auto member) {
    const std::size_t n = (first.*member).size();
    std::vector<double> out(n), column(maps.size());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < maps.size(); ++k) column[k] = (maps[k].*member)[i];
      std::sort(column.begin(), column.end());
      double s = 0;
      for (const double v : column) s += v;
      out[i] = s / static_cast<double>(maps.size());
    }
    return out;
  };
  SaliencyMap out;
  out.grid_width = first.grid_width;
  out.grid_height = first.grid_height;
  out.width = first.width;
  out.height = first.height;
  out.grid = mean_of(&SaliencyMap::grid);
  out.upsampled = mean_of(&SaliencyMap::upsampled);
  normalize_min_max(out.upsampled);
  out.target_class = first.target_class;
  out.record_id = std::move(group_label);
  out.count = 0;
  for (const auto& m : maps) out.count += m.count;
  return out;
}

Zone zone_of(int x, int y, int width, int height) {
  const double fy = (y + 0.5) / height, fx = (x + 0.5) / width;
  if (fy >= 0.10 && fy < 0.35) return Zone::Forehead;
  if (fy >= 0.35 && fy < 0.60 && fx >= 0.35 && fx < 0.65) return Zone::Nose;
  if (fy >= 0.60 && fy < 0.75 && fx >= 0.30 && fx < 0.70) return Zone::Mouth;
  return Zone::Periphery;
}

ZoneProfile region_profile(const SaliencyMap& map) {
  double total = 0;
  for (const double v : map.upsampled) total += v;
  const bool uniform = total <= 0.0;
  double mass[4] = {0, 0, 0, 0};
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      mass[static_cast<int>(zone_of(x, y, map.width, map.height))] += uniform ? 1.0 : map.at(x, y);
    }
  }
  const double sum = mass[0] + mass[1] + mass[2] + mass[3];
  return {mass[0] / sum, mass[1] / sum, mass[2] / sum, mass[3] / sum};
}

nlohmann::json to_json(const ZoneProfile& p) {
  return {{"forehead", p.forehead}, {"nose", p.nose}, {"mouth", p.mouth}, {"periphery", p.periphery}};
}

ImageBuffer heat_overlay(const ImageBuffer& image, const SaliencyMap& map, double alpha) {
  const ImageBuffer base = (image.width() == map.width && image.height() == map.height)
                               ? image
                               : resize_bilinear(image, map.width, map.height);
  ImageBuffer out(map.width, map.height);
  for (int y = 0; y < map.height; ++y) {
    for (int x = 0; x < map.width; ++x) {
      const double v = std::clamp(map.at(x, y), 0.0, 1.0);
      // Blue -> cyan -> yellow -> red.
      const double r = std::clamp(1.5 - std::abs(4 * v - 3), 0.0, 1.0);
      const double g = std::clamp(1.5 - std::abs(4 * v - 2), 0.0, 1.0);
      const double b = std::clamp(1.5 - std::abs(4 * v - 1), 0.0, 1.0);
      const double heat[3] = {r * 255, g * 255, b * 255};
      for (int c = 0; c < 3; ++c) {
        const double mixed = (1 - alpha) * base.at(x, y, c) + alpha * heat[c];
        out.at(x, y, c) = static_cast<std::uint8_t>(std::clamp(std::floor(mixed + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

ImageBuffer compose_grid(const std::vector<ImageBuffer>& tiles, int columns) {
  if (tiles.empty() || columns < 1) fail(ErrorCode::InvalidArgument, "nothing to compose");
  const int tw = tiles[0].width(), th = tiles[0].height();
  for (const auto& t : tiles) {
    if (t.width() != tw || t.height() != th) fail(ErrorCode::DimMismatch, "tiles differ in size");
  }
  const int n = static_cast<int>(tiles.size());
  const int cols = std::min(columns, n), rows = (n + cols - 1) / cols;
  ImageBuffer out(cols * tw, rows * th);
  for (auto& p : out.pixels()) p = 255;
  for (int i = 0; i < n; ++i) {
    const int ox = (i % cols) * tw, oy = (i / cols) * th;
    for (int y = 0; y < th; ++y)
      for (int x = 0; x < tw; ++x)
        for (int c = 0; c < 3; ++c) out.at(ox + x, oy + y, c) = tiles[static_cast<std::size_t>(i)].at(x, y, c);
  }
  return out;
}

// --- NPZ ---------------------------------------------------------------------

namespace {

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::vector<std::uint8_t> npy(const std::vector<double>& values, int rows, int cols) {
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': (" +
                       std::to_string(rows) + ", " + std::to_string(cols) + "), }";
  // Magic (6) + version (2) + length (2) + header must be a multiple of 64.
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::vector<std::uint8_t> out = {0x93, 'N', 'U', 'M', 'P', 'Y', 1, 0};
  put16(out, static_cast<std::uint16_t>(header.size()));
  out.insert(out.end(), header.begin(), header.end());
  for (const double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

}  // namespace

void write_npz(const std::filesystem::path& path, const SaliencyMap& map) {
  const std::vector<std::pair<std::string, std::vector<std::uint8_t>>> entries = {
      {"grid.npy", npy(map.grid, map.grid_height, map.grid_width)},
      {"upsampled.npy", npy(map.upsampled, map.height, map.width)}};
  std::vector<std::uint8_t> zip, central;
  for (const auto& [name, data] : entries) {
    const auto crc = static_cast<std::uint32_t>(
        crc32(0L, data.data(), static_cast<uInt>(data.size())));
    const auto offset = static_cast<std::uint32_t>(zip.size());
    const auto size = static_cast<std::uint32_t>(data.size());
    // Local file header: stored, no data descriptor, DOS date 1980-01-01.
    put32(zip, 0x04034b50);
    put16(zip, 20);
    put16(zip, 0);
    put16(zip, 0);
    put16(zip, 0);
    put16(zip, 0x21);
    put32(zip, crc);
    put32(zip, size);
    put32(zip, size);
    put16(zip, static_cast<std::uint16_t>(name.size()));
    put16(zip, 0);
    zip.insert(zip.end(), name.begin(), name.end());
    zip.insert(zip.end(), data.begin(), data.end());

    put32(central, 0x02014b50);
    put16(central, 20);
    put16(central, 20);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0x21);
    put32(central, crc);
    put32(central, size);
    put32(central, size);
    put16(central, static_cast<std::uint16_t>(name.size()));
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put16(central, 0);
    put32(central, 0);
    put32(central, offset);
    central.insert(central.end(), name.begin(), name.end());
  }
  const auto cd_offset = static_cast<std::uint32_t>(zip.size());
  zip.insert(zip.end(), central.begin(), central.end());
  put32(zip, 0x06054b50);
  put16(zip, 0);
  put16(zip, 0);
  put16(zip, static_cast<std::uint16_t>(entries.size()));
  put16(zip, static_cast<std::uint16_t>(entries.size()));
  put32(zip, static_cast<std::uint32_t>(central.size()));
  put32(zip, cd_offset);
  put16(zip, 0);
  write_file_bytes(path, zip);
}

}  // namespace frsaudit::explain
