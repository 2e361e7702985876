#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace frsaudit {

/// 8-bit RGB raster, row-major, interleaved channels.
class ImageBuffer {
 public:
  static constexpr int kChannels = 3;

  ImageBuffer() = default;
  ImageBuffer(int width, int height, std::uint8_t fill = 0);
  ImageBuffer(int width, int height, std::vector<std::uint8_t> pixels);

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return pixels_.empty(); }

  std::uint8_t& at(int x, int y, int c) noexcept {
    return pixels_[index(x, y, c)];
  }
  std::uint8_t at(int x, int y, int c) const noexcept {
    return pixels_[index(x, y, c)];
  }

  std::span<std::uint8_t> pixels() noexcept { return pixels_; }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }

  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;

 private:
  std::size_t index(int x, int y, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Decode PNG/JPEG bytes. Greyscale sources are expanded to RGB.
ImageBuffer decode_image(std::span<const std::uint8_t> bytes);
ImageBuffer load_image(const std::filesystem::path& path);

std::vector<std::uint8_t> encode_png(const ImageBuffer& img);
std::vector<std::uint8_t> encode_jpeg(const ImageBuffer& img, int quality = 95);
void save_png(const ImageBuffer& img, const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes);
/// Writes to a sibling temp file and renames into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view text);

/// Axis-aligned source rectangle in pixel units (continuous coordinates;
/// pixel i spans [i, i+1)).
struct RectF {
  double x = 0, y = 0, width = 0, height = 0;
};

/// Bilinear resampling with half-pixel centers: output pixel (x, y) samples
/// source point (src.x + (x + 0.5) * src.width / out_w - 0.5, ...), with
/// neighbour indices clamped to the image. Results are rounded half up.
ImageBuffer resample_bilinear(const ImageBuffer& img, const RectF& src,
                              int out_width, int out_height);
ImageBuffer resize_bilinear(const ImageBuffer& img, int out_width,
                            int out_height);

}  // namespace frsaudit
