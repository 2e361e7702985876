#include "frsaudit/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "frsaudit/error.hpp"

namespace frsaudit {

ImageBuffer::ImageBuffer(int width, int height, std::uint8_t fill)
    : width_(width),
      height_(height),
      pixels_(static_cast<std::size_t>(width) * height * kChannels, fill) {
  if (width < 0 || height < 0) {
    fail(ErrorCode::InvalidArgument, "negative image dimensions");
  }
}

ImageBuffer::ImageBuffer(int width, int height, std::vector<std::uint8_t> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (pixels_.size() != static_cast<std::size_t>(width) * height * kChannels) {
    fail(ErrorCode::InvalidArgument, "pixel buffer size does not match dimensions");
  }
}

namespace {

ImageBuffer from_mat(const cv::Mat& bgr) {
  ImageBuffer out(bgr.cols, bgr.rows);
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      out.at(x, y, 0) = row[x][2];
      out.at(x, y, 1) = row[x][1];
      out.at(x, y, 2) = row[x][0];
    }
  }
  return out;
}

cv::Mat to_mat(const ImageBuffer& img) {
  cv::Mat bgr(img.height(), img.width(), CV_8UC3);
  for (int y = 0; y < img.height(); ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < img.width(); ++x) {
      row[x] = cv::Vec3b(img.at(x, y, 2), img.at(x, y, 1), img.at(x, y, 0));
    }
  }
  return bgr;
}

}  // namespace

ImageBuffer decode_image(std::span<const std::uint8_t> bytes) {
  if (bytes.empty()) fail(ErrorCode::UnreadableImage, "empty image data");
  const cv::Mat raw(1, static_cast<int>(bytes.size()), CV_8UC1,
                    const_cast<std::uint8_t*>(bytes.data()));
  cv::Mat bgr;
  try {
    bgr = cv::imdecode(raw, cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    fail(ErrorCode::UnreadableImage, e.what());
  }
  if (bgr.empty() || bgr.type() != CV_8UC3) {
    fail(ErrorCode::UnreadableImage, "could not decode image");
  }
  return from_mat(bgr);
}

ImageBuffer load_image(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const Error& e) {
    fail(ErrorCode::UnreadableImage, e.what());
  }
  try {
    return decode_image(bytes);
  } catch (const Error&) {
    fail(ErrorCode::UnreadableImage, "could not decode image " + path.string());
  }
}

std::vector<std::uint8_t> encode_png(const ImageBuffer& img) {
  std::vector<std::uint8_t> out;
  // Fixed compression level keeps the encoded bytes stable.
  if (!cv::imencode(".png", to_mat(img), out, {cv::IMWRITE_PNG_COMPRESSION, 6})) {
    fail(ErrorCode::Io, "PNG encoding failed");
  }
  return out;
}

std::vector<std::uint8_t> encode_jpeg(const ImageBuffer& img, int quality) {
  std::vector<std::uint8_t> out;
  if (!cv::imencode(".jpg", to_mat(img), out, {cv::IMWRITE_JPEG_QUALITY, quality})) {
    fail(ErrorCode::Io, "JPEG encoding failed");
  }
  return out;
}

void save_png(const ImageBuffer& img, const std::filesystem::path& path) {
  write_file_bytes(path, encode_png(img));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path,
                      std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::Io, "short write to " + path.string());
}

void write_file_atomic(const std::filesystem::path& path, std::string_view text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::Io, "cannot write " + tmp.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) fail(ErrorCode::Io, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

ImageBuffer resample_bilinear(const ImageBuffer& img, const RectF& src,
                              int out_width, int out_height) {
  if (img.empty()) fail(ErrorCode::InvalidArgument, "cannot resample empty image");
  ImageBuffer out(out_width, out_height);
  const double sx = src.width / out_width;
  const double sy = src.height / out_height;
  const int max_x = img.width() - 1;
  const int max_y = img.height() - 1;
  for (int y = 0; y < out_height; ++y) {
    const double fy = src.y + (y + 0.5) * sy - 0.5;
    const double fy0 = std::floor(fy);
    const double wy = fy - fy0;
    const int y0 = std::clamp(static_cast<int>(fy0), 0, max_y);
    const int y1 = std::clamp(static_cast<int>(fy0) + 1, 0, max_y);
    for (int x = 0; x < out_width; ++x) {
      const double fx = src.x + (x + 0.5) * sx - 0.5;
      const double fx0 = std::floor(fx);
      const double wx = fx - fx0;
      const int x0 = std::clamp(static_cast<int>(fx0), 0, max_x);
      const int x1 = std::clamp(static_cast<int>(fx0) + 1, 0, max_x);
      for (int c = 0; c < ImageBuffer::kChannels; ++c) {
        const double top = (1 - wx) * img.at(x0, y0, c) + wx * img.at(x1, y0, c);
        const double bottom = (1 - wx) * img.at(x0, y1, c) + wx * img.at(x1, y1, c);
        const double v = (1 - wy) * top + wy * bottom;
        out.at(x, y, c) =
            static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
      }
    }
  }
  return out;
}

ImageBuffer resize_bilinear(const ImageBuffer& img, int out_width, int out_height) {
  if (img.width() == out_width && img.height() == out_height) return img;
  return resample_bilinear(
      img, RectF{0, 0, static_cast<double>(img.width()), static_cast<double>(img.height())},
      out_width, out_height);
}

}  // namespace frsaudit
