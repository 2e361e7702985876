#pragma once

// Grad-CAM saliency for the local classifier, group-averaged maps, face-zone
// mass profiles and exporters (heat overlay PNG, NPZ float grids).

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "frsaudit/corpus.hpp"
#include "frsaudit/image.hpp"
#include "frsaudit/model.hpp"

namespace frsaudit::explain {

struct SaliencyMap {
  int grid_width = 0, grid_height = 0;
  std::vector<double> grid;  // row-major, >= 0
  int width = kFaceWidth, height = kFaceHeight;
  std::vector<double> upsampled;  // row-major, min-max normalised to [0, 1]
  int target_class = 0;
  std::string record_id;
  int count = 1;  // maps averaged into this one

  double grid_at(int x, int y) const { return grid[static_cast<std::size_t>(y) * grid_width + x]; }
  double at(int x, int y) const { return upsampled[static_cast<std::size_t>(y) * width + x]; }
};

/// Grad-CAM on the last conv layer: channel weights are the spatial means of
/// d(target logit)/dA, map = ReLU(sum_k w_k A_k), upsampled bilinearly to
/// out_width x out_height and min-max normalised. Throws NoConvLayer,
/// InvalidArgument for a bad target class.
SaliencyMap gradcam(const model::Network& net, const model::Tensor& input, int target_class,
                    std::string record_id = {}, int out_width = kFaceWidth,
                    int out_height = kFaceHeight);

/// Per-channel Grad-CAM weights (exposed for verification).
std::vector<double> gradcam_channel_weights(const model::Network& net, const model::Tensor& input,
                                            int target_class);

/// ReLU(sum_k w_k A_k) over a CHW activation.
std::vector<double> weighted_activation(const model::Tensor& activation,
                                        const std::vector<double>& weights);

/// Bilinear (half-pixel centres) upsampling of a row-major grid.
std::vector<double> upsample_bilinear(const std::vector<double>& grid, int gw, int gh, int ow,
                                      int oh);

/// (v - min) / (max - min); a constant non-zero map becomes all ones, an
/// all-zero map stays zero.
void normalize_min_max(std::vector<double>& values);

/// Pixelwise mean of grids and upsampled maps, re-normalised. The result does
/// not depend on the order of `maps`. Throws EmptyGroup, DimMismatch.
SaliencyMap group_average_map(const std::vector<SaliencyMap>& maps, std::string group_label = {});

struct ZoneProfile {
  double forehead = 0, nose = 0, mouth = 0, periphery = 0;
};

enum class Zone { Forehead, Nose, Mouth, Periphery };

/// Zones as fractions of the frame (a pixel belongs to a zone when its centre
/// does): forehead rows [0.10, 0.35) full width; nose rows [0.35, 0.60) x
/// cols [0.35, 0.65); mouth rows [0.60, 0.75) x cols [0.30, 0.70);
/// periphery everything else.
Zone zone_of(int x, int y, int width, int height);

/// Mass fraction of the upsampled map per zone. An all-zero map is treated as
/// uniform.
ZoneProfile region_profile(const SaliencyMap& map);

nlohmann::json to_json(const ZoneProfile& p);

/// Heat overlay: blue-to-red colour ramp blended over the image.
ImageBuffer heat_overlay(const ImageBuffer& image, const SaliencyMap& map, double alpha = 0.5);

/// Tiles equally sized images into a grid with `columns` columns.
ImageBuffer compose_grid(const std::vector<ImageBuffer>& tiles, int columns);

/// Uncompressed .npz with grid.npy and upsampled.npy (float64, C order).
void write_npz(const std::filesystem::path& path, const SaliencyMap& map);

}  // namespace frsaudit::explain
