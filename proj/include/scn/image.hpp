#pragma once

#include <filesystem>

#include <Eigen/Core>

#include "scn/geometry.hpp"

namespace scn {

/// Planar-per-pixel image: `pixels` is channels x (height*width), column
/// y*width + x holds the channel vector of pixel (x, y). Values in [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 0;
  Eigen::MatrixXf pixels;

  Image() = default;
  Image(int w, int h, int c) : width(w), height(h), channels(c), pixels(Eigen::MatrixXf::Zero(c, w * h)) {}

  Eigen::Index index(int x, int y) const { return static_cast<Eigen::Index>(y) * width + x; }
  bool operator==(const Image& other) const {
    return width == other.width && height == other.height && channels == other.channels &&
           pixels == other.pixels;
  }
};

/// Bilinear resampling with pixel-centre alignment; identity at equal size.
Image resize_bilinear(const Image& image, int width, int height);
/// Nearest-neighbour resampling; never produces a label absent from the input.
EyeMask resize_nearest(const EyeMask& mask, int width, int height);
/// Separable Gaussian blur with clamped borders. sigma <= 0 is a no-op.
Image gaussian_blur(const Image& image, double sigma);
Image mirror(const Image& image);

/// 8-bit PNG I/O. Images are grey (1 channel) or RGB (3 channels); values are
/// quantised to 1/255 on write.
Image read_image_png(const std::filesystem::path& path);
void write_image_png(const Image& image, const std::filesystem::path& path);
/// Single-channel 8-bit PNG holding raw labels {0, 1, 2}.
EyeMask read_mask_png(const std::filesystem::path& path);
void write_mask_png(const EyeMask& mask, const std::filesystem::path& path);

}  // namespace scn
