#include "scn/image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <vector>

#include <png.h>

#include "scn/errors.hpp"

namespace scn {

Image resize_bilinear(const Image& image, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("resize: dimensions must be positive");
  if (width == image.width && height == image.height) return image;
  Image out(width, height, image.channels);
  const double sx = static_cast<double>(image.width) / width;
  const double sy = static_cast<double>(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, image.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, image.height - 1);
    const float wy = static_cast<float>(fy - y0);
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, image.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, image.width - 1);
      const float wx = static_cast<float>(fx - x0);
      out.pixels.col(out.index(x, y)) =
          (1.0f - wy) * ((1.0f - wx) * image.pixels.col(image.index(x0, y0)) +
                         wx * image.pixels.col(image.index(x1, y0))) +
          wy * ((1.0f - wx) * image.pixels.col(image.index(x0, y1)) +
                wx * image.pixels.col(image.index(x1, y1)));
    }
  }
  return out;
}

EyeMask resize_nearest(const EyeMask& mask, int width, int height) {
  if (width <= 0 || height <= 0) throw InvalidArgument("resize: dimensions must be positive");
  if (width == mask.width() && height == mask.height()) return mask;
  EyeMask out(width, height);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(static_cast<int>((y + 0.5) * mask.height() / height), mask.height() - 1);
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(static_cast<int>((x + 0.5) * mask.width() / width), mask.width() - 1);
      out(x, y) = mask(sx, sy);
    }
  }
  return out;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> kernel(2 * radius + 1);
  float total = 0.0f;
  for (int k = -radius; k <= radius; ++k) {
    kernel[k + radius] = static_cast<float>(std::exp(-0.5 * k * k / (sigma * sigma)));
    total += kernel[k + radius];
  }
  for (auto& k : kernel) k /= total;

  Image tmp(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      auto acc = tmp.pixels.col(tmp.index(x, y));
      for (int k = -radius; k <= radius; ++k) {
        const int sx = std::clamp(x + k, 0, image.width - 1);
        acc += kernel[k + radius] * image.pixels.col(image.index(sx, y));
      }
    }
  }
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      auto acc = out.pixels.col(out.index(x, y));
      for (int k = -radius; k <= radius; ++k) {
        const int sy = std::clamp(y + k, 0, image.height - 1);
        acc += kernel[k + radius] * tmp.pixels.col(tmp.index(x, sy));
      }
    }
  }
  return out;
}

Image mirror(const Image& image) {
  Image out(image.width, image.height, image.channels);
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      out.pixels.col(out.index(image.width - 1 - x, y)) = image.pixels.col(image.index(x, y));
    }
  }
  return out;
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path.string());
  return f;
}

struct PngRaster {
  int width = 0;
  int height = 0;
  int channels = 0;
  std::vector<std::uint8_t> bytes;  // row-major, interleaved
};

PngRaster read_png_raster(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng initialisation failed");
  }
  PngRaster raster;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("failed to decode PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const int bit_depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  raster.width = static_cast<int>(png_get_image_width(png, info));
  raster.height = static_cast<int>(png_get_image_height(png, info));
  raster.channels = png_get_channels(png, info);
  const auto stride = png_get_rowbytes(png, info);
  raster.bytes.resize(stride * raster.height);
  std::vector<png_bytep> rows(raster.height);
  for (int y = 0; y < raster.height; ++y) rows[y] = raster.bytes.data() + y * stride;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);
  return raster;
}

void write_png_raster(const PngRaster& raster, const std::filesystem::path& path) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng initialisation failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed to encode PNG " + path.string());
  }
  png_init_io(png, file.get());
  const int color = raster.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, raster.width, raster.height, 8, color, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const auto stride = static_cast<std::size_t>(raster.width) * raster.channels;
  for (int y = 0; y < raster.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(raster.bytes.data() + y * stride));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_image_png(const std::filesystem::path& path) {
  const auto raster = read_png_raster(path);
  Image image(raster.width, raster.height, raster.channels);
  for (Eigen::Index p = 0; p < image.pixels.cols(); ++p) {
    for (int c = 0; c < raster.channels; ++c) {
      image.pixels(c, p) = raster.bytes[p * raster.channels + c] / 255.0f;
    }
  }
  return image;
}

void write_image_png(const Image& image, const std::filesystem::path& path) {
  if (image.channels != 1 && image.channels != 3) {
    throw InvalidArgument("PNG images must have 1 or 3 channels");
  }
  PngRaster raster{image.width, image.height, image.channels, {}};
  raster.bytes.resize(static_cast<std::size_t>(image.pixels.size()));
  for (Eigen::Index p = 0; p < image.pixels.cols(); ++p) {
    for (int c = 0; c < image.channels; ++c) {
      const float v = std::clamp(image.pixels(c, p), 0.0f, 1.0f);
      raster.bytes[p * image.channels + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  write_png_raster(raster, path);
}

EyeMask read_mask_png(const std::filesystem::path& path) {
  const auto raster = read_png_raster(path);
  if (raster.channels != 1) throw IoError("mask PNG must be single-channel: " + path.string());
  EyeMask mask(raster.width, raster.height);
  for (std::size_t i = 0; i < raster.bytes.size(); ++i) {
    if (raster.bytes[i] > kIris) throw IoError("mask PNG holds a label outside {0,1,2}: " + path.string());
    mask.labels.data()[i] = raster.bytes[i];
  }
  return mask;
}

void write_mask_png(const EyeMask& mask, const std::filesystem::path& path) {
  PngRaster raster{mask.width(), mask.height(), 1, {}};
  raster.bytes.assign(mask.labels.data(), mask.labels.data() + mask.labels.size());
  write_png_raster(raster, path);
}

}  // namespace scn
