#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "scn/errors.hpp"
#include "scn/geometry.hpp"
#include "scn/image.hpp"

namespace scn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// A batch of feature maps stored channels x (batch*height*width). Column
/// (b*height + y)*width + x holds the channel vector of pixel (x, y) of sample
/// b, so each sample is a contiguous block of columns. Dense vectors (height =
/// width = 1) use the same type.
template <typename Scalar>
struct FeatureMap {
  int batch = 0;
  int height = 0;
  int width = 0;
  Mat<Scalar> values;

  FeatureMap() = default;
  FeatureMap(int channels, int batch_size, int h, int w)
      : batch(batch_size), height(h), width(w),
        values(Mat<Scalar>::Zero(channels, static_cast<Eigen::Index>(batch_size) * h * w)) {}

  int channels() const { return static_cast<int>(values.rows()); }
  Eigen::Index pixels_per_sample() const { return static_cast<Eigen::Index>(height) * width; }
  Eigen::Index column(int b, int y, int x) const {
    return (static_cast<Eigen::Index>(b) * height + y) * width + x;
  }

  auto sample(int b) { return values.middleCols(b * pixels_per_sample(), pixels_per_sample()); }
  auto sample(int b) const { return values.middleCols(b * pixels_per_sample(), pixels_per_sample()); }

  bool same_shape(const FeatureMap& other) const {
    return batch == other.batch && height == other.height && width == other.width &&
           values.rows() == other.values.rows();
  }

  template <typename Other>
  FeatureMap<Other> cast() const {
    FeatureMap<Other> out;
    out.batch = batch;
    out.height = height;
    out.width = width;
    out.values = values.template cast<Other>();
    return out;
  }
};

/// Samples [start, start + count) of a batch.
template <typename Scalar>
FeatureMap<Scalar> slice_batch(const FeatureMap<Scalar>& x, int start, int count) {
  if (start < 0 || count < 0 || start + count > x.batch) throw InvalidArgument("slice_batch: range out of bounds");
  FeatureMap<Scalar> out;
  out.batch = count;
  out.height = x.height;
  out.width = x.width;
  out.values = x.values.middleCols(start * x.pixels_per_sample(), count * x.pixels_per_sample());
  return out;
}

/// Stacks batches with equal channel count and spatial size.
template <typename Scalar>
FeatureMap<Scalar> concat_batches(std::initializer_list<const FeatureMap<Scalar>*> parts) {
  if (parts.size() == 0) throw InvalidArgument("concat_batches: nothing to concatenate");
  const FeatureMap<Scalar>& first = **parts.begin();
  int total = 0;
  for (const auto* p : parts) {
    if (p->height != first.height || p->width != first.width || p->channels() != first.channels()) {
      throw InvalidArgument("concat_batches: incompatible shapes");
    }
    total += p->batch;
  }
  FeatureMap<Scalar> out(first.channels(), total, first.height, first.width);
  Eigen::Index col = 0;
  for (const auto* p : parts) {
    out.values.middleCols(col, p->values.cols()) = p->values;
    col += p->values.cols();
  }
  return out;
}

template <typename Scalar>
FeatureMap<Scalar> images_to_batch(std::span<const Image* const> images) {
  if (images.empty()) throw InvalidArgument("images_to_batch: empty batch");
  const Image& first = *images.front();
  FeatureMap<Scalar> out(first.channels, static_cast<int>(images.size()), first.height, first.width);
  for (std::size_t b = 0; b < images.size(); ++b) {
    const Image& im = *images[b];
    if (im.width != first.width || im.height != first.height || im.channels != first.channels) {
      throw InvalidArgument("images_to_batch: inconsistent image sizes");
    }
    out.sample(static_cast<int>(b)) = im.pixels.template cast<Scalar>();
  }
  return out;
}

/// One-hot encoding in channel order (background, sclera, iris).
template <typename Scalar>
FeatureMap<Scalar> one_hot(std::span<const EyeMask* const> masks) {
  if (masks.empty()) throw InvalidArgument("one_hot: empty batch");
  const int w = masks.front()->width();
  const int h = masks.front()->height();
  FeatureMap<Scalar> out(kNumClasses, static_cast<int>(masks.size()), h, w);
  for (std::size_t b = 0; b < masks.size(); ++b) {
    const EyeMask& m = *masks[b];
    if (m.width() != w || m.height() != h) throw InvalidArgument("one_hot: inconsistent mask sizes");
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        out.values(m(x, y), out.column(static_cast<int>(b), y, x)) = Scalar(1);
      }
    }
  }
  return out;
}

/// Per-pixel argmax over channels; first maximal channel wins ties.
template <typename Scalar>
std::vector<EyeMask> argmax_masks(const FeatureMap<Scalar>& probs) {
  std::vector<EyeMask> out;
  out.reserve(probs.batch);
  for (int b = 0; b < probs.batch; ++b) {
    EyeMask m(probs.width, probs.height);
    for (int y = 0; y < probs.height; ++y) {
      for (int x = 0; x < probs.width; ++x) {
        Eigen::Index best = 0;
        probs.values.col(probs.column(b, y, x)).maxCoeff(&best);
        m(x, y) = static_cast<std::uint8_t>(best);
      }
    }
    out.push_back(std::move(m));
  }
  return out;
}

}  // namespace scn
