#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "scn/geometry.hpp"
#include "scn/image.hpp"
#include "scn/tensor.hpp"

namespace scn {

enum class PoseTag { kNearFrontal, kNonFrontal };
enum class ResolutionTag { kHigh, kLow };
enum class Split { kTrain, kVal, kTest };

inline constexpr double kLowResolutionArea = 4900.0;

std::string to_string(PoseTag tag);
std::string to_string(ResolutionTag tag);
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct EyePatchRecord {
  std::string image_path;  // relative to the manifest directory unless absolute
  std::string mask_path;
  std::string subject_id;
  PoseTag pose = PoseTag::kNearFrontal;
  ResolutionTag resolution = ResolutionTag::kHigh;
  bool occluded = false;
  double native_area = 0.0;
  std::optional<Split> split;
};

using SplitRatios = std::array<double, 3>;

struct DatasetManifest {
  std::filesystem::path root;  // directory that relative paths resolve against
  std::optional<std::uint64_t> split_seed;
  SplitRatios ratios{8.0, 1.0, 1.0};
  std::vector<EyePatchRecord> records;

  std::vector<std::size_t> indices(Split split) const;
  std::filesystem::path resolve(const std::string& path) const;
};

/// JSON lines, one record per line. The split seed and ratios, once a split
/// has been assigned, live next to it in `<stem>.split.json`.
DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
std::filesystem::path split_info_path(const std::filesystem::path& manifest_path);

/// Low iff the native patch area is below 4900 pixels (sqrt(area) < 70).
ResolutionTag tag_resolution(double native_area);

struct BoundingBox {
  int x0 = 0;  // inclusive
  int y0 = 0;
  int x1 = 0;  // inclusive
  int y1 = 0;

  int width() const { return x1 - x0 + 1; }
  int height() const { return y1 - y0 + 1; }
  bool operator==(const BoundingBox&) const = default;
};

std::optional<BoundingBox> foreground_bbox(const EyeMask& mask);

struct CropConfig {
  double margin = 0.4;
  int min_width = 8;
  int min_height = 4;
};

/// Smallest 2:1 box sharing the tight box's centre that contains the tight box
/// grown by the margin fraction, subject to the minimum size.
BoundingBox eye_patch_box(const BoundingBox& tight, const CropConfig& config = {});

struct Sample {
  Image image;
  EyeMask mask;
};

/// Crops the 2:1 eye patch around `tight`; areas outside the image are zero.
Sample crop_eye_patch(const Image& image, const EyeMask& mask, const BoundingBox& tight,
                      const CropConfig& config = {});
/// Same, with the tight box taken from the mask foreground. Throws
/// EmptyForeground when the mask has none.
Sample crop_eye_patch(const Image& image, const EyeMask& mask, const CropConfig& config = {});

/// Assigns whole subjects (given by their record counts) to train/val/test,
/// minimising the squared deviation of split sizes from the ratio targets.
/// Greedy largest-deficit assignment from several seeded orders, each refined
/// by single moves and pairwise swaps. Every split receives a subject.
std::vector<Split> assign_subjects(std::span<const int> subject_sizes, const SplitRatios& ratios,
                                   std::uint64_t seed);

/// Record-level assignment; subjects are keyed by subject_id.
std::vector<Split> split_subject_independent(std::span<const EyePatchRecord> records,
                                             const SplitRatios& ratios, std::uint64_t seed);

Sample hflip(const Sample& sample);
/// Flips with probability 1/2; returns whether it flipped.
bool augment_hflip(Sample& sample, std::mt19937_64& rng);

/// Bilinear image, nearest-neighbour mask.
Sample resize_pair(const Sample& sample, int width = 160, int height = 80);

/// Loads, 2:1-crops when needed, and resizes every record of a split.
std::vector<Sample> load_split(const DatasetManifest& manifest, Split split, int width, int height);
std::vector<Sample> load_records(const DatasetManifest& manifest, std::span<const std::size_t> indices,
                                 int width, int height);

template <typename Scalar>
struct Batch {
  FeatureMap<Scalar> images;
  FeatureMap<Scalar> one_hot;
  std::vector<EyeMask> masks;
  std::vector<std::size_t> indices;
};

/// One epoch over in-memory samples in a seed-determined order. The last
/// partial batch is emitted. Optional horizontal-flip augmentation draws from
/// an engine seeded with the same seed.
template <typename Scalar>
class BatchIterator {
 public:
  BatchIterator(std::span<const Sample> samples, int batch_size, std::uint64_t shuffle_seed,
                bool shuffle = true, bool augment = false)
      : samples_(samples), batch_size_(batch_size), rng_(shuffle_seed), augment_(augment) {
    if (batch_size < 1) throw InvalidArgument("batch size must be at least 1");
    if (samples.empty()) throw InvalidArgument("batch iteration over an empty split");
    order_.resize(samples.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    if (shuffle) std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::optional<Batch<Scalar>> next() {
    if (cursor_ >= order_.size()) return std::nullopt;
    const std::size_t end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
    Batch<Scalar> batch;
    std::vector<Sample> flipped;
    std::vector<const Image*> images;
    std::vector<const EyeMask*> masks;
    flipped.reserve(end - cursor_);
    for (std::size_t i = cursor_; i < end; ++i) {
      const Sample& s = samples_[order_[i]];
      batch.indices.push_back(order_[i]);
      if (augment_ && std::bernoulli_distribution(0.5)(rng_)) {
        flipped.push_back(hflip(s));
        images.push_back(&flipped.back().image);
        masks.push_back(&flipped.back().mask);
      } else {
        images.push_back(&s.image);
        masks.push_back(&s.mask);
      }
    }
    batch.images = images_to_batch<Scalar>(images);
    batch.one_hot = one_hot<Scalar>(masks);
    for (const auto* m : masks) batch.masks.push_back(*m);
    cursor_ = end;
    return batch;
  }

  const std::vector<std::size_t>& order() const { return order_; }

 private:
  std::span<const Sample> samples_;
  int batch_size_;
  std::mt19937_64 rng_;
  bool augment_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
};

}  // namespace scn
