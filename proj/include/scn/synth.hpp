#pragma once

#include <array>
#include <cstdint>

#include <json.hpp>

#include "scn/geometry.hpp"
#include "scn/image.hpp"

namespace scn {

struct Range {
  double min = 0.0;
  double max = 0.0;
};

/// Procedural eye generator settings. Geometry ranges are fractions of the
/// output patch (widths of the width, heights of the height).
struct SynthConfig {
  int width = 64;
  int height = 32;
  int subjects = 100;
  std::uint64_t subject_seed = 17;

  // Per-subject base shape.
  Range eye_width{0.56, 0.72};
  Range upper_opening{0.22, 0.42};
  Range lower_opening{0.10, 0.22};
  Range iris_radius{0.22, 0.32};
  Range tilt_degrees{-8.0, 8.0};

  // Per-sample perturbation.
  double opening_jitter = 0.25;  // relative
  Range gaze{-0.55, 0.55};       // iris centre offset in half eye widths
  double centre_jitter = 0.04;   // eye centre offset, fraction of height
  double yaw_sigma_degrees = 22.5;

  // Appearance. base_* are the region colours before any degradation.
  std::array<double, 3> base_background{0.78, 0.58, 0.48};
  std::array<double, 3> base_sclera{0.93, 0.90, 0.86};
  std::array<double, 3> base_iris{0.38, 0.26, 0.18};
  double iris_color_jitter = 0.12;
  double illumination_jitter = 0.2;
  double shading = 0.15;
  double highlight_prob = 0.5;
  double occlusion_prob = 0.16;

  // Degradation. Native patch size is drawn via its square-root area; when
  // the native width falls below `width` the eye is rendered at native size
  // and upsampled (downsample factor = width / native width).
  Range native_sqrt_area{16.0, 112.0};
  double noise_level = 0.06;
  double blur_sigma = 0.5;  // in native pixels

  /// Throws InvalidArgument on empty ranges or inconsistent sizes.
  void validate() const;
};

struct SynthSample {
  Image image;
  EyeMask mask;
  EyeShapeParams params;
  int subject_id = 0;
  int native_width = 0;
  int native_height = 0;
  bool non_frontal = false;
  bool occluded = false;

  double native_area() const { return static_cast<double>(native_width) * native_height; }
  double downsample_factor() const;
};

/// Deterministic in (seed, config). The mask is the exact rasterisation of
/// `params` at output size; the image carries all the degradations.
SynthSample synth_sample(std::uint64_t seed, const SynthConfig& config);

/// The undegraded base shape shared by all samples of one subject.
EyeShapeParams subject_base_shape(int subject_id, const SynthConfig& config);

void to_json(nlohmann::json& j, const Range& r);
void from_json(const nlohmann::json& j, Range& r);
void to_json(nlohmann::json& j, const SynthConfig& c);
/// Missing keys keep their defaults; unknown keys throw ConfigurationError.
void from_json(const nlohmann::json& j, SynthConfig& c);

}  // namespace scn
