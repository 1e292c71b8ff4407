#include "scn/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "scn/errors.hpp"

namespace scn {

namespace {

constexpr double kDegree = std::numbers::pi / 180.0;

struct ShapeTraits {
  double eye_width;
  double upper_opening;
  double lower_opening;
  double iris_radius;
  double tilt;
  std::array<double, 3> iris_tint;
};

struct Pose {
  double upper_scale = 1.0;
  double lower_scale = 1.0;
  double gaze_x = 0.0;
  double gaze_y = 0.0;
  double centre_dx = 0.0;
  double centre_dy = 0.0;
  double yaw = 0.0;
};

double draw(std::mt19937_64& rng, const Range& r) {
  return std::uniform_real_distribution<double>(r.min, r.max)(rng);
}

ShapeTraits subject_traits(int subject_id, const SynthConfig& config) {
  std::seed_seq seq{static_cast<std::uint32_t>(config.subject_seed),
                    static_cast<std::uint32_t>(config.subject_seed >> 32),
                    static_cast<std::uint32_t>(subject_id)};
  std::mt19937_64 rng(seq);
  ShapeTraits t{};
  t.eye_width = draw(rng, config.eye_width);
  t.upper_opening = draw(rng, config.upper_opening);
  t.lower_opening = draw(rng, config.lower_opening);
  t.iris_radius = draw(rng, config.iris_radius);
  t.tilt = draw(rng, config.tilt_degrees) * kDegree;
  const Range tint{-config.iris_color_jitter, config.iris_color_jitter};
  for (auto& v : t.iris_tint) v = config.iris_color_jitter > 0.0 ? draw(rng, tint) : 0.0;
  return t;
}

EyeShapeParams build_shape(const ShapeTraits& t, const Pose& pose, const SynthConfig& config) {
  const double w = config.width;
  const double h = config.height;
  const double cx = w / 2.0 + pose.centre_dx * h;
  const double cy = h / 2.0 + pose.centre_dy * h;
  const double yaw_sin = std::sin(pose.yaw);
  const double half = t.eye_width * w / 2.0 * (1.0 - 0.25 * std::abs(yaw_sin));
  const double slope = std::tan(t.tilt);
  const double hu = t.upper_opening * h * pose.upper_scale;
  const double hl = t.lower_opening * h * pose.lower_scale;

  // Lid through both corners with its extremum (height hu / hl) at the centre.
  auto lid = [&](double height) {
    const double a = height / (half * half);
    return Parabola{a, -2.0 * a * cx + slope, a * cx * cx - slope * cx + cy - height};
  };
  EyeShapeParams p;
  p.upper_lid = lid(hu);
  p.lower_lid = lid(-hl);
  p.left = cx - half;
  p.right = cx + half;

  const double r = t.iris_radius * h;
  double ix = cx + pose.gaze_x * half * 0.5 + yaw_sin * half * 0.3;
  ix = std::clamp(ix, p.left + 0.2 * half, p.right - 0.2 * half);
  const double mid = 0.5 * (p.upper_lid(ix) + p.lower_lid(ix));
  p.iris.center_x = ix;
  p.iris.center_y = mid - 0.1 * hu + pose.gaze_y * 0.15 * h;
  p.iris.radius_x = r * (0.75 + 0.25 * std::cos(pose.yaw));
  p.iris.radius_y = r;
  p.iris.rotation = 0.5 * t.tilt;
  return p;
}

void paint_occluder(std::mt19937_64& rng, Image& image) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double w = image.width;
  const double h = image.height;
  const bool hair = unit(rng) < 0.6;
  // Hair: a dark band crossing the patch at a steep angle. Glasses: a thin
  // near-horizontal rim above or below the eye.
  double x0, y0, dx, dy, thickness;
  Eigen::Vector3f colour;
  float alpha;
  if (hair) {
    x0 = w * (0.2 + 0.6 * unit(rng));
    y0 = 0.0;
    const double angle = (60.0 + 60.0 * unit(rng)) * kDegree;
    dx = std::cos(angle);
    dy = std::sin(angle);
    thickness = h * (0.05 + 0.08 * unit(rng));
    colour = Eigen::Vector3f(0.12f, 0.08f, 0.05f);
    alpha = 0.85f;
  } else {
    x0 = 0.0;
    y0 = h * (unit(rng) < 0.5 ? 0.12 + 0.1 * unit(rng) : 0.78 + 0.1 * unit(rng));
    const double angle = (-6.0 + 12.0 * unit(rng)) * kDegree;
    dx = std::cos(angle);
    dy = std::sin(angle);
    thickness = h * (0.04 + 0.04 * unit(rng));
    colour = Eigen::Vector3f(0.2f, 0.2f, 0.22f);
    alpha = 0.9f;
  }
  for (int y = 0; y < image.height; ++y) {
    for (int x = 0; x < image.width; ++x) {
      const double px = x + 0.5 - x0;
      const double py = y + 0.5 - y0;
      const double dist = std::abs(px * dy - py * dx);
      if (dist < thickness / 2.0) {
        auto pix = image.pixels.col(image.index(x, y));
        pix = (1.0f - alpha) * pix + alpha * colour.head(image.channels);
      }
    }
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (width < 8 || height < 4) throw InvalidArgument("synth: output size must be at least 8x4");
  if (width != 2 * height) throw InvalidArgument("synth: output patches must be 2:1");
  if (subjects < 1) throw InvalidArgument("synth: subject pool must be nonempty");
  for (const Range* r : {&eye_width, &upper_opening, &lower_opening, &iris_radius, &tilt_degrees,
                         &gaze, &native_sqrt_area}) {
    if (!(r->min <= r->max)) throw InvalidArgument("synth: empty parameter range");
  }
  if (!(eye_width.min > 0.0) || !(upper_opening.min > 0.0) || !(lower_opening.min > 0.0) ||
      !(iris_radius.min > 0.0) || !(native_sqrt_area.min > 0.0)) {
    throw InvalidArgument("synth: size ranges must be positive");
  }
  if (noise_level < 0.0 || blur_sigma < 0.0 || shading < 0.0 || opening_jitter < 0.0 ||
      opening_jitter >= 1.0 || occlusion_prob < 0.0 || occlusion_prob > 1.0 ||
      highlight_prob < 0.0 || highlight_prob > 1.0 || illumination_jitter < 0.0 ||
      iris_color_jitter < 0.0 || centre_jitter < 0.0 || yaw_sigma_degrees < 0.0) {
    throw InvalidArgument("synth: degradation parameters out of range");
  }
}

double SynthSample::downsample_factor() const {
  return std::max(1.0, static_cast<double>(mask.width()) / native_width);
}

EyeShapeParams subject_base_shape(int subject_id, const SynthConfig& config) {
  config.validate();
  return build_shape(subject_traits(subject_id, config), Pose{}, config);
}

SynthSample synth_sample(std::uint64_t seed, const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto symmetric = [&](double amplitude) { return amplitude * (2.0 * unit(rng) - 1.0); };

  SynthSample s;
  s.subject_id = std::uniform_int_distribution<int>(0, config.subjects - 1)(rng);
  const ShapeTraits traits = subject_traits(s.subject_id, config);

  Pose pose;
  pose.upper_scale = 1.0 + symmetric(config.opening_jitter);
  pose.lower_scale = 1.0 + symmetric(config.opening_jitter);
  pose.gaze_x = draw(rng, config.gaze);
  pose.gaze_y = 0.3 * draw(rng, config.gaze);
  pose.centre_dx = symmetric(config.centre_jitter);
  pose.centre_dy = symmetric(config.centre_jitter);
  pose.yaw = std::clamp(normal(rng) * config.yaw_sigma_degrees, -75.0, 75.0) * kDegree;
  s.non_frontal = std::abs(pose.yaw) > 30.0 * kDegree;
  s.params = build_shape(traits, pose, config);
  s.mask = rasterize_eye(s.params, config.width, config.height);

  const double sqrt_area = draw(rng, config.native_sqrt_area);
  s.native_height = std::max(4, static_cast<int>(std::lround(sqrt_area / std::numbers::sqrt2)));
  s.native_width = 2 * s.native_height;

  // Render at native size when it is coarser than the output; otherwise render
  // at output size with noise and blur shrunk by the implicit downsampling.
  const bool upsample = s.native_width < config.width;
  const int rw = upsample ? s.native_width : config.width;
  const int rh = upsample ? s.native_height : config.height;
  const double to_render = static_cast<double>(rw) / config.width;
  const double native_to_render = upsample ? 1.0 : static_cast<double>(config.width) / s.native_width;
  const EyeShapeParams render_params = upsample ? scale(s.params, to_render) : s.params;
  const EyeMask render_mask = upsample ? rasterize_eye(render_params, rw, rh) : s.mask;

  const double gain = 1.0 + symmetric(config.illumination_jitter);
  const double grad_x = symmetric(1.0);
  const double grad_y = symmetric(1.0);
  const bool highlight = unit(rng) < config.highlight_prob;
  const Eigen::Vector2d highlight_centre(
      render_params.iris.center_x - 0.35 * render_params.iris.radius_x,
      render_params.iris.center_y - 0.35 * render_params.iris.radius_y);
  const double highlight_radius = 0.22 * render_params.iris.radius_y;

  std::array<std::array<float, 3>, kNumClasses> base{};
  for (int c = 0; c < 3; ++c) {
    base[kBackground][c] = static_cast<float>(config.base_background[c]);
    base[kSclera][c] = static_cast<float>(config.base_sclera[c]);
    base[kIris][c] = static_cast<float>(std::clamp(config.base_iris[c] + traits.iris_tint[c], 0.0, 1.0));
  }

  Image image(rw, rh, 3);
  for (int y = 0; y < rh; ++y) {
    for (int x = 0; x < rw; ++x) {
      const std::uint8_t label = render_mask(x, y);
      const double shade =
          gain * (1.0 + config.shading * (grad_x * ((x + 0.5) / rw - 0.5) + grad_y * ((y + 0.5) / rh - 0.5)));
      auto pix = image.pixels.col(image.index(x, y));
      for (int c = 0; c < 3; ++c) {
        pix(c) = (shade == 1.0) ? base[label][c] : static_cast<float>(base[label][c] * shade);
      }
      if (highlight && label == kIris &&
          (Eigen::Vector2d(x + 0.5, y + 0.5) - highlight_centre).norm() < highlight_radius) {
        pix.setConstant(0.97f);
      }
    }
  }

  s.occluded = unit(rng) < config.occlusion_prob;
  if (s.occluded) paint_occluder(rng, image);
  image = gaussian_blur(image, config.blur_sigma * native_to_render);
  const double noise = config.noise_level * native_to_render;
  if (noise > 0.0) {
    for (Eigen::Index i = 0; i < image.pixels.size(); ++i) {
      image.pixels.data()[i] += static_cast<float>(noise * normal(rng));
    }
  }
  image.pixels = image.pixels.cwiseMax(0.0f).cwiseMin(1.0f);
  s.image = upsample ? resize_bilinear(image, config.width, config.height) : std::move(image);
  return s;
}

void to_json(nlohmann::json& j, const Range& r) { j = nlohmann::json::array({r.min, r.max}); }

void from_json(const nlohmann::json& j, Range& r) {
  if (!j.is_array() || j.size() != 2) throw InvalidArgument("range must be [min, max]");
  j[0].get_to(r.min);
  j[1].get_to(r.max);
}

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"input_size", {c.width, c.height}},
       {"subjects", c.subjects},
       {"subject_seed", c.subject_seed},
       {"eye_width", c.eye_width},
       {"upper_opening", c.upper_opening},
       {"lower_opening", c.lower_opening},
       {"iris_radius", c.iris_radius},
       {"tilt_degrees", c.tilt_degrees},
       {"opening_jitter", c.opening_jitter},
       {"gaze", c.gaze},
       {"centre_jitter", c.centre_jitter},
       {"yaw_sigma_degrees", c.yaw_sigma_degrees},
       {"base_background", c.base_background},
       {"base_sclera", c.base_sclera},
       {"base_iris", c.base_iris},
       {"iris_color_jitter", c.iris_color_jitter},
       {"illumination_jitter", c.illumination_jitter},
       {"shading", c.shading},
       {"highlight_prob", c.highlight_prob},
       {"occlusion_prob", c.occlusion_prob},
       {"native_sqrt_area", c.native_sqrt_area},
       {"noise_level", c.noise_level},
       {"blur_sigma", c.blur_sigma}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  c = SynthConfig{};
  for (const auto& [key, value] : j.items()) {
    if (key == "input_size") {
      c.width = value.at(0).get<int>();
      c.height = value.at(1).get<int>();
    } else if (key == "subjects") value.get_to(c.subjects);
    else if (key == "subject_seed") value.get_to(c.subject_seed);
    else if (key == "eye_width") value.get_to(c.eye_width);
    else if (key == "upper_opening") value.get_to(c.upper_opening);
    else if (key == "lower_opening") value.get_to(c.lower_opening);
    else if (key == "iris_radius") value.get_to(c.iris_radius);
    else if (key == "tilt_degrees") value.get_to(c.tilt_degrees);
    else if (key == "opening_jitter") value.get_to(c.opening_jitter);
    else if (key == "gaze") value.get_to(c.gaze);
    else if (key == "centre_jitter") value.get_to(c.centre_jitter);
    else if (key == "yaw_sigma_degrees") value.get_to(c.yaw_sigma_degrees);
    else if (key == "base_background") value.get_to(c.base_background);
    else if (key == "base_sclera") value.get_to(c.base_sclera);
    else if (key == "base_iris") value.get_to(c.base_iris);
    else if (key == "iris_color_jitter") value.get_to(c.iris_color_jitter);
    else if (key == "illumination_jitter") value.get_to(c.illumination_jitter);
    else if (key == "shading") value.get_to(c.shading);
    else if (key == "highlight_prob") value.get_to(c.highlight_prob);
    else if (key == "occlusion_prob") value.get_to(c.occlusion_prob);
    else if (key == "native_sqrt_area") value.get_to(c.native_sqrt_area);
    else if (key == "noise_level") value.get_to(c.noise_level);
    else if (key == "blur_sigma") value.get_to(c.blur_sigma);
    else throw ConfigurationError("unknown key 'synth." + key + "'");
  }
}

}  // namespace scn
