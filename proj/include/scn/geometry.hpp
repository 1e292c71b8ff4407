#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <json.hpp>

namespace scn {

enum Label : std::uint8_t { kBackground = 0, kSclera = 1, kIris = 2 };
inline constexpr int kNumClasses = 3;

/// y = a*x^2 + b*x + c in patch pixel coordinates (y grows downwards).
struct Parabola {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  double operator()(double x) const { return (a * x + b) * x + c; }
};

struct Ellipse {
  double center_x = 0.0;
  double center_y = 0.0;
  double radius_x = 1.0;
  double radius_y = 1.0;
  double rotation = 0.0;  // radians, angle of the x semi-axis

  bool contains(double x, double y) const;
};

/// Two parabolic lids bounded by the eye corners plus an iris ellipse.
struct EyeShapeParams {
  Parabola upper_lid;
  Parabola lower_lid;
  double left = 0.0;
  double right = 1.0;
  Ellipse iris;

  /// Throws InvalidArgument when left >= right or a radius is not positive.
  void validate() const;
};

using LabelGrid = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel 3-class label grid. Rows index y, columns index x.
struct EyeMask {
  LabelGrid labels;

  EyeMask() = default;
  EyeMask(int width, int height) : labels(LabelGrid::Zero(height, width)) {}

  int width() const { return static_cast<int>(labels.cols()); }
  int height() const { return static_cast<int>(labels.rows()); }
  std::uint8_t operator()(int x, int y) const { return labels(y, x); }
  std::uint8_t& operator()(int x, int y) { return labels(y, x); }

  std::array<long, kNumClasses> histogram() const;
  bool operator==(const EyeMask& other) const {
    return labels.rows() == other.labels.rows() && labels.cols() == other.labels.cols() &&
           labels == other.labels;
  }
};

struct LandmarkSet {
  std::vector<Eigen::Vector2d> upper_lid_points;
  std::vector<Eigen::Vector2d> lower_lid_points;
  std::vector<Eigen::Vector2d> iris_points;
};

/// Natural cubic spline (zero second derivative at both ends) through points
/// with strictly increasing x. Evaluation outside the knot range extrapolates
/// linearly.
class NaturalCubicSpline {
 public:
  explicit NaturalCubicSpline(std::span<const Eigen::Vector2d> points);

  double operator()(double x) const;
  double min_x() const { return xs_.front(); }
  double max_x() const { return xs_.back(); }

 private:
  std::vector<double> xs_;
  std::vector<double> ys_;
  std::vector<double> second_;  // second derivatives at knots
};

/// Direct least-squares ellipse fit under the 4AC - B^2 = 1 constraint
/// (numerically stable block formulation, on centred and scaled points).
Ellipse fit_ellipse(std::span<const Eigen::Vector2d> points);

EyeMask rasterize_eye(const EyeShapeParams& params, int width, int height);
EyeMask landmarks_to_mask(const LandmarkSet& landmarks, int width, int height);

/// Mirror about the vertical axis of a patch of the given width.
EyeShapeParams mirror(const EyeShapeParams& params, int width);
EyeMask mirror(const EyeMask& mask);

/// Evenly spaced lid samples between the corners and iris samples around the
/// ellipse; the inverse direction of landmarks_to_mask.
LandmarkSet sample_landmarks(const EyeShapeParams& params, int lid_points, int iris_points);

/// Same mapping with every coordinate multiplied by `factor`.
EyeShapeParams scale(const EyeShapeParams& params, double factor);

void to_json(nlohmann::json& j, const Parabola& p);
void from_json(const nlohmann::json& j, Parabola& p);
void to_json(nlohmann::json& j, const Ellipse& e);
void from_json(const nlohmann::json& j, Ellipse& e);
void to_json(nlohmann::json& j, const EyeShapeParams& p);
void from_json(const nlohmann::json& j, EyeShapeParams& p);
void to_json(nlohmann::json& j, const LandmarkSet& l);
void from_json(const nlohmann::json& j, LandmarkSet& l);

}  // namespace scn
