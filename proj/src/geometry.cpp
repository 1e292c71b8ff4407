#include "scn/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "scn/errors.hpp"

namespace scn {

namespace {

// Region rule shared by the parametric and landmark paths: a pixel centre is
// eye if it lies between the corners and strictly between the lids; eye pixels
// inside the iris ellipse are iris, the rest sclera.
template <typename UpperFn, typename LowerFn>
EyeMask rasterize_region(UpperFn&& upper, LowerFn&& lower, double left, double right,
                         const Ellipse& iris, int width, int height) {
  if (width <= 0 || height <= 0) {
    throw InvalidArgument("rasterize: dimensions must be positive");
  }
  EyeMask mask(width, height);
  for (int x = 0; x < width; ++x) {
    const double px = x + 0.5;
    if (px < left || px > right) continue;
    const double top = upper(px);
    const double bottom = lower(px);
    if (!(top < bottom)) continue;
    for (int y = 0; y < height; ++y) {
      const double py = y + 0.5;
      if (py > top && py < bottom) {
        mask(x, y) = iris.contains(px, py) ? kIris : kSclera;
      }
    }
  }
  return mask;
}

}  // namespace

bool Ellipse::contains(double x, double y) const {
  const double dx = x - center_x;
  const double dy = y - center_y;
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  const double u = (c * dx + s * dy) / radius_x;
  const double v = (-s * dx + c * dy) / radius_y;
  return u * u + v * v <= 1.0;
}

void EyeShapeParams::validate() const {
  if (!(left < right)) throw InvalidArgument("eye corners must satisfy left < right");
  if (!(iris.radius_x > 0.0) || !(iris.radius_y > 0.0)) {
    throw InvalidArgument("iris radii must be positive");
  }
}

std::array<long, kNumClasses> EyeMask::histogram() const {
  std::array<long, kNumClasses> counts{};
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    ++counts[labels.data()[i]];
  }
  return counts;
}

NaturalCubicSpline::NaturalCubicSpline(std::span<const Eigen::Vector2d> points) {
  const auto n = points.size();
  if (n < 3) throw InvalidArgument("cubic spline needs at least 3 points");
  xs_.reserve(n);
  ys_.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && !(points[i].x() > points[i - 1].x())) {
      throw InvalidArgument("cubic spline knots must have strictly increasing x");
    }
    xs_.push_back(points[i].x());
    ys_.push_back(points[i].y());
  }

  // Thomas algorithm on the interior second derivatives; ends fixed at zero.
  second_.assign(n, 0.0);
  const std::size_t m = n - 2;
  std::vector<double> diag(m), upper(m), rhs(m);
  for (std::size_t k = 0; k < m; ++k) {
    const std::size_t i = k + 1;
    const double h0 = xs_[i] - xs_[i - 1];
    const double h1 = xs_[i + 1] - xs_[i];
    diag[k] = 2.0 * (h0 + h1);
    upper[k] = h1;
    rhs[k] = 6.0 * ((ys_[i + 1] - ys_[i]) / h1 - (ys_[i] - ys_[i - 1]) / h0);
  }
  for (std::size_t k = 1; k < m; ++k) {
    const double lower = xs_[k + 1] - xs_[k];
    const double w = lower / diag[k - 1];
    diag[k] -= w * upper[k - 1];
    rhs[k] -= w * rhs[k - 1];
  }
  for (std::size_t k = m; k-- > 0;) {
    const double next = (k + 1 < m) ? second_[k + 2] : 0.0;
    second_[k + 1] = (rhs[k] - upper[k] * next) / diag[k];
  }
}

double NaturalCubicSpline::operator()(double x) const {
  const std::size_t n = xs_.size();
  if (x <= xs_.front()) {
    const double h = xs_[1] - xs_[0];
    const double slope = (ys_[1] - ys_[0]) / h - h * (2.0 * second_[0] + second_[1]) / 6.0;
    return ys_[0] + slope * (x - xs_[0]);
  }
  if (x >= xs_.back()) {
    const double h = xs_[n - 1] - xs_[n - 2];
    const double slope =
        (ys_[n - 1] - ys_[n - 2]) / h + h * (second_[n - 2] + 2.0 * second_[n - 1]) / 6.0;
    return ys_[n - 1] + slope * (x - xs_[n - 1]);
  }
  const auto it = std::upper_bound(xs_.begin(), xs_.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - xs_.begin()) - 1;
  const double h = xs_[i + 1] - xs_[i];
  const double t0 = xs_[i + 1] - x;
  const double t1 = x - xs_[i];
  return second_[i] * t0 * t0 * t0 / (6.0 * h) + second_[i + 1] * t1 * t1 * t1 / (6.0 * h) +
         (ys_[i] / h - second_[i] * h / 6.0) * t0 + (ys_[i + 1] / h - second_[i + 1] * h / 6.0) * t1;
}

Ellipse fit_ellipse(std::span<const Eigen::Vector2d> points) {
  const auto n = static_cast<Eigen::Index>(points.size());
  if (n < 5) throw InvalidArgument("ellipse fit needs at least 5 points");

  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(n);
  double spread = 0.0;
  for (const auto& p : points) spread = std::max(spread, (p - mean).cwiseAbs().maxCoeff());
  if (!(spread > 0.0)) throw DegenerateGeometry("ellipse fit: coincident points");

  Eigen::MatrixXd quad(n, 3);
  Eigen::MatrixXd lin(n, 3);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Vector2d q = (points[static_cast<std::size_t>(i)] - mean) / spread;
    quad.row(i) << q.x() * q.x(), q.x() * q.y(), q.y() * q.y();
    lin.row(i) << q.x(), q.y(), 1.0;
  }
  const Eigen::Matrix3d s1 = quad.transpose() * quad;
  const Eigen::Matrix3d s2 = quad.transpose() * lin;
  const Eigen::Matrix3d s3 = lin.transpose() * lin;

  Eigen::FullPivLU<Eigen::Matrix3d> s3_lu(s3);
  if (s3_lu.rank() < 3) throw DegenerateGeometry("ellipse fit: collinear points");
  const Eigen::Matrix3d t = -s3_lu.solve(s2.transpose());
  const Eigen::Matrix3d reduced = s1 + s2 * t;
  Eigen::Matrix3d m;
  m.row(0) = reduced.row(2) / 2.0;
  m.row(1) = -reduced.row(1);
  m.row(2) = reduced.row(0) / 2.0;

  Eigen::EigenSolver<Eigen::Matrix3d> solver(m);
  int best = -1;
  double best_cond = 0.0;
  for (int k = 0; k < 3; ++k) {
    const Eigen::Vector3d v = solver.eigenvectors().col(k).real();
    const double cond = 4.0 * v(0) * v(2) - v(1) * v(1);
    if (std::abs(solver.eigenvalues()(k).imag()) < 1e-12 && cond > best_cond) {
      best_cond = cond;
      best = k;
    }
  }
  if (best < 0) throw DegenerateGeometry("ellipse fit: no elliptical solution");
  const Eigen::Vector3d a1 = solver.eigenvectors().col(best).real();
  const Eigen::Vector3d a2 = t * a1;

  const double A = a1(0), B = a1(1), C = a1(2), D = a2(0), E = a2(1), F = a2(2);
  Eigen::Matrix2d hessian;
  hessian << 2.0 * A, B, B, 2.0 * C;
  const Eigen::Vector2d centre = hessian.fullPivLu().solve(Eigen::Vector2d(-D, -E));
  const double f0 = F + 0.5 * (D * centre.x() + E * centre.y());

  Eigen::Matrix2d form;
  form << A, B / 2.0, B / 2.0, C;
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(form);
  const Eigen::Vector2d lambda = eig.eigenvalues();
  const double r0 = -f0 / lambda(0);
  const double r1 = -f0 / lambda(1);
  if (!(r0 > 0.0) || !(r1 > 0.0) || !std::isfinite(r0) || !std::isfinite(r1)) {
    throw DegenerateGeometry("ellipse fit: conic is not a real ellipse");
  }

  Ellipse out;
  out.center_x = centre.x() * spread + mean.x();
  out.center_y = centre.y() * spread + mean.y();
  // Larger radius belongs to the smaller eigenvalue; report it as the x axis
  // unless that axis is closer to vertical.
  const Eigen::Vector2d axis0 = eig.eigenvectors().col(0);
  double rx = std::sqrt(r0) * spread;
  double ry = std::sqrt(r1) * spread;
  double angle = std::atan2(axis0.y(), axis0.x());
  if (std::abs(axis0.y()) > std::abs(axis0.x())) {
    std::swap(rx, ry);
    angle += std::numbers::pi / 2.0;
  }
  // Canonical angle in (-pi/2, pi/2].
  while (angle > std::numbers::pi / 2.0) angle -= std::numbers::pi;
  while (angle <= -std::numbers::pi / 2.0) angle += std::numbers::pi;
  out.radius_x = rx;
  out.radius_y = ry;
  out.rotation = angle;
  return out;
}

EyeMask rasterize_eye(const EyeShapeParams& params, int width, int height) {
  params.validate();
  return rasterize_region(params.upper_lid, params.lower_lid, params.left, params.right,
                          params.iris, width, height);
}

EyeMask landmarks_to_mask(const LandmarkSet& landmarks, int width, int height) {
  if (landmarks.upper_lid_points.size() < 3 || landmarks.lower_lid_points.size() < 3) {
    throw InvalidArgument("landmarks: each lid needs at least 3 points");
  }
  if (landmarks.iris_points.size() < 5) {
    throw InvalidArgument("landmarks: iris needs at least 5 points");
  }
  const NaturalCubicSpline upper(landmarks.upper_lid_points);
  const NaturalCubicSpline lower(landmarks.lower_lid_points);
  const Ellipse iris = fit_ellipse(landmarks.iris_points);
  const double left = std::max(upper.min_x(), lower.min_x());
  const double right = std::min(upper.max_x(), lower.max_x());
  return rasterize_region(upper, lower, left, right, iris, width, height);
}

EyeShapeParams mirror(const EyeShapeParams& params, int width) {
  const double w = width;
  auto flip = [w](const Parabola& p) {
    return Parabola{p.a, -2.0 * p.a * w - p.b, (p.a * w + p.b) * w + p.c};
  };
  EyeShapeParams out = params;
  out.upper_lid = flip(params.upper_lid);
  out.lower_lid = flip(params.lower_lid);
  out.left = w - params.right;
  out.right = w - params.left;
  out.iris.center_x = w - params.iris.center_x;
  out.iris.rotation = -params.iris.rotation;
  return out;
}

EyeMask mirror(const EyeMask& mask) {
  EyeMask out;
  out.labels = mask.labels.rowwise().reverse();
  return out;
}

LandmarkSet sample_landmarks(const EyeShapeParams& params, int lid_points, int iris_points) {
  if (lid_points < 3 || iris_points < 5) {
    throw InvalidArgument("sample_landmarks: need >= 3 lid points and >= 5 iris points");
  }
  LandmarkSet out;
  for (int i = 0; i < lid_points; ++i) {
    const double x = params.left + (params.right - params.left) * i / (lid_points - 1);
    out.upper_lid_points.emplace_back(x, params.upper_lid(x));
    out.lower_lid_points.emplace_back(x, params.lower_lid(x));
  }
  const auto& e = params.iris;
  const double c = std::cos(e.rotation);
  const double s = std::sin(e.rotation);
  for (int k = 0; k < iris_points; ++k) {
    const double t = 2.0 * std::numbers::pi * k / iris_points;
    const double u = e.radius_x * std::cos(t);
    const double v = e.radius_y * std::sin(t);
    out.iris_points.emplace_back(e.center_x + c * u - s * v, e.center_y + s * u + c * v);
  }
  return out;
}

EyeShapeParams scale(const EyeShapeParams& params, double factor) {
  // y/f = a (x/f)^2 + b (x/f) + c  =>  y = (a/f) x^2 + b x + c f
  auto rescale = [factor](const Parabola& p) {
    return Parabola{p.a / factor, p.b, p.c * factor};
  };
  EyeShapeParams out = params;
  out.upper_lid = rescale(params.upper_lid);
  out.lower_lid = rescale(params.lower_lid);
  out.left *= factor;
  out.right *= factor;
  out.iris.center_x *= factor;
  out.iris.center_y *= factor;
  out.iris.radius_x *= factor;
  out.iris.radius_y *= factor;
  return out;
}

void to_json(nlohmann::json& j, const Parabola& p) { j = {{"a", p.a}, {"b", p.b}, {"c", p.c}}; }

void from_json(const nlohmann::json& j, Parabola& p) {
  j.at("a").get_to(p.a);
  j.at("b").get_to(p.b);
  j.at("c").get_to(p.c);
}

void to_json(nlohmann::json& j, const Ellipse& e) {
  j = {{"center_x", e.center_x}, {"center_y", e.center_y}, {"radius_x", e.radius_x},
       {"radius_y", e.radius_y}, {"rotation_radians", e.rotation}};
}

void from_json(const nlohmann::json& j, Ellipse& e) {
  j.at("center_x").get_to(e.center_x);
  j.at("center_y").get_to(e.center_y);
  j.at("radius_x").get_to(e.radius_x);
  j.at("radius_y").get_to(e.radius_y);
  j.at("rotation_radians").get_to(e.rotation);
}

void to_json(nlohmann::json& j, const EyeShapeParams& p) {
  j = {{"upper_lid", p.upper_lid},
       {"lower_lid", p.lower_lid},
       {"eye_corners", {p.left, p.right}},
       {"iris", p.iris}};
}

void from_json(const nlohmann::json& j, EyeShapeParams& p) {
  j.at("upper_lid").get_to(p.upper_lid);
  j.at("lower_lid").get_to(p.lower_lid);
  const auto& corners = j.at("eye_corners");
  if (!corners.is_array() || corners.size() != 2) {
    throw InvalidArgument("eye_corners must be a two-element array");
  }
  corners[0].get_to(p.left);
  corners[1].get_to(p.right);
  j.at("iris").get_to(p.iris);
}

namespace {

nlohmann::json points_json(const std::vector<Eigen::Vector2d>& points) {
  auto arr = nlohmann::json::array();
  for (const auto& p : points) arr.push_back({p.x(), p.y()});
  return arr;
}

std::vector<Eigen::Vector2d> points_from_json(const nlohmann::json& arr) {
  std::vector<Eigen::Vector2d> out;
  for (const auto& p : arr) {
    if (!p.is_array() || p.size() != 2) throw InvalidArgument("landmark must be [x, y]");
    out.emplace_back(p[0].get<double>(), p[1].get<double>());
  }
  return out;
}

}  // namespace

void to_json(nlohmann::json& j, const LandmarkSet& l) {
  j = {{"upper_lid_points", points_json(l.upper_lid_points)},
       {"lower_lid_points", points_json(l.lower_lid_points)},
       {"iris_points", points_json(l.iris_points)}};
}

void from_json(const nlohmann::json& j, LandmarkSet& l) {
  l.upper_lid_points = points_from_json(j.at("upper_lid_points"));
  l.lower_lid_points = points_from_json(j.at("lower_lid_points"));
  l.iris_points = points_from_json(j.at("iris_points"));
}

}  // namespace scn
