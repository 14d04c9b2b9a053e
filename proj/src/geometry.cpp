#include "xfe/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "xfe/error.hpp"

namespace xfe::geometry {

void ScanGeometry::validate() const {
  const double half_diag = half_extent().norm();
  if (!(volume_extent.minCoeff() > 0.0)) throw ConfigError("geometry: volume extent must be positive");
  if (!(dso > half_diag)) {
    throw ConfigError("geometry: dso (" + std::to_string(dso) + ") must exceed the half volume diagonal (" +
                      std::to_string(half_diag) + ")");
  }
  if (!(dsd > dso)) throw ConfigError("geometry: dsd must exceed dso");
  if (rows == 0 || cols == 0 || !(pitch > 0.0)) throw ConfigError("geometry: empty detector or bad pitch");
  if (angles.empty()) throw ConfigError("geometry: no projection angles");
  for (std::size_t i = 0; i < angles.size(); ++i) {
    if (!(angles[i] >= 0.0 && angles[i] < std::numbers::pi)) {
      throw ConfigError("geometry: angle " + std::to_string(angles[i]) + " outside [0, pi)");
    }
    if (i > 0 && !(angles[i] > angles[i - 1])) throw ConfigError("geometry: angles must be strictly increasing");
  }
}

Vec3 ScanGeometry::source(std::size_t view) const {
  const double a = angles.at(view);
  return dso * Vec3(std::cos(a), std::sin(a), 0.0);
}

Vec3 ScanGeometry::detector_center(std::size_t view) const {
  const double a = angles.at(view);
  return -(dsd - dso) * Vec3(std::cos(a), std::sin(a), 0.0);
}

Vec3 ScanGeometry::detector_u(std::size_t view) const {
  const double a = angles.at(view);
  return Vec3(-std::sin(a), std::cos(a), 0.0);
}

Vec3 ScanGeometry::pixel_center(std::size_t view, std::size_t row, std::size_t col) const {
  const double u = (static_cast<double>(col) + 0.5 - static_cast<double>(cols) / 2.0) * pitch;
  const double v = (static_cast<double>(rows) / 2.0 - static_cast<double>(row) - 0.5) * pitch;
  return detector_center(view) + u * detector_u(view) + v * detector_v();
}

Eigen::Vector2d ScanGeometry::project(std::size_t view, const Vec3& point) const {
  const Vec3 s = source(view);
  const Vec3 axis = (detector_center(view) - s).normalized();
  const Vec3 d = point - s;
  const double along = d.dot(axis);
  if (!(along > 0.0)) throw ContractError("geometry: point behind the source");
  const Vec3 hit = s + d * (dsd / along);
  const Vec3 rel = hit - detector_center(view);
  const double u = rel.dot(detector_u(view));
  const double v = rel.dot(detector_v());
  const double col = u / pitch + static_cast<double>(cols) / 2.0;
  const double row = static_cast<double>(rows) / 2.0 - v / pitch;
  return {row, col};
}

std::vector<double> uniform_angles(std::size_t n) {
  std::vector<double> a(n);
  for (std::size_t k = 0; k < n; ++k) a[k] = std::numbers::pi * static_cast<double>(k) / static_cast<double>(n);
  return a;
}

std::vector<double> interleaved_angles(std::size_t n) {
  std::vector<double> a(n);
  for (std::size_t k = 0; k < n; ++k) {
    a[k] = std::numbers::pi * (static_cast<double>(k) + 0.5) / static_cast<double>(n);
  }
  return a;
}

std::optional<Interval> clip_to_box(const Vec3& origin, const Vec3& direction, const Vec3& half) {
  double t0 = 0.0;
  double t1 = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    const double o = origin[axis], d = direction[axis];
    if (d == 0.0) {
      if (o < -half[axis] || o > half[axis]) return std::nullopt;
      continue;
    }
    double ta = (-half[axis] - o) / d;
    double tb = (half[axis] - o) / d;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (!(t0 < t1)) return std::nullopt;
  return Interval{t0, t1};
}

std::optional<Ray> ray_for_pixel(const ScanGeometry& geom, std::size_t view, std::size_t row, std::size_t col) {
  if (view >= geom.views() || row >= geom.rows || col >= geom.cols) {
    throw ContractError("geometry: pixel index out of range");
  }
  Ray ray;
  ray.origin = geom.source(view);
  ray.direction = (geom.pixel_center(view, row, col) - ray.origin).normalized();
  ray.pixel = {view, row, col};
  const auto hit = clip_to_box(ray.origin, ray.direction, geom.half_extent());
  if (!hit) return std::nullopt;
  ray.t_near = hit->t_near;
  ray.t_far = hit->t_far;
  return ray;
}

Vec3 normalize_position(const Vec3& p, const Vec3& half_extent) {
  Vec3 q = (p + half_extent).cwiseQuotient(2.0 * half_extent);
  return q.cwiseMax(0.0).cwiseMin(1.0);
}

PointBatch sample_points(const Ray& ray, std::size_t n, SampleMode mode, Rng& rng, const Vec3& half_extent) {
  if (n < 2) throw ContractError("sample_points: need at least 2 points per ray");
  if (!(ray.t_far > ray.t_near)) throw ContractError("sample_points: empty ray interval");
  const double width = (ray.t_far - ray.t_near) / static_cast<double>(n);
  PointBatch batch;
  batch.t.resize(n);
  batch.positions.resize(n);
  batch.normalized.resize(n);
  batch.delta.assign(n, width);
  for (std::size_t i = 0; i < n; ++i) {
    const double offset = mode == SampleMode::uniform ? 0.5 : uniform01(rng);
    const double t = ray.t_near + (static_cast<double>(i) + offset) * width;
    batch.t[i] = t;
    batch.positions[i] = ray.at(t);
    batch.normalized[i] = normalize_position(batch.positions[i], half_extent);
  }
  return batch;
}

}  // namespace xfe::geometry
