#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <optional>
#include <vector>

#include "xfe/rng.hpp"

namespace xfe::geometry {

using Vec3 = Eigen::Vector3d;

// Circular cone-beam scanner. The gantry rotates about the z axis; at angle θ the
// source sits at dso·(cos θ, sin θ, 0) and the flat detector is perpendicular to
// the source–center axis at distance dsd from the source. Millimeters throughout.
struct ScanGeometry {
  double dso = 200.0;
  double dsd = 300.0;
  std::size_t rows = 64;  // detector H
  std::size_t cols = 64;  // detector W
  double pitch = 2.0;     // mm per detector pixel
  std::vector<double> angles;
  Vec3 volume_extent{64.0, 64.0, 64.0};  // full box size, centered at the origin

  // Throws ConfigError when an invariant does not hold.
  void validate() const;

  std::size_t views() const noexcept { return angles.size(); }
  Vec3 half_extent() const { return volume_extent / 2.0; }

  Vec3 source(std::size_t view) const;
  Vec3 detector_center(std::size_t view) const;
  // In-plane detector axis (columns grow along it) and the vertical axis (rows grow against it).
  Vec3 detector_u(std::size_t view) const;
  Vec3 detector_v() const { return Vec3::UnitZ(); }

  // Physical center of a detector pixel.
  Vec3 pixel_center(std::size_t view, std::size_t row, std::size_t col) const;

  // Continuous (row, col) where the source ray through `point` hits the detector;
  // pixel (r, c) spans [r, r+1) x [c, c+1).
  Eigen::Vector2d project(std::size_t view, const Vec3& point) const;
};

// n angles k·π/n, k = 0..n-1 (uniform over [0, π)).
std::vector<double> uniform_angles(std::size_t n);

// n angles over [0, π) offset by half a step from uniform_angles(n).
std::vector<double> interleaved_angles(std::size_t n);

struct PixelIndex {
  std::size_t view = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  auto operator<=>(const PixelIndex&) const = default;
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit length
  double t_near = 0.0;
  double t_far = 0.0;
  PixelIndex pixel;
  double i_gt = 1.0;

  Vec3 at(double t) const { return origin + t * direction; }
};

struct Interval {
  double t_near;
  double t_far;
};

// Slab intersection of o + t·d (t ≥ 0) with the box [-half, half]. nullopt on miss.
std::optional<Interval> clip_to_box(const Vec3& origin, const Vec3& direction, const Vec3& half);

// The ray of a detector pixel, clipped to the volume box; nullopt if it misses the box.
std::optional<Ray> ray_for_pixel(const ScanGeometry& geom, std::size_t view, std::size_t row, std::size_t col);

enum class SampleMode { uniform, stratified };

struct PointBatch {
  std::vector<double> t;            // ray parameters, ascending
  std::vector<Vec3> positions;      // mm
  std::vector<double> delta;        // bin widths, all equal
  std::vector<Vec3> normalized;     // positions mapped into [0, 1]^3 by the volume box
};

// Splits [t_near, t_far] into n equal bins and places one point per bin, at its
// center (uniform) or uniformly inside it (stratified).
PointBatch sample_points(const Ray& ray, std::size_t n, SampleMode mode, Rng& rng, const Vec3& half_extent);

// Maps a position in the centered box to [0, 1]^3, clamping round-off excursions.
Vec3 normalize_position(const Vec3& p, const Vec3& half_extent);

}  // namespace xfe::geometry
