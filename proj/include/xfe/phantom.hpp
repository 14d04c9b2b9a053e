#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xfe/geometry.hpp"
#include "xfe/rng.hpp"

namespace xfe::phantom {

using geometry::Vec3;

// Radiodensity grid in mm^-1, x-fastest, centered at the origin.
struct VoxelVolume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  Vec3 spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  VoxelVolume() = default;
  VoxelVolume(std::array<std::size_t, 3> d, Vec3 s) : dims(d), spacing(std::move(s)), data(d[0] * d[1] * d[2], 0.0f) {}

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dims[0] * (y + dims[1] * z); }
  float& at(std::size_t x, std::size_t y, std::size_t z) { return data[index(x, y, z)]; }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return data[index(x, y, z)]; }

  Vec3 extent() const { return Vec3(dims[0] * spacing[0], dims[1] * spacing[1], dims[2] * spacing[2]); }
  Vec3 voxel_center(std::size_t x, std::size_t y, std::size_t z) const;
  double voxel_volume() const { return spacing.prod(); }
};

enum class ShapeKind { ellipsoid, box, cylinder };

// An analytic solid in normalized coordinates ([-1, 1] maps onto the half extent).
// Rotation is about the z axis. Cylinders are z-aligned with radii (hx, hy) and half-height hz.
struct Shape {
  ShapeKind kind = ShapeKind::ellipsoid;
  Vec3 center{0, 0, 0};
  Vec3 half_axes{1, 1, 1};
  double angle = 0.0;
  double value = 0.0;
  bool asymmetric = false;  // breaks the x -> -x mirror symmetry of its phantom

  bool contains(const Vec3& normalized_point) const;
};

enum class PhantomKind { shepp_logan_3d, nested_boxes, rods };

PhantomKind parse_phantom_kind(std::string_view name);  // ConfigError on unknown names
std::string_view to_string(PhantomKind kind);

// Additive shape list of each phantom; values already in mm^-1 and within [0, 0.1].
std::vector<Shape> phantom_shapes(PhantomKind kind);

// Sum of shape values at every voxel center.
VoxelVolume voxelize(const std::vector<Shape>& shapes, std::array<std::size_t, 3> dims, const Vec3& spacing);

// Requires dims >= 16 on every axis.
VoxelVolume make_phantom(PhantomKind kind, std::array<std::size_t, 3> dims, const Vec3& spacing);

// Trilinear interpolation between voxel centers. Points within the box but outside the
// center lattice clamp to the border; points more than `tolerance` mm outside the box
// are a ContractError.
double trilinear(const VoxelVolume& vol, const Vec3& p, double tolerance = 1e-6);

struct ProjectionSet {
  std::size_t views = 0, rows = 0, cols = 0;
  std::vector<float> images;  // views x rows x cols, row-major per view
  std::vector<double> angles;
  double i0 = 1.0;
  double noise = 0.0;  // multiplicative Gaussian fraction applied
  std::uint64_t seed = 0;

  float& at(std::size_t v, std::size_t r, std::size_t c) { return images[(v * rows + r) * cols + c]; }
  float at(std::size_t v, std::size_t r, std::size_t c) const { return images[(v * rows + r) * cols + c]; }
  std::span<const float> view(std::size_t v) const { return {images.data() + v * rows * cols, rows * cols}; }
};

// Line integral of the volume along a ray, midpoint rule with n equal steps.
double integrate_ray(const VoxelVolume& vol, const geometry::Ray& ray, std::size_t n_steps);

// I = i0 · exp(-Σ ρ(p_i) δ_i) per pixel; rays missing the box get i0.
ProjectionSet project(const VoxelVolume& vol, const geometry::ScanGeometry& geom, std::size_t n_steps,
                      double i0 = 1.0);

// I' = I·(1 + fraction·ε), ε ~ N(0, 1), clamped to [1e-8, i0].
ProjectionSet add_noise(const ProjectionSet& proj, double fraction, Rng& rng);

inline constexpr std::string_view kVolumeMagic = "XFEVOL01";
inline constexpr std::string_view kProjectionMagic = "XFEPRJ01";

void write_volume(const std::filesystem::path& path, const VoxelVolume& vol);
VoxelVolume read_volume(const std::filesystem::path& path);

// `geometry_json` is stored verbatim under "geometry" when not null.
void write_projections(const std::filesystem::path& path, const ProjectionSet& proj,
                       const nlohmann::json& geometry_json = nullptr);
ProjectionSet read_projections(const std::filesystem::path& path, nlohmann::json* geometry_json = nullptr);

}  // namespace xfe::phantom
