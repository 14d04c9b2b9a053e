#include "xfe/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "xfe/binary_io.hpp"
#include "xfe/error.hpp"

namespace xfe::phantom {

namespace {
// Peak radiodensity of the Shepp-Logan skull after scaling.
constexpr double kSheppLoganScale = 0.025;
constexpr double kPi = std::numbers::pi;
}  // namespace

Vec3 VoxelVolume::voxel_center(std::size_t x, std::size_t y, std::size_t z) const {
  const Vec3 half = extent() / 2.0;
  return Vec3((x + 0.5) * spacing[0], (y + 0.5) * spacing[1], (z + 0.5) * spacing[2]) - half;
}

bool Shape::contains(const Vec3& q) const {
  const double dx = q[0] - center[0], dy = q[1] - center[1], dz = q[2] - center[2];
  const double c = std::cos(angle), s = std::sin(angle);
  const double lx = (c * dx + s * dy) / half_axes[0];
  const double ly = (-s * dx + c * dy) / half_axes[1];
  const double lz = dz / half_axes[2];
  switch (kind) {
    case ShapeKind::ellipsoid:
      return lx * lx + ly * ly + lz * lz <= 1.0;
    case ShapeKind::box:
      return std::abs(lx) <= 1.0 && std::abs(ly) <= 1.0 && std::abs(lz) <= 1.0;
    case ShapeKind::cylinder:
      return lx * lx + ly * ly <= 1.0 && std::abs(lz) <= 1.0;
  }
  return false;
}

PhantomKind parse_phantom_kind(std::string_view name) {
  if (name == "shepp-logan-3d") return PhantomKind::shepp_logan_3d;
  if (name == "nested-boxes") return PhantomKind::nested_boxes;
  if (name == "rods") return PhantomKind::rods;
  throw ConfigError("unknown phantom kind '" + std::string(name) + "'");
}

std::string_view to_string(PhantomKind kind) {
  switch (kind) {
    case PhantomKind::shepp_logan_3d:
      return "shepp-logan-3d";
    case PhantomKind::nested_boxes:
      return "nested-boxes";
    case PhantomKind::rods:
      return "rods";
  }
  return "?";
}

std::vector<Shape> phantom_shapes(PhantomKind kind) {
  using K = ShapeKind;
  std::vector<Shape> shapes;
  switch (kind) {
    case PhantomKind::shepp_logan_3d: {
      // Ten-ellipsoid 3-D Shepp-Logan (Cheng et al. parameters).
      const double k = kSheppLoganScale / 2.0;
      shapes = {
          {K::ellipsoid, {0, 0, 0}, {0.69, 0.92, 0.9}, 0, 2.0 * k, false},
          {K::ellipsoid, {0, 0, 0}, {0.6624, 0.874, 0.88}, 0, -0.8 * k, false},
          {K::ellipsoid, {-0.22, 0, -0.25}, {0.41, 0.16, 0.21}, 3 * kPi / 5, -0.2 * k, true},
          {K::ellipsoid, {0.22, 0, -0.25}, {0.31, 0.11, 0.22}, 2 * kPi / 5, -0.2 * k, true},
          {K::ellipsoid, {0, 0.35, -0.25}, {0.21, 0.25, 0.5}, 0, 0.2 * k, false},
          {K::ellipsoid, {0, 0.1, -0.25}, {0.046, 0.046, 0.046}, 0, 0.2 * k, false},
          {K::ellipsoid, {-0.08, -0.65, -0.25}, {0.046, 0.023, 0.02}, 0, 0.1 * k, true},
          {K::ellipsoid, {0.06, -0.65, -0.25}, {0.046, 0.023, 0.02}, kPi / 2, 0.1 * k, true},
          {K::ellipsoid, {0.06, -0.105, 0.625}, {0.056, 0.04, 0.1}, kPi / 2, 0.2 * k, true},
          {K::ellipsoid, {0, 0.1, 0.625}, {0.056, 0.056, 0.1}, 0, -0.2 * k, false},
      };
      break;
    }
    case PhantomKind::nested_boxes:
      shapes = {
          {K::box, {0, 0, 0}, {0.8, 0.8, 0.8}, 0, 0.02, false},
          {K::box, {0, 0, 0}, {0.5, 0.5, 0.5}, 0, 0.02, false},
          {K::box, {0.1, -0.1, 0}, {0.2, 0.2, 0.2}, 0, 0.03, true},
      };
      break;
    case PhantomKind::rods:
      shapes = {
          {K::cylinder, {0, 0, 0}, {0.8, 0.8, 0.8}, 0, 0.015, false},
          {K::cylinder, {-0.4, 0, 0}, {0.12, 0.12, 0.7}, 0, 0.03, false},
          {K::cylinder, {0.4, 0, 0}, {0.12, 0.12, 0.7}, 0, 0.03, false},
          {K::cylinder, {0, 0.4, 0}, {0.08, 0.08, 0.7}, 0, 0.05, false},
          {K::cylinder, {0.2, -0.4, 0}, {0.15, 0.1, 0.7}, kPi / 6, 0.02, true},
      };
      break;
  }
  return shapes;
}

VoxelVolume voxelize(const std::vector<Shape>& shapes, std::array<std::size_t, 3> dims, const Vec3& spacing) {
  VoxelVolume vol(dims, spacing);
  const Vec3 half = vol.extent() / 2.0;
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const Vec3 q = vol.voxel_center(x, y, z).cwiseQuotient(half);
        double v = 0.0;
        for (const Shape& s : shapes) {
          if (s.contains(q)) v += s.value;
        }
        vol.at(x, y, z) = static_cast<float>(std::max(0.0, v));
      }
  return vol;
}

VoxelVolume make_phantom(PhantomKind kind, std::array<std::size_t, 3> dims, const Vec3& spacing) {
  for (std::size_t d : dims) {
    if (d < 16) throw ConfigError("phantom: every dimension must be at least 16 voxels");
  }
  if (!(spacing.minCoeff() > 0.0)) throw ConfigError("phantom: spacing must be positive");
  return voxelize(phantom_shapes(kind), dims, spacing);
}

double trilinear(const VoxelVolume& vol, const Vec3& p, double tolerance) {
  const Vec3 half = vol.extent() / 2.0;
  std::array<std::size_t, 3> i0{};
  std::array<double, 3> w{};
  for (int a = 0; a < 3; ++a) {
    if (p[a] < -half[a] - tolerance || p[a] > half[a] + tolerance) {
      throw ContractError("trilinear: point outside the volume extent");
    }
    const double last = static_cast<double>(vol.dims[a] - 1);
    const double f = std::clamp((p[a] + half[a]) / vol.spacing[a] - 0.5, 0.0, last);
    const auto base = std::min(static_cast<std::size_t>(f), vol.dims[a] >= 2 ? vol.dims[a] - 2 : std::size_t{0});
    i0[a] = base;
    w[a] = f - static_cast<double>(base);
  }
  const std::size_t sx = 1, sy = vol.dims[0], sz = vol.dims[0] * vol.dims[1];
  const std::size_t dx = vol.dims[0] > 1 ? sx : 0, dy = vol.dims[1] > 1 ? sy : 0, dz = vol.dims[2] > 1 ? sz : 0;
  const float* c = vol.data.data() + vol.index(i0[0], i0[1], i0[2]);
  const double c00 = c[0] * (1 - w[0]) + c[dx] * w[0];
  const double c10 = c[dy] * (1 - w[0]) + c[dy + dx] * w[0];
  const double c01 = c[dz] * (1 - w[0]) + c[dz + dx] * w[0];
  const double c11 = c[dz + dy] * (1 - w[0]) + c[dz + dy + dx] * w[0];
  const double c0 = c00 * (1 - w[1]) + c10 * w[1];
  const double c1 = c01 * (1 - w[1]) + c11 * w[1];
  return c0 * (1 - w[2]) + c1 * w[2];
}

double integrate_ray(const VoxelVolume& vol, const geometry::Ray& ray, std::size_t n_steps) {
  if (n_steps == 0) throw ContractError("integrate_ray: zero steps");
  const double width = (ray.t_far - ray.t_near) / static_cast<double>(n_steps);
  double total = 0.0;
  for (std::size_t i = 0; i < n_steps; ++i) {
    total += trilinear(vol, ray.at(ray.t_near + (i + 0.5) * width), 1e-6 * (1.0 + vol.extent().maxCoeff()));
  }
  return total * width;
}

ProjectionSet project(const VoxelVolume& vol, const geometry::ScanGeometry& geom, std::size_t n_steps, double i0) {
  geom.validate();
  if ((vol.extent() - geom.volume_extent).cwiseAbs().maxCoeff() > 1e-6 * geom.volume_extent.maxCoeff()) {
    throw ConfigError("project: volume extent does not match the scan geometry");
  }
  ProjectionSet proj;
  proj.views = geom.views();
  proj.rows = geom.rows;
  proj.cols = geom.cols;
  proj.angles = geom.angles;
  proj.i0 = i0;
  proj.images.assign(proj.views * proj.rows * proj.cols, static_cast<float>(i0));
  for (std::size_t v = 0; v < proj.views; ++v)
    for (std::size_t r = 0; r < proj.rows; ++r)
      for (std::size_t c = 0; c < proj.cols; ++c) {
        const auto ray = geometry::ray_for_pixel(geom, v, r, c);
        if (!ray) continue;
        proj.at(v, r, c) = static_cast<float>(i0 * std::exp(-integrate_ray(vol, *ray, n_steps)));
      }
  return proj;
}

ProjectionSet add_noise(const ProjectionSet& proj, double fraction, Rng& rng) {
  if (!(fraction >= 0.0)) throw ContractError("add_noise: negative fraction");
  ProjectionSet out = proj;
  out.noise = fraction;
  if (fraction == 0.0) return out;
  for (float& value : out.images) {
    const double noisy = value * (1.0 + fraction * normal(rng));
    value = static_cast<float>(std::clamp(noisy, 1e-8, proj.i0));
  }
  return out;
}

void write_volume(const std::filesystem::path& path, const VoxelVolume& vol) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  nlohmann::json header = {
      {"dims", vol.dims},
      {"spacing", {vol.spacing[0], vol.spacing[1], vol.spacing[2]}},
      {"dtype", "f32le"},
  };
  io::write_header(out, kVolumeMagic, header);
  io::write_f32(out, vol.data);
  if (!out) throw DataError("write failed for " + path.string());
}

VoxelVolume read_volume(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::size_t offset = 0;
  const nlohmann::json header = io::read_header(in, kVolumeMagic, offset);
  VoxelVolume vol;
  try {
    if (header.at("dtype").get<std::string>() != "f32le") throw FormatError("unsupported dtype", offset);
    const auto dims = header.at("dims").get<std::array<std::size_t, 3>>();
    const auto spacing = header.at("spacing").get<std::array<double, 3>>();
    vol = VoxelVolume(dims, Vec3(spacing[0], spacing[1], spacing[2]));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("volume header: ") + e.what(), offset);
  }
  io::read_f32(in, vol.data, offset, "volume payload");
  io::expect_end(in, offset);
  return vol;
}

void write_projections(const std::filesystem::path& path, const ProjectionSet& proj,
                       const nlohmann::json& geometry_json) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open " + path.string() + " for writing");
  nlohmann::json header = {
      {"V", proj.views}, {"H", proj.rows},     {"W", proj.cols},   {"angles", proj.angles},
      {"i0", proj.i0},   {"noise", proj.noise}, {"seed", proj.seed}, {"dtype", "f32le"},
  };
  if (!geometry_json.is_null()) header["geometry"] = geometry_json;
  io::write_header(out, kProjectionMagic, header);
  io::write_f32(out, proj.images);
  if (!out) throw DataError("write failed for " + path.string());
}

ProjectionSet read_projections(const std::filesystem::path& path, nlohmann::json* geometry_json) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::size_t offset = 0;
  const nlohmann::json header = io::read_header(in, kProjectionMagic, offset);
  ProjectionSet proj;
  try {
    proj.views = header.at("V").get<std::size_t>();
    proj.rows = header.at("H").get<std::size_t>();
    proj.cols = header.at("W").get<std::size_t>();
    proj.angles = header.at("angles").get<std::vector<double>>();
    proj.i0 = header.at("i0").get<double>();
    proj.noise = header.at("noise").get<double>();
    proj.seed = header.at("seed").get<std::uint64_t>();
    if (geometry_json) *geometry_json = header.value("geometry", nlohmann::json());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("projection header: ") + e.what(), offset);
  }
  if (proj.angles.size() != proj.views) throw FormatError("projection header: angle count differs from V", offset);
  proj.images.resize(proj.views * proj.rows * proj.cols);
  io::read_f32(in, proj.images, offset, "projection payload");
  io::expect_end(in, offset);
  return proj;
}

}  // namespace xfe::phantom
