#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "json.hpp"
#include "xfe/geometry.hpp"
#include "xfe/hash_encoder.hpp"
#include "xfe/lineformer.hpp"
#include "xfe/phantom.hpp"
#include "xfe/renderer.hpp"

namespace xfe::config {

// Scanner and view split. Angles are derived: training views on uniform_angles,
// test views interleaved between them.
struct GeometrySection {
  double dso = 200.0;
  double dsd = 300.0;
  std::size_t rows = 64;
  std::size_t cols = 64;
  double pitch = 2.0;
  std::array<double, 3> volume_extent{64.0, 64.0, 64.0};
  std::size_t train_views = 25;
  std::size_t test_views = 25;

  geometry::ScanGeometry scan(std::vector<double> angles) const;
};

struct PhantomSection {
  phantom::PhantomKind kind = phantom::PhantomKind::shepp_logan_3d;
  std::array<std::size_t, 3> dims{64, 64, 64};
  std::size_t projection_steps = 512;
  double noise = 0.03;  // multiplicative Gaussian fraction on training views
  std::uint64_t seed = 7;
};

enum class SamplerMode { mlg, naive };
SamplerMode parse_sampler_mode(std::string_view name);
std::string_view to_string(SamplerMode mode);

struct SamplerSection {
  SamplerMode mode = SamplerMode::mlg;
  double tau = 0.05;
  std::size_t patch_size = 4;
};

struct TrainSection {
  double lr0 = 1e-4;
  std::size_t halve_every = 1500;
  std::size_t iterations = 3000;
  std::size_t batch_rays = 2048;
  std::size_t patch_rays = 1024;  // the rest are pixel-level rays
  std::size_t points = 192;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 10.0;
  std::size_t checkpoint_every = 500;
  std::uint64_t seed = 0;
  rendering::Reduction reduction = rendering::Reduction::mean;
  rendering::LossDomain loss_domain = rendering::LossDomain::intensity;

  std::size_t pixel_rays() const { return batch_rays - patch_rays; }
};

struct EvalSection {
  std::size_t points = 0;  // 0: same as train.points
  std::size_t chunk_rays = 512;
  std::array<std::size_t, 3> ct_dims{64, 64, 64};
  double psnr_cap = 100.0;
};

struct ExperimentConfig {
  GeometrySection geometry;
  PhantomSection phantom;
  encoding::HashGridConfig encoder;
  model::LineformerConfig lineformer;
  SamplerSection sampler;
  TrainSection train;
  EvalSection eval;

  // Cross-section checks and derived fields (lineformer.points follows train.points).
  // Throws ConfigError.
  void resolve();

  std::size_t eval_points() const { return eval.points ? eval.points : train.points; }
  // mm^-1 per unit of network output: one over the longest box side.
  double density_scale() const;
};

// Strict parsing: every section and field is optional, unknown keys are a ConfigError.
ExperimentConfig from_json(const nlohmann::json& j);
nlohmann::json to_json(const ExperimentConfig& c);
ExperimentConfig load(const std::filesystem::path& path);
void save(const std::filesystem::path& path, const ExperimentConfig& c);

}  // namespace xfe::config
