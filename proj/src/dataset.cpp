#include "xfe/dataset.hpp"

#include "xfe/error.hpp"

namespace xfe::data {

phantom::VoxelVolume make_volume(const config::ExperimentConfig& cfg) {
  const auto& d = cfg.phantom.dims;
  const auto& e = cfg.geometry.volume_extent;
  const geometry::Vec3 spacing(e[0] / static_cast<double>(d[0]), e[1] / static_cast<double>(d[1]),
                               e[2] / static_cast<double>(d[2]));
  return phantom::make_phantom(cfg.phantom.kind, d, spacing);
}

Views make_views(const phantom::VoxelVolume& volume, const config::ExperimentConfig& cfg) {
  Views v;
  const auto train_geom = cfg.geometry.scan(geometry::uniform_angles(cfg.geometry.train_views));
  v.train = phantom::project(volume, train_geom, cfg.phantom.projection_steps);
  if (cfg.phantom.noise > 0.0) {
    Rng rng(cfg.phantom.seed);
    v.train = phantom::add_noise(v.train, cfg.phantom.noise, rng);
    v.train.seed = cfg.phantom.seed;
  }
  if (cfg.geometry.test_views > 0) {
    const auto test_geom = cfg.geometry.scan(geometry::interleaved_angles(cfg.geometry.test_views));
    v.test = phantom::project(volume, test_geom, cfg.phantom.projection_steps);
  }
  return v;
}

geometry::ScanGeometry scan_for(const config::ExperimentConfig& cfg, const phantom::ProjectionSet& views) {
  if (views.rows != cfg.geometry.rows || views.cols != cfg.geometry.cols) {
    throw DataError("projections are " + std::to_string(views.rows) + "x" + std::to_string(views.cols) +
                    " but the configured detector is " + std::to_string(cfg.geometry.rows) + "x" +
                    std::to_string(cfg.geometry.cols));
  }
  if (views.angles.size() != views.views) throw DataError("projection set has inconsistent angle count");
  auto g = cfg.geometry.scan(views.angles);
  g.validate();
  return g;
}

}  // namespace xfe::data
