#pragma once

#include <filesystem>
#include <string>

#include "xfe/config.hpp"

namespace test_support {

// A 16x16-detector scene small enough to train for a few hundred steps in a test.
inline xfe::config::ExperimentConfig tiny_config() {
  xfe::config::ExperimentConfig c;
  c.geometry.dso = 100.0;
  c.geometry.dsd = 150.0;
  c.geometry.rows = 16;
  c.geometry.cols = 16;
  c.geometry.pitch = 4.0;
  c.geometry.volume_extent = {32.0, 32.0, 32.0};
  c.geometry.train_views = 8;
  c.geometry.test_views = 4;
  c.phantom.dims = {16, 16, 16};
  c.phantom.projection_steps = 128;
  c.encoder.levels = 4;
  c.encoder.features = 2;
  c.encoder.log2_table = 12;
  c.encoder.base_resolution = 4;
  c.lineformer.channels = 8;
  c.lineformer.heads = 2;
  c.lineformer.segment = 2;
  c.sampler.patch_size = 2;
  c.train.batch_rays = 64;
  c.train.patch_rays = 32;
  c.train.points = 16;
  c.train.iterations = 200;
  c.train.lr0 = 1e-3;
  c.train.checkpoint_every = 50;
  c.eval.ct_dims = {16, 16, 16};
  c.eval.chunk_rays = 64;
  c.resolve();
  return c;
}

// Fresh per-test scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("xfe_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace test_support
