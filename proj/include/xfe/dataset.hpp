#pragma once

#include "xfe/config.hpp"
#include "xfe/phantom.hpp"

namespace xfe::data {

// The configured phantom on a grid that exactly fills the volume box.
phantom::VoxelVolume make_volume(const config::ExperimentConfig& cfg);

struct Views {
  phantom::ProjectionSet train;  // uniform angles over [0, pi), noisy
  phantom::ProjectionSet test;   // interleaved angles, noiseless
};

Views make_views(const phantom::VoxelVolume& volume, const config::ExperimentConfig& cfg);

// Scanner for a projection set: detector and box from the config, angles from the set.
// Throws DataError when the detector size disagrees.
geometry::ScanGeometry scan_for(const config::ExperimentConfig& cfg, const phantom::ProjectionSet& views);

}  // namespace xfe::data
