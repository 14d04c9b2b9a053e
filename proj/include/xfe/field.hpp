#pragma once

#include <span>
#include <vector>

#include "xfe/ad/binder.hpp"
#include "xfe/hash_encoder.hpp"
#include "xfe/lineformer.hpp"

namespace xfe::model {

// Radiodensity field: hash-grid encoding followed by the Lineformer. The network
// output is in units of inverse box length; `density_scale` (1 / longest box side,
// in mm^-1) converts it to mm^-1 so that an untrained network starts with an
// absorption of order one along a ray instead of saturating every projection.
template <class T>
struct Field {
  encoding::HashGridParams<T> encoder;
  LineformerParams<T> net;
  T density_scale;

  Field(const encoding::HashGridConfig& enc, const LineformerConfig& cfg, double scale, Rng& rng);
  Field(const Field&) = delete;
  Field& operator=(const Field&) = delete;

  // Encoder table first, then the Lineformer parameters of the active mixer.
  std::vector<ad::Parameter<T>*> parameters();
  std::size_t parameter_count();

  // Densities (mm^-1) for whole sequences of normalized points, sequence-major:
  // [points.size()]. `per_sequence` = 0 uses the configured points per ray.
  ad::Var density(ad::Binder<T>& b, std::span<const geometry::Vec3> normalized, std::size_t per_sequence = 0);
};

}  // namespace xfe::model
