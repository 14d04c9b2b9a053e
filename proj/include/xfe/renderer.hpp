#pragma once

#include <span>
#include <string_view>
#include <vector>

#include "xfe/ad/tape.hpp"

namespace xfe::rendering {

struct RenderedRay {
  double i_pred = 0.0;
  double absorption = 0.0;  // sum of rho_i * delta_i
};

// I = i0 * exp(-sum rho_i delta_i) for one ray, accumulated in double precision.
// Negative densities are a ContractError.
RenderedRay render(std::span<const float> densities, std::span<const double> deltas, double i0 = 1.0);

// Differentiable form over a batch: densities [rays * points] and matching deltas
// -> intensities [rays]. When `absorption_out` is given it receives the [rays]
// line-integral node as well.
template <class T>
ad::Var render(ad::Tape<T>& tape, ad::Var densities, std::span<const T> deltas, std::size_t points, T i0 = T(1),
               ad::Var* absorption_out = nullptr);

enum class Reduction { mean, sum };
// intensity: squared error of intensities; log: squared error of absorptions.
enum class LossDomain { intensity, log };

Reduction parse_reduction(std::string_view name);
LossDomain parse_loss_domain(std::string_view name);
std::string_view to_string(Reduction r);
std::string_view to_string(LossDomain d);

// Squared error between predictions and ground-truth intensities, reduced over rays.
// In log mode `predicted` must be the absorption node and gt is converted as -ln(gt / i0).
template <class T>
ad::Var loss(ad::Tape<T>& tape, ad::Var predicted, std::span<const T> ground_truth, Reduction reduction = Reduction::mean,
             LossDomain domain = LossDomain::intensity, T i0 = T(1));

}  // namespace xfe::rendering
