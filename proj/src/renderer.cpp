#include "xfe/renderer.hpp"

#include <cmath>
#include <string>

#include "xfe/ad/ops.hpp"
#include "xfe/error.hpp"

namespace xfe::rendering {

RenderedRay render(std::span<const float> densities, std::span<const double> deltas, double i0) {
  if (densities.size() != deltas.size()) throw ContractError("render: densities and deltas differ in length");
  RenderedRay out;
  for (std::size_t i = 0; i < densities.size(); ++i) {
    if (!(densities[i] >= 0.0f)) throw ContractError("render: negative density at point " + std::to_string(i));
    out.absorption += static_cast<double>(densities[i]) * deltas[i];
  }
  out.i_pred = i0 * std::exp(-out.absorption);
  return out;
}

template <class T>
ad::Var render(ad::Tape<T>& tape, ad::Var densities, std::span<const T> deltas, std::size_t points, T i0,
               ad::Var* absorption_out) {
  const ad::Tensor<T>& rho = tape.value(densities);
  if (rho.rank() != 1 || points == 0 || rho.size() % points != 0) {
    throw ContractError("render: densities " + ad::shape_string(rho.shape()) + " are not whole rays of " +
                        std::to_string(points));
  }
  if (deltas.size() != rho.size()) throw ContractError("render: one delta per density required");
  for (std::size_t i = 0; i < rho.size(); ++i) {
    if (!(rho[i] >= T(0))) throw ContractError("render: negative density at point " + std::to_string(i));
  }
  const std::size_t rays = rho.size() / points;
  const ad::Var grid = ad::reshape(tape, densities, {rays, points});
  const ad::Var d = tape.constant(ad::Tensor<T>({rays, points}, std::vector<T>(deltas.begin(), deltas.end())));
  const ad::Var absorption = ad::sum_cols(tape, ad::mul(tape, grid, d));
  if (absorption_out != nullptr) *absorption_out = absorption;
  return ad::scale(tape, ad::exp(tape, ad::neg(tape, absorption)), i0);
}

Reduction parse_reduction(std::string_view name) {
  if (name == "mean") return Reduction::mean;
  if (name == "sum") return Reduction::sum;
  throw ConfigError("unknown loss reduction '" + std::string(name) + "' (expected mean or sum)");
}

LossDomain parse_loss_domain(std::string_view name) {
  if (name == "intensity") return LossDomain::intensity;
  if (name == "log") return LossDomain::log;
  throw ConfigError("unknown loss domain '" + std::string(name) + "' (expected intensity or log)");
}

std::string_view to_string(Reduction r) { return r == Reduction::mean ? "mean" : "sum"; }
std::string_view to_string(LossDomain d) { return d == LossDomain::intensity ? "intensity" : "log"; }

template <class T>
ad::Var loss(ad::Tape<T>& tape, ad::Var predicted, std::span<const T> ground_truth, Reduction reduction,
             LossDomain domain, T i0) {
  if (tape.shape(predicted) != ad::Shape{ground_truth.size()}) {
    throw ContractError("loss: " + std::to_string(ground_truth.size()) + " targets for predictions " +
                        ad::shape_string(tape.shape(predicted)));
  }
  std::vector<T> target(ground_truth.begin(), ground_truth.end());
  if (domain == LossDomain::log) {
    for (auto& v : target) v = -std::log(v / i0);
  }
  const std::size_t n = target.size();
  const ad::Var residual = ad::sub(tape, predicted, tape.constant(ad::Tensor<T>({n}, std::move(target))));
  const ad::Var sq = ad::square(tape, residual);
  return reduction == Reduction::mean ? ad::mean(tape, sq) : ad::sum(tape, sq);
}

template ad::Var render(ad::Tape<float>&, ad::Var, std::span<const float>, std::size_t, float, ad::Var*);
template ad::Var render(ad::Tape<double>&, ad::Var, std::span<const double>, std::size_t, double, ad::Var*);
template ad::Var loss(ad::Tape<float>&, ad::Var, std::span<const float>, Reduction, LossDomain, float);
template ad::Var loss(ad::Tape<double>&, ad::Var, std::span<const double>, Reduction, LossDomain, double);

}  // namespace xfe::rendering
