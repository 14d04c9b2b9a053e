#pragma once

#include <random>
#include <string>

#include "xfe/ad/ops.hpp"

namespace xfe::test_support {

inline ad::Tensor<double> random_tensor(ad::Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  ad::Tensor<double> t(std::move(shape));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Random linear functional of v; makes every output entry matter for the gradient.
inline ad::Var probe(ad::Tape<double>& t, ad::Var v, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return ad::sum(t, ad::mul(t, v, t.constant(random_tensor(t.shape(v), rng))));
}

}  // namespace xfe::test_support
