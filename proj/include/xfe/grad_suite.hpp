#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "xfe/gradcheck.hpp"

namespace xfe {

// One finite-difference comparison of the suite.
struct SuiteCase {
  std::string module;  // tensor_ad, hash_encoder, lineformer or renderer
  std::string name;
  std::uint64_t seed = 0;
  GradCheckResult result;
};

// Runs every gradient check of the suite once per seed in [first_seed, first_seed + seeds),
// in 64-bit with central differences of the given step. `progress`, when set, sees each
// case as soon as it finishes.
std::vector<SuiteCase> run_gradient_suite(std::size_t seeds, std::uint64_t first_seed = 0, double step = 1e-4,
                                          const std::function<void(const SuiteCase&)>& progress = {});

}  // namespace xfe
