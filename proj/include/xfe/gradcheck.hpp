#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "xfe/ad/tape.hpp"

namespace xfe {

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // "<param>[<index>]" of the worst entry
  std::size_t checked = 0;
};

// Compares reverse-mode gradients of `loss` (which registers the parameters on the
// tape itself) against central finite differences with the given step.
// Relative error per entry: |analytic - numeric| / max(|analytic|, |numeric|, floor).
// At most `max_entries` entries per parameter are probed; large parameters are
// subsampled with preference for entries that receive a nonzero gradient.
GradCheckResult check_gradients(const std::vector<ad::Parameter<double>*>& params,
                                const std::function<ad::Var(ad::Tape<double>&)>& loss, double step = 1e-4,
                                std::size_t max_entries = std::numeric_limits<std::size_t>::max(),
                                std::uint64_t seed = 0, double floor = 1e-6);

}  // namespace xfe
