#include "xfe/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace xfe {

namespace {
double evaluate(const std::function<ad::Var(ad::Tape<double>&)>& loss) {
  ad::Tape<double> tape;
  return tape.value(loss(tape)).item();
}
}  // namespace

GradCheckResult check_gradients(const std::vector<ad::Parameter<double>*>& params,
                                const std::function<ad::Var(ad::Tape<double>&)>& loss, double step,
                                std::size_t max_entries, std::uint64_t seed, double floor) {
  for (auto* p : params) p->zero_grad();
  {
    ad::Tape<double> tape;
    tape.backward(loss(tape));
  }

  GradCheckResult result;
  std::mt19937_64 rng(seed);
  for (auto* p : params) {
    const std::size_t n = p->value.size();
    std::vector<std::size_t> probe(n);
    std::iota(probe.begin(), probe.end(), std::size_t{0});
    if (n > max_entries) {
      // Touched entries first (in random order), then untouched ones.
      std::shuffle(probe.begin(), probe.end(), rng);
      std::stable_partition(probe.begin(), probe.end(), [&](std::size_t i) { return p->grad[i] != 0.0; });
      probe.resize(max_entries);
    }
    for (std::size_t i : probe) {
      const double saved = p->value[i];
      p->value[i] = saved + step;
      const double up = evaluate(loss);
      p->value[i] = saved - step;
      const double down = evaluate(loss);
      p->value[i] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p->grad[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
      const double rel = std::abs(analytic - numeric) / denom;
      ++result.checked;
      if (rel > result.max_rel_error || result.worst.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst = p->name + "[" + std::to_string(i) + "]";
        }
      }
    }
  }
  return result;
}

}  // namespace xfe
