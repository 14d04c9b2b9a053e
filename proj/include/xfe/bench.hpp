#pragma once

#include <cstdint>
#include <ostream>
#include <vector>

#include "xfe/lineformer.hpp"

namespace xfe::bench {

struct AttnBenchOptions {
  std::size_t channels = 32;
  std::size_t heads = 8;
  std::size_t segment = 2;
  std::size_t rays = 1;          // rays per timed call
  double min_seconds = 0.05;     // keep repeating a configuration at least this long
  std::size_t min_repeats = 3;
  std::uint64_t seed = 0;
};

struct AttnBenchRow {
  std::size_t points = 0;
  model::Mixer mixer = model::Mixer::ls_msa;
  double seconds = 0.0;              // fastest forward call over all repeats
  std::uint64_t analytic_macs = 0;   // closed form, per ray
  std::uint64_t measured_macs = 0;   // instrumented counter, per ray
};

// Times the forward pass of the ls_msa and g_msa mixers on `rays` rays of N points
// each, for every N in `points`.
std::vector<AttnBenchRow> bench_attention(const std::vector<std::size_t>& points, const AttnBenchOptions& options);

// Least-squares slope of log(seconds) against log(points) over the rows of one mixer.
double scaling_exponent(const std::vector<AttnBenchRow>& rows, model::Mixer mixer);

// CSV: one row per (N, mixer), then one "fit" row per mixer carrying the exponent.
void write_attention_csv(std::ostream& out, const std::vector<AttnBenchRow>& rows);

}  // namespace xfe::bench
