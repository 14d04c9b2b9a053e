#include "xfe/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>

#include "xfe/ad/binder.hpp"
#include "xfe/error.hpp"

namespace xfe::bench {

std::vector<AttnBenchRow> bench_attention(const std::vector<std::size_t>& points, const AttnBenchOptions& options) {
  std::vector<AttnBenchRow> rows;
  Rng rng(options.seed);
  for (std::size_t n : points) {
    model::LineformerConfig cfg;
    cfg.channels = options.channels;
    cfg.heads = options.heads;
    cfg.segment = options.segment;
    cfg.points = n;
    cfg.validate();
    ad::Tensor<float> x({options.rays * n, options.channels});
    for (auto& v : x.storage()) v = static_cast<float>(normal(rng));
    for (model::Mixer mixer : {model::Mixer::ls_msa, model::Mixer::g_msa}) {
      cfg.mixer = mixer;
      model::LSABParams<float> p("bench", cfg, rng);
      AttnBenchRow row;
      row.points = n;
      row.mixer = mixer;
      row.analytic_macs = model::attention_macs(n, cfg.channels, cfg.heads, mixer);
      row.seconds = INFINITY;
      double total = 0.0;
      for (std::size_t rep = 0; rep < options.min_repeats || total < options.min_seconds; ++rep) {
        ad::Tape<float> tape;
        ad::Binder<float> b(tape);
        const ad::Var in = tape.constant(x);
        const std::uint64_t before = ad::batched_mac_counter();
        const auto start = std::chrono::steady_clock::now();
        if (mixer == model::Mixer::ls_msa) {
          model::ls_msa(b, p, cfg, in);
        } else {
          model::g_msa(b, p, cfg, in);
        }
        const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        row.measured_macs = (ad::batched_mac_counter() - before) / options.rays;
        row.seconds = std::min(row.seconds, dt);
        total += dt;
      }
      rows.push_back(row);
    }
  }
  return rows;
}

double scaling_exponent(const std::vector<AttnBenchRow>& rows, model::Mixer mixer) {
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  std::size_t k = 0;
  for (const auto& r : rows) {
    if (r.mixer != mixer) continue;
    const double x = std::log(static_cast<double>(r.points)), y = std::log(r.seconds);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
    ++k;
  }
  if (k < 2) throw ContractError("scaling_exponent: need at least two point counts");
  const double kk = static_cast<double>(k);
  return (kk * sxy - sx * sy) / (kk * sxx - sx * sx);
}

void write_attention_csv(std::ostream& out, const std::vector<AttnBenchRow>& rows) {
  out << "n,mixer,seconds,analytic_macs,measured_macs,exponent\n";
  char line[200];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof line, "%zu,%s,%.9g,%llu,%llu,\n", r.points, std::string(model::to_string(r.mixer)).c_str(),
                  r.seconds, static_cast<unsigned long long>(r.analytic_macs),
                  static_cast<unsigned long long>(r.measured_macs));
    out << line;
  }
  for (model::Mixer m : {model::Mixer::ls_msa, model::Mixer::g_msa}) {
    std::snprintf(line, sizeof line, "fit,%s,,,,%.6f\n", std::string(model::to_string(m)).c_str(),
                  scaling_exponent(rows, m));
    out << line;
  }
}

}  // namespace xfe::bench
