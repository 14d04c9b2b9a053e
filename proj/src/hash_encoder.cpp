#include "xfe/hash_encoder.hpp"

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "xfe/error.hpp"

namespace xfe::encoding {

void HashGridConfig::validate() const {
  if (levels == 0 || features == 0) throw ConfigError("encoder: levels and features must be positive");
  if (log2_table < 4 || log2_table > 24) throw ConfigError("encoder: log2_table must be in [4, 24]");
  if (base_resolution < 1) throw ConfigError("encoder: base_resolution must be at least 1");
  if (!(growth > 1.0)) throw ConfigError("encoder: growth must exceed 1");
  if (resolution(levels - 1) > (std::size_t{1} << 20)) throw ConfigError("encoder: finest resolution too large");
}

std::size_t HashGridConfig::resolution(std::size_t level) const {
  return static_cast<std::size_t>(std::floor(static_cast<double>(base_resolution) * std::pow(growth, level)));
}

bool HashGridConfig::dense(std::size_t level) const {
  const std::size_t side = resolution(level) + 1;
  return side * side * side <= max_entries();
}

std::size_t HashGridConfig::entries(std::size_t level) const {
  const std::size_t side = resolution(level) + 1;
  return dense(level) ? side * side * side : max_entries();
}

std::size_t HashGridConfig::total_entries() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l < levels; ++l) total += entries(l);
  return total;
}

void to_json(nlohmann::json& j, const HashGridConfig& c) {
  j = {{"levels", c.levels},
       {"log2_table", c.log2_table},
       {"features", c.features},
       {"base_resolution", c.base_resolution},
       {"growth", c.growth}};
}

void from_json(const nlohmann::json& j, HashGridConfig& c) {
  c.levels = j.value("levels", c.levels);
  c.log2_table = j.value("log2_table", c.log2_table);
  c.features = j.value("features", c.features);
  c.base_resolution = j.value("base_resolution", c.base_resolution);
  c.growth = j.value("growth", c.growth);
}

std::size_t corner_row(const HashGridConfig& config, std::size_t level, std::uint32_t x, std::uint32_t y,
                       std::uint32_t z) {
  if (config.dense(level)) {
    const std::size_t side = config.resolution(level) + 1;
    return x + side * (y + side * static_cast<std::size_t>(z));
  }
  return spatial_hash(x, y, z, config.max_entries());
}

template <class T>
HashGridParams<T>::HashGridParams(const HashGridConfig& cfg, Rng& rng) : config(cfg) {
  config.validate();
  offsets.resize(config.levels);
  std::size_t row = 0;
  for (std::size_t l = 0; l < config.levels; ++l) {
    offsets[l] = row;
    row += config.entries(l);
  }
  ad::Tensor<T> init({row, config.features});
  for (std::size_t i = 0; i < init.size(); ++i) init[i] = static_cast<T>(uniform(rng, -1e-4, 1e-4));
  table = ad::Parameter<T>("encoder.table", std::move(init));
}

namespace {

// Gather plan shared between forward and backward: for every (point, level) the
// eight absolute table rows and their trilinear weights.
template <class T>
struct Plan {
  std::vector<std::uint32_t> rows;
  std::vector<T> weights;
};

}  // namespace

template <class T>
ad::Var encode(ad::Tape<T>& tape, const HashGridParams<T>& params, ad::Var table, std::span<const Vec3> points) {
  const HashGridConfig& cfg = params.config;
  const std::size_t f = cfg.features;
  const std::size_t levels = cfg.levels;
  const std::size_t n = points.size();
  if (tape.shape(table) != ad::Shape{cfg.total_entries(), f}) {
    throw ContractError("encode: table shape " + ad::shape_string(tape.shape(table)) + " does not match config");
  }
  const ad::Tensor<T>& tab = tape.value(table);

  auto plan = std::make_shared<Plan<T>>();
  plan->rows.resize(n * levels * 8);
  plan->weights.resize(n * levels * 8);
  ad::Tensor<T> out({n, levels * f});

  // Per-level lattice constants, hoisted out of the point loop.
  struct Level {
    double res;
    std::uint32_t last_cell, side;
    bool dense;
    std::size_t offset;
  };
  std::vector<Level> lv(levels);
  for (std::size_t l = 0; l < levels; ++l) {
    const std::size_t res = cfg.resolution(l);
    lv[l] = {static_cast<double>(res), static_cast<std::uint32_t>(res - 1), static_cast<std::uint32_t>(res + 1),
             cfg.dense(l), params.offsets[l]};
  }
  const std::size_t table_size = cfg.max_entries();

  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& p = points[i];
    if ((p.array() < -kUnitCubeTolerance).any() || (p.array() > 1.0 + kUnitCubeTolerance).any()) {
      throw ContractError("encode: point " + std::to_string(i) + " outside the unit cube");
    }
    const Vec3 q = p.cwiseMax(0.0).cwiseMin(1.0);
    T* out_row = out.data() + i * levels * f;
    for (std::size_t l = 0; l < levels; ++l) {
      const Level& L = lv[l];
      std::uint32_t base[3];
      double frac[3];
      for (int a = 0; a < 3; ++a) {
        const double x = q[a] * L.res;
        std::uint32_t c = static_cast<std::uint32_t>(x);  // x >= 0, so truncation is floor
        if (c > L.last_cell) c = L.last_cell;  // the far face belongs to the last cell
        base[a] = c;
        frac[a] = x - static_cast<double>(c);
      }
      const std::size_t slot = (i * levels + l) * 8;
      T* dst = out_row + l * f;
      for (unsigned corner = 0; corner < 8; ++corner) {
        const std::uint32_t dx = corner & 1u, dy = (corner >> 1) & 1u, dz = (corner >> 2) & 1u;
        const double w = (dx ? frac[0] : 1.0 - frac[0]) * (dy ? frac[1] : 1.0 - frac[1]) *
                         (dz ? frac[2] : 1.0 - frac[2]);
        const std::uint32_t x = base[0] + dx, y = base[1] + dy, z = base[2] + dz;
        const std::size_t local = L.dense ? x + std::size_t{L.side} * (y + std::size_t{L.side} * z)
                                          : spatial_hash(x, y, z, table_size);
        const std::size_t row = L.offset + local;
        plan->rows[slot + corner] = static_cast<std::uint32_t>(row);
        plan->weights[slot + corner] = static_cast<T>(w);
        const T* src = tab.data() + row * f;
        for (std::size_t k = 0; k < f; ++k) dst[k] += static_cast<T>(w) * src[k];
      }
    }
  }

  return tape.record("hash_encode", std::move(out), {table},
                     [table, plan, n, levels, f](ad::Tape<T>& tp, const ad::Tensor<T>& g) {
                       ad::Tensor<T>& gt = tp.grad(table);
                       for (std::size_t i = 0; i < n; ++i) {
                         for (std::size_t l = 0; l < levels; ++l) {
                           const T* gi = g.data() + (i * levels + l) * f;
                           const std::size_t slot = (i * levels + l) * 8;
                           for (unsigned corner = 0; corner < 8; ++corner) {
                             const T w = plan->weights[slot + corner];
                             T* dst = gt.data() + std::size_t{plan->rows[slot + corner]} * f;
                             for (std::size_t k = 0; k < f; ++k) dst[k] += w * gi[k];
                           }
                         }
                       }
                     });
}

template struct HashGridParams<float>;
template struct HashGridParams<double>;
template ad::Var encode(ad::Tape<float>&, const HashGridParams<float>&, ad::Var, std::span<const Vec3>);
template ad::Var encode(ad::Tape<double>&, const HashGridParams<double>&, ad::Var, std::span<const Vec3>);

}  // namespace xfe::encoding
