#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "json.hpp"
#include "xfe/ad/tape.hpp"
#include "xfe/geometry.hpp"
#include "xfe/rng.hpp"

namespace xfe::encoding {

using geometry::Vec3;

// Multiresolution hash grid. Level l has resolution floor(base · growth^l) cells per
// axis; levels whose (res + 1)^3 lattice fits in the table are indexed directly,
// finer ones go through the spatial hash.
struct HashGridConfig {
  std::size_t levels = 8;
  unsigned log2_table = 15;
  std::size_t features = 4;
  std::size_t base_resolution = 16;
  double growth = 1.5;

  void validate() const;  // ConfigError
  std::size_t channels() const noexcept { return levels * features; }
  std::size_t max_entries() const noexcept { return std::size_t{1} << log2_table; }
  std::size_t resolution(std::size_t level) const;
  bool dense(std::size_t level) const;
  std::size_t entries(std::size_t level) const;  // rows used by this level
  std::size_t total_entries() const;
};

void to_json(nlohmann::json& j, const HashGridConfig& c);
void from_json(const nlohmann::json& j, HashGridConfig& c);

inline constexpr std::uint32_t kHashPrimes[3] = {1u, 2654435761u, 805459861u};

// XOR-of-primes spatial hash with 32-bit wraparound, reduced modulo `entries`.
inline std::uint32_t spatial_hash(std::uint32_t x, std::uint32_t y, std::uint32_t z, std::size_t entries) {
  const std::uint32_t h = (x * kHashPrimes[0]) ^ (y * kHashPrimes[1]) ^ (z * kHashPrimes[2]);
  return static_cast<std::uint32_t>(h % entries);
}

// Row (relative to the level's block) addressed by an integer lattice corner.
std::size_t corner_row(const HashGridConfig& config, std::size_t level, std::uint32_t x, std::uint32_t y,
                       std::uint32_t z);

// All levels share one [total_entries, features] table; level l owns a contiguous block.
template <class T>
struct HashGridParams {
  HashGridConfig config;
  ad::Parameter<T> table;
  std::vector<std::size_t> offsets;  // first row of each level

  HashGridParams() = default;
  HashGridParams(const HashGridConfig& cfg, Rng& rng);  // uniform in [-1e-4, 1e-4]
};

// Tolerance for points slightly outside the unit cube; they are clamped.
inline constexpr double kUnitCubeTolerance = 1e-6;

// F = H(P): [N, levels · features], level-major columns. Points outside
// [-tol, 1 + tol]^3 are a ContractError.
template <class T>
ad::Var encode(ad::Tape<T>& tape, const HashGridParams<T>& params, ad::Var table, std::span<const Vec3> points);

}  // namespace xfe::encoding
