#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

namespace xfe::io {

// Binary 8-bit PGM (P5).
void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels);

// Linearly maps [lo, hi] onto 0..255 (clamped) and writes a PGM preview.
void write_pgm_scaled(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const float> values, double lo, double hi);

// Headerless little-endian float32 dump.
void write_raw_f32(const std::filesystem::path& path, std::span<const float> values);

}  // namespace xfe::io
