#include "xfe/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "xfe/binary_io.hpp"
#include "xfe/error.hpp"

namespace xfe::io {

namespace {

std::ofstream open_for_write(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
  return out;
}

}  // namespace

void write_pgm(const std::filesystem::path& path, std::size_t width, std::size_t height,
               std::span<const std::uint8_t> pixels) {
  if (pixels.size() != width * height) throw ContractError("write_pgm: pixel count does not match size");
  auto out = open_for_write(path);
  out << "P5\n" << width << ' ' << height << "\n255\n";
  out.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_pgm_scaled(const std::filesystem::path& path, std::size_t width, std::size_t height,
                      std::span<const float> values, double lo, double hi) {
  std::vector<std::uint8_t> px(values.size());
  const double range = hi > lo ? hi - lo : 1.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp((static_cast<double>(values[i]) - lo) / range, 0.0, 1.0);
    px[i] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  write_pgm(path, width, height, px);
}

void write_raw_f32(const std::filesystem::path& path, std::span<const float> values) {
  auto out = open_for_write(path);
  write_f32(out, values);
  if (!out) throw DataError("write failed for '" + path.string() + "'");
}

}  // namespace xfe::io
