#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "xfe/geometry.hpp"
#include "xfe/rng.hpp"

namespace xfe::sampling {

using geometry::PixelIndex;

// bit(r, c) == (-ln(I / i0) > threshold), threshold = tau * max absorption of the view.
struct ForegroundMask {
  std::size_t rows = 0, cols = 0;
  std::size_t view = 0;
  double threshold = 0.0;
  std::vector<std::uint8_t> bits;

  bool at(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  std::size_t count() const;
};

// Throws NoForegroundError when no pixel passes the threshold.
ForegroundMask build_mask(std::span<const float> image, std::size_t rows, std::size_t cols, std::size_t view,
                          double tau = 0.05, double i0 = 1.0);

// Non-overlapping S x S windows on the S-stride grid of one view. A partial strip at
// the bottom/right edge (when S does not divide H or W) is not tiled.
struct WindowSet {
  std::size_t size = 0;
  std::size_t view = 0;
  std::size_t grid_rows = 0, grid_cols = 0;
  std::vector<std::uint8_t> full;  // grid_rows x grid_cols, 1 when all S^2 bits are set

  bool is_full(std::size_t gr, std::size_t gc) const { return full[gr * grid_cols + gc] != 0; }
  std::size_t count_full() const;
};

WindowSet foreground_windows(const ForegroundMask& mask, std::size_t size);

enum class Provenance : std::uint8_t { patch, pixel };

struct Window {
  std::size_t view = 0, grid_row = 0, grid_col = 0;
  auto operator<=>(const Window&) const = default;
};

struct RayBatch {
  std::vector<PixelIndex> pixels;
  std::vector<Provenance> provenance;
  std::vector<Window> windows;  // chosen patch windows
  std::size_t window_size = 0;
  bool window_fallback = false;  // fewer fully-foreground windows than requested
  bool pixel_fallback = false;   // pixel pool smaller than requested; drew with replacement
};

// Precomputed masks and windows for all training views (identical H, W).
class MlgSampler {
 public:
  MlgSampler(std::vector<ForegroundMask> masks, std::size_t window_size);

  // Draws n_patch_rays / S^2 full windows across all views, then n_pixel_rays
  // foreground pixels outside the chosen windows, both without replacement.
  RayBatch sample(std::size_t n_patch_rays, std::size_t n_pixel_rays, Rng& rng) const;

  const std::vector<ForegroundMask>& masks() const noexcept { return masks_; }
  const std::vector<WindowSet>& windows() const noexcept { return windows_; }
  std::size_t window_size() const noexcept { return size_; }

 private:
  std::vector<ForegroundMask> masks_;
  std::vector<WindowSet> windows_;
  std::size_t size_;
  std::vector<Window> full_windows_;
  std::vector<PixelIndex> foreground_;
};

// Uniform over all V * H * W pixels (background included), without replacement.
RayBatch naive_sample(std::size_t views, std::size_t rows, std::size_t cols, std::size_t n_rays, Rng& rng);

// k distinct indices from [0, n) in draw order (partial Fisher-Yates).
std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng);

// Debug image, views stacked vertically: background 0, foreground 64, pixel picks 160,
// patch picks 255.
void write_batch_pgm(const std::filesystem::path& path, const std::vector<ForegroundMask>& masks,
                     const RayBatch& batch);

}  // namespace xfe::sampling
