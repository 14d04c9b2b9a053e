#include "xfe/mlg_sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "xfe/error.hpp"
#include "xfe/image_io.hpp"

namespace xfe::sampling {

std::size_t ForegroundMask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

ForegroundMask build_mask(std::span<const float> image, std::size_t rows, std::size_t cols, std::size_t view,
                          double tau, double i0) {
  if (image.size() != rows * cols) throw ContractError("build_mask: image size does not match rows x cols");
  if (!(tau >= 0.0)) throw ConfigError("build_mask: tau must be non-negative");
  std::vector<double> absorption(image.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < image.size(); ++i) {
    if (!(image[i] > 0.0f)) throw DataError("build_mask: non-positive intensity in view " + std::to_string(view));
    absorption[i] = std::max(0.0, -std::log(static_cast<double>(image[i]) / i0));
    peak = std::max(peak, absorption[i]);
  }
  ForegroundMask mask;
  mask.rows = rows;
  mask.cols = cols;
  mask.view = view;
  mask.threshold = tau * peak;
  mask.bits.resize(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) mask.bits[i] = absorption[i] > mask.threshold ? 1 : 0;
  if (mask.count() == 0) throw NoForegroundError("view " + std::to_string(view) + " has no foreground pixels");
  return mask;
}

std::size_t WindowSet::count_full() const {
  return static_cast<std::size_t>(std::count(full.begin(), full.end(), std::uint8_t{1}));
}

WindowSet foreground_windows(const ForegroundMask& mask, std::size_t size) {
  if (size == 0) throw ConfigError("window size must be positive");
  WindowSet ws;
  ws.size = size;
  ws.view = mask.view;
  ws.grid_rows = mask.rows / size;
  ws.grid_cols = mask.cols / size;
  ws.full.assign(ws.grid_rows * ws.grid_cols, 0);
  // Summed-area table over the mask turns each window test into four lookups.
  const std::size_t w = mask.cols + 1;
  std::vector<std::uint32_t> sat((mask.rows + 1) * w, 0);
  for (std::size_t r = 0; r < mask.rows; ++r)
    for (std::size_t c = 0; c < mask.cols; ++c) {
      sat[(r + 1) * w + c + 1] = mask.bits[r * mask.cols + c] + sat[r * w + c + 1] + sat[(r + 1) * w + c] - sat[r * w + c];
    }
  for (std::size_t gr = 0; gr < ws.grid_rows; ++gr)
    for (std::size_t gc = 0; gc < ws.grid_cols; ++gc) {
      const std::size_t r0 = gr * size, c0 = gc * size, r1 = r0 + size, c1 = c0 + size;
      const std::uint32_t inside = sat[r1 * w + c1] - sat[r0 * w + c1] - sat[r1 * w + c0] + sat[r0 * w + c0];
      ws.full[gr * ws.grid_cols + gc] = inside == size * size ? 1 : 0;
    }
  return ws;
}

std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  if (k > n) throw ContractError("sample_without_replacement: k exceeds population");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + uniform_index(rng, n - i)]);
  idx.resize(k);
  return idx;
}

MlgSampler::MlgSampler(std::vector<ForegroundMask> masks, std::size_t window_size)
    : masks_(std::move(masks)), size_(window_size) {
  if (masks_.empty()) throw ContractError("MlgSampler: no masks");
  for (const auto& m : masks_) {
    if (m.rows != masks_.front().rows || m.cols != masks_.front().cols) {
      throw ContractError("MlgSampler: masks differ in size");
    }
  }
  for (std::size_t v = 0; v < masks_.size(); ++v) {
    windows_.push_back(foreground_windows(masks_[v], size_));
    const WindowSet& ws = windows_.back();
    for (std::size_t gr = 0; gr < ws.grid_rows; ++gr)
      for (std::size_t gc = 0; gc < ws.grid_cols; ++gc) {
        if (ws.is_full(gr, gc)) full_windows_.push_back({v, gr, gc});
      }
    const ForegroundMask& m = masks_[v];
    for (std::size_t r = 0; r < m.rows; ++r)
      for (std::size_t c = 0; c < m.cols; ++c) {
        if (m.at(r, c)) foreground_.push_back({v, r, c});
      }
  }
}

RayBatch MlgSampler::sample(std::size_t n_patch_rays, std::size_t n_pixel_rays, Rng& rng) const {
  const std::size_t area = size_ * size_;
  if (n_patch_rays % area != 0) {
    throw ConfigError("patch rays (" + std::to_string(n_patch_rays) + ") must be divisible by the window area (" +
                      std::to_string(area) + ")");
  }
  RayBatch batch;
  batch.window_size = size_;
  std::size_t n_windows = n_patch_rays / area;
  if (full_windows_.size() < n_windows) {
    batch.window_fallback = true;
    n_pixel_rays += (n_windows - full_windows_.size()) * area;
    n_windows = full_windows_.size();
  }

  const std::size_t rows = masks_.front().rows, cols = masks_.front().cols;
  const std::size_t grid_rows = rows / size_, grid_cols = cols / size_;
  std::vector<std::uint8_t> taken(masks_.size() * grid_rows * grid_cols, 0);
  for (std::size_t i : sample_without_replacement(full_windows_.size(), n_windows, rng)) {
    const Window& w = full_windows_[i];
    batch.windows.push_back(w);
    taken[(w.view * grid_rows + w.grid_row) * grid_cols + w.grid_col] = 1;
    for (std::size_t r = 0; r < size_; ++r)
      for (std::size_t c = 0; c < size_; ++c) {
        batch.pixels.push_back({w.view, w.grid_row * size_ + r, w.grid_col * size_ + c});
        batch.provenance.push_back(Provenance::patch);
      }
  }

  // Pixel pool: foreground minus the chosen windows.
  auto in_taken = [&](const PixelIndex& p) {
    if (p.row / size_ >= grid_rows || p.col / size_ >= grid_cols) return false;
    return taken[(p.view * grid_rows + p.row / size_) * grid_cols + p.col / size_] != 0;
  };
  std::vector<std::size_t> pool;
  pool.reserve(foreground_.size());
  for (std::size_t i = 0; i < foreground_.size(); ++i) {
    if (!in_taken(foreground_[i])) pool.push_back(i);
  }
  std::vector<std::size_t> picks;
  if (pool.size() >= n_pixel_rays) {
    picks = sample_without_replacement(pool.size(), n_pixel_rays, rng);
  } else {
    batch.pixel_fallback = true;
    picks = sample_without_replacement(pool.size(), pool.size(), rng);
    while (!pool.empty() && picks.size() < n_pixel_rays) picks.push_back(uniform_index(rng, pool.size()));
  }
  for (std::size_t j : picks) {
    batch.pixels.push_back(foreground_[pool[j]]);
    batch.provenance.push_back(Provenance::pixel);
  }
  return batch;
}

RayBatch naive_sample(std::size_t views, std::size_t rows, std::size_t cols, std::size_t n_rays, Rng& rng) {
  const std::size_t plane = rows * cols;
  if (n_rays > views * plane) throw ConfigError("naive sampler: more rays requested than pixels available");
  RayBatch batch;
  for (std::size_t i : sample_without_replacement(views * plane, n_rays, rng)) {
    batch.pixels.push_back({i / plane, (i % plane) / cols, i % cols});
    batch.provenance.push_back(Provenance::pixel);
  }
  return batch;
}

void write_batch_pgm(const std::filesystem::path& path, const std::vector<ForegroundMask>& masks,
                     const RayBatch& batch) {
  if (masks.empty()) throw ContractError("write_batch_pgm: no masks");
  const std::size_t rows = masks.front().rows, cols = masks.front().cols;
  std::vector<std::uint8_t> px(masks.size() * rows * cols, 0);
  for (std::size_t v = 0; v < masks.size(); ++v)
    for (std::size_t i = 0; i < rows * cols; ++i) px[v * rows * cols + i] = masks[v].bits[i] ? 64 : 0;
  for (std::size_t i = 0; i < batch.pixels.size(); ++i) {
    const auto& p = batch.pixels[i];
    px[(p.view * rows + p.row) * cols + p.col] = batch.provenance[i] == Provenance::patch ? 255 : 160;
  }
  io::write_pgm(path, cols, masks.size() * rows, px);
}

}  // namespace xfe::sampling
