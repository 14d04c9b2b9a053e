#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "xfe/error.hpp"
#include "xfe/mlg_sampler.hpp"

using namespace xfe;
using namespace xfe::sampling;

namespace {

ForegroundMask mask_from(const std::vector<int>& bits, std::size_t rows, std::size_t cols, std::size_t view = 0) {
  ForegroundMask m;
  m.rows = rows;
  m.cols = cols;
  m.view = view;
  m.bits.assign(bits.begin(), bits.end());
  return m;
}

ForegroundMask random_mask(std::size_t rows, std::size_t cols, double density, Rng& rng, std::size_t view = 0) {
  ForegroundMask m;
  m.rows = rows;
  m.cols = cols;
  m.view = view;
  m.bits.resize(rows * cols);
  // Blobby masks: a random rectangle of foreground plus salt noise.
  const std::size_t r0 = uniform_index(rng, rows / 2), c0 = uniform_index(rng, cols / 2);
  const std::size_t r1 = r0 + rows / 4 + uniform_index(rng, rows / 2), c1 = c0 + cols / 4 + uniform_index(rng, cols / 2);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const bool rect = r >= r0 && r < r1 && c >= c0 && c < c1;
      m.bits[r * cols + c] = (rect || uniform01(rng) < density) ? 1 : 0;
    }
  if (m.count() == 0) m.bits[0] = 1;
  return m;
}

std::vector<float> disk_view(std::size_t n, double cx, double cy, double radius, double absorption) {
  std::vector<float> img(n * n, 1.0f);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double dx = static_cast<double>(c) + 0.5 - cx, dy = static_cast<double>(r) + 0.5 - cy;
      const double d2 = dx * dx + dy * dy;
      if (d2 < radius * radius) img[r * n + c] = static_cast<float>(std::exp(-absorption * (1.0 - d2 / (radius * radius))));
    }
  return img;
}

}  // namespace

TEST(BuildMask, UnattenuatedViewHasNoForeground) {
  const std::vector<float> img(64, 1.0f);
  EXPECT_THROW(build_mask(img, 8, 8, 0), NoForegroundError);
}

TEST(BuildMask, DiskMatchesDirectThresholding) {
  const auto img = disk_view(32, 14.3, 17.8, 9.0, 1.2);
  const auto mask = build_mask(img, 32, 32, 3, 0.05);
  double peak = 0;
  for (float v : img) peak = std::max(peak, -std::log(static_cast<double>(v)));
  EXPECT_DOUBLE_EQ(mask.threshold, 0.05 * peak);
  EXPECT_EQ(mask.view, 3u);
  std::size_t fg = 0;
  for (std::size_t i = 0; i < img.size(); ++i) {
    const bool expected = -std::log(static_cast<double>(img[i])) > 0.05 * peak;
    EXPECT_EQ(mask.bits[i] != 0, expected) << i;
    fg += expected;
  }
  EXPECT_GT(fg, 100u);
  EXPECT_LT(fg, 32u * 32u);
}

TEST(BuildMask, ZeroTauKeepsEveryAttenuatedPixel) {
  std::vector<float> img(16, 1.0f);
  img[3] = 0.999999f;
  img[7] = 0.2f;
  const auto mask = build_mask(img, 4, 4, 0, 0.0);
  for (std::size_t i = 0; i < 16; ++i) EXPECT_EQ(mask.bits[i] != 0, i == 3 || i == 7) << i;
}

TEST(ForegroundWindows, FullMaskCountsEveryWindow) {
  const auto ws = foreground_windows(mask_from(std::vector<int>(64, 1), 8, 8), 4);
  EXPECT_EQ(ws.grid_rows * ws.grid_cols, 4u);
  EXPECT_EQ(ws.count_full(), 4u);
}

TEST(ForegroundWindows, OneClearBitUnflagsOnlyItsWindow) {
  std::vector<int> bits(64, 1);
  bits[6 * 8 + 1] = 0;  // row 6, col 1 -> window (1, 0)
  const auto ws = foreground_windows(mask_from(bits, 8, 8), 4);
  EXPECT_EQ(ws.count_full(), 3u);
  EXPECT_FALSE(ws.is_full(1, 0));
}

TEST(ForegroundWindows, PartialStripIsNotTiled) {
  const auto ws = foreground_windows(mask_from(std::vector<int>(10 * 7, 1), 10, 7), 4);
  EXPECT_EQ(ws.grid_rows, 2u);
  EXPECT_EQ(ws.grid_cols, 1u);
  EXPECT_EQ(ws.count_full(), 2u);
}

TEST(ForegroundWindows, AgreesWithBruteForceScan) {
  Rng rng(1);
  for (int trial = 0; trial < 500; ++trial) {
    const auto m = random_mask(16, 16, 0.6, rng);
    for (std::size_t s : {1u, 2u, 3u, 4u, 8u}) {
      const auto ws = foreground_windows(m, s);
      for (std::size_t gr = 0; gr < 16 / s; ++gr)
        for (std::size_t gc = 0; gc < 16 / s; ++gc) {
          bool all = true;
          for (std::size_t r = gr * s; r < gr * s + s; ++r)
            for (std::size_t c = gc * s; c < gc * s + s; ++c) all = all && m.at(r, c);
          ASSERT_EQ(ws.is_full(gr, gc), all) << trial << " s=" << s;
        }
    }
  }
}

TEST(MlgSampler, FullScaleSplitCounts) {
  // One 64x64 view, all foreground: 64 windows of 4x4 plus 1024 pixels.
  MlgSampler sampler({mask_from(std::vector<int>(64 * 64, 1), 64, 64)}, 4);
  Rng rng(2);
  const auto batch = sampler.sample(1024, 1024, rng);
  EXPECT_EQ(batch.windows.size(), 64u);
  EXPECT_EQ(batch.pixels.size(), 2048u);
  EXPECT_FALSE(batch.window_fallback);
  EXPECT_FALSE(batch.pixel_fallback);
  EXPECT_EQ(std::count(batch.provenance.begin(), batch.provenance.end(), Provenance::patch), 1024);
}

TEST(MlgSampler, BatchPropertiesOnRandomMasks) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<ForegroundMask> masks;
    for (std::size_t v = 0; v < 3; ++v) masks.push_back(random_mask(16, 16, 0.3, rng, v));
    const std::size_t s = 2 + uniform_index(rng, 2);
    MlgSampler sampler(masks, s);
    const auto batch = sampler.sample(4 * s * s, 20, rng);
    std::set<PixelIndex> seen;
    std::set<PixelIndex> patch_pixels;
    for (const auto& w : batch.windows) {
      EXPECT_TRUE(sampler.windows()[w.view].is_full(w.grid_row, w.grid_col));
      for (std::size_t r = 0; r < s; ++r)
        for (std::size_t c = 0; c < s; ++c) patch_pixels.insert({w.view, w.grid_row * s + r, w.grid_col * s + c});
    }
    std::set<PixelIndex> emitted_patch;
    for (std::size_t i = 0; i < batch.pixels.size(); ++i) {
      const auto& p = batch.pixels[i];
      EXPECT_TRUE(masks[p.view].at(p.row, p.col));
      if (!batch.pixel_fallback) {
        EXPECT_TRUE(seen.insert(p).second);
      }
      if (batch.provenance[i] == Provenance::patch) {
        emitted_patch.insert(p);
      } else {
        EXPECT_EQ(patch_pixels.count(p), 0u);
      }
    }
    EXPECT_EQ(emitted_patch, patch_pixels);
    if (!batch.window_fallback && !batch.pixel_fallback) {
      EXPECT_EQ(batch.pixels.size(), 4 * s * s + 20);
    }
  }
}

TEST(MlgSampler, WindowDeficitMovesToPixelSampling) {
  std::vector<int> bits(8 * 8, 0);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 8; ++c) bits[r * 8 + c] = 1;  // exactly two full 4x4 windows
  MlgSampler sampler({mask_from(bits, 8, 8)}, 4);
  Rng rng(4);
  const auto batch = sampler.sample(3 * 16, 0, rng);
  EXPECT_TRUE(batch.window_fallback);
  EXPECT_EQ(batch.windows.size(), 2u);
  // The deficit of 16 rays is requested from an empty pixel pool.
  EXPECT_TRUE(batch.pixel_fallback);
  EXPECT_EQ(batch.pixels.size(), 32u);
}

TEST(MlgSampler, SmallPoolFallsBackToReplacement) {
  std::vector<int> bits(8 * 8, 0);
  bits[5] = bits[17] = bits[40] = 1;
  MlgSampler sampler({mask_from(bits, 8, 8)}, 4);
  Rng rng(5);
  const auto batch = sampler.sample(0, 10, rng);
  EXPECT_TRUE(batch.pixel_fallback);
  EXPECT_EQ(batch.pixels.size(), 10u);
  for (const auto& p : batch.pixels) EXPECT_TRUE(bits[p.row * 8 + p.col]);
}

TEST(MlgSampler, PatchRaysMustFillWholeWindows) {
  MlgSampler sampler({mask_from(std::vector<int>(64, 1), 8, 8)}, 4);
  Rng rng(6);
  EXPECT_THROW(sampler.sample(10, 0, rng), ConfigError);
}

TEST(MlgSampler, SameSeedSameBatch) {
  Rng gen(7);
  std::vector<ForegroundMask> masks{random_mask(16, 16, 0.4, gen, 0), random_mask(16, 16, 0.4, gen, 1)};
  MlgSampler sampler(masks, 2);
  Rng a(99), b(99);
  const auto x = sampler.sample(16, 30, a), y = sampler.sample(16, 30, b);
  EXPECT_EQ(x.pixels, y.pixels);
  EXPECT_EQ(x.windows, y.windows);
}

TEST(NaiveSample, ExhaustiveDrawCoversEveryPixelOnce) {
  Rng rng(8);
  const auto batch = naive_sample(3, 5, 4, 60, rng);
  std::set<PixelIndex> seen(batch.pixels.begin(), batch.pixels.end());
  EXPECT_EQ(seen.size(), 60u);
  EXPECT_THROW(naive_sample(3, 5, 4, 61, rng), ConfigError);
}

TEST(NaiveSample, SameSeedSameBatch) {
  Rng a(9), b(9);
  EXPECT_EQ(naive_sample(4, 16, 16, 100, a).pixels, naive_sample(4, 16, 16, 100, b).pixels);
}

TEST(NaiveSample, BackgroundFractionMatchesArea) {
  Rng gen(10);
  const auto mask = random_mask(16, 16, 0.2, gen);
  const double bg_area = 1.0 - static_cast<double>(mask.count()) / 256.0;
  Rng rng(11);
  const std::size_t draws = 2000, per = 32;
  std::size_t bg = 0;
  for (std::size_t i = 0; i < draws; ++i) {
    for (const auto& p : naive_sample(1, 16, 16, per, rng).pixels) bg += !mask.at(p.row, p.col);
  }
  const double n = static_cast<double>(draws * per);
  // Without-replacement draws within a batch only shrink the variance.
  const double sigma = std::sqrt(bg_area * (1 - bg_area) / n);
  EXPECT_NEAR(static_cast<double>(bg) / n, bg_area, 3 * sigma);
}
