#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "xfe/config.hpp"
#include "xfe/field.hpp"
#include "xfe/phantom.hpp"

namespace xfe::eval {

inline constexpr double kDefaultPsnrCap = 100.0;

// 10 log10(peak^2 / MSE), accumulated in double; identical inputs give `cap`.
double psnr(std::span<const float> a, std::span<const float> b, double peak, double cap = kDefaultPsnrCap);

struct SsimParams {
  std::size_t window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
};

// Mean local SSIM of two rows x cols images under a normalized Gaussian window,
// evaluated at every position where the window fits entirely (no padding).
double ssim(std::span<const float> a, std::span<const float> b, std::size_t rows, std::size_t cols, double peak,
            const SsimParams& params = {});

struct ViewScore {
  std::size_t view = 0;
  double angle = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

struct VolumeScore {
  double psnr_3d = 0.0;          // over the whole array, peak = reference max
  double psnr_slice_mean = 0.0;  // mean of per-axial-slice PSNR with the same peak
  double ssim_slice_mean = 0.0;  // mean of per-axial-slice SSIM
};

struct MetricsReport {
  std::vector<ViewScore> views;
  double mean_psnr = 0.0;
  double mean_ssim = 0.0;
  std::optional<VolumeScore> volume;
  std::string fingerprint;

  nlohmann::json to_json() const;
};

// FNV-1a 64 of the resolved config, as 16 hex digits.
std::string fingerprint(const config::ExperimentConfig& cfg);

struct RenderedViews {
  std::size_t views = 0, rows = 0, cols = 0;
  std::vector<float> images;  // views x rows x cols
  std::span<const float> view(std::size_t v) const { return {images.data() + v * rows * cols, rows * cols}; }
};

// Renders every pixel of every view through the field with uniform point sampling
// (`points` per ray, 0 = configured). Rays that miss the box render as i0.
RenderedViews render_views(model::Field<float>& field, const config::ExperimentConfig& cfg,
                           const geometry::ScanGeometry& geom, double i0 = 1.0);

// PSNR (peak = i0) and SSIM of rendered against reference views.
MetricsReport eval_nvs(model::Field<float>& field, const config::ExperimentConfig& cfg,
                       const phantom::ProjectionSet& reference, RenderedViews* rendered = nullptr);

// Queries the field at every voxel center of a dims grid spanning the volume box.
// Each x-row of voxel centers is fed to the Lineformer as one point sequence.
phantom::VoxelVolume extract_ct(model::Field<float>& field, const config::ExperimentConfig& cfg,
                                std::array<std::size_t, 3> dims);

// Throws ContractError when dims differ.
VolumeScore eval_ct(const phantom::VoxelVolume& volume, const phantom::VoxelVolume& reference,
                    double cap = kDefaultPsnrCap);

// metrics.csv (one row per view plus a mean row) and summary.json.
void write_report(const std::filesystem::path& dir, const MetricsReport& report);
// <stem>_XXX.pgm previews (shared [0, i0] scale) and one <stem>.f32 raw dump.
void write_views(const std::filesystem::path& dir, const std::string& stem, const RenderedViews& views, double i0);
// Volume file plus axial-slice PGM previews scaled to [0, max].
void write_ct(const std::filesystem::path& dir, const phantom::VoxelVolume& volume);

}  // namespace xfe::eval
