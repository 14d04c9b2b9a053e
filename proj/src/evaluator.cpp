#include "xfe/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "xfe/ad/binder.hpp"
#include "xfe/error.hpp"
#include "xfe/image_io.hpp"
#include "xfe/renderer.hpp"

namespace xfe::eval {

namespace fs = std::filesystem;

double psnr(std::span<const float> a, std::span<const float> b, double peak, double cap) {
  if (a.size() != b.size()) throw ContractError("psnr: size mismatch");
  if (a.empty()) throw ContractError("psnr: empty input");
  double se = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    se += d * d;
  }
  if (se == 0.0) return cap;
  return std::min(cap, 10.0 * std::log10(peak * peak / (se / static_cast<double>(a.size()))));
}

namespace {

std::vector<double> gaussian_taps(std::size_t n, double sigma) {
  std::vector<double> w(n);
  const double c = (static_cast<double>(n) - 1.0) / 2.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x = static_cast<double>(i) - c;
    w[i] = std::exp(-x * x / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Separable "valid" filtering of a rows x cols image.
std::vector<double> filter_valid(const std::vector<double>& img, std::size_t rows, std::size_t cols,
                                 const std::vector<double>& taps) {
  const std::size_t n = taps.size(), orows = rows - n + 1, ocols = cols - n + 1;
  std::vector<double> tmp(rows * ocols, 0.0), out(orows * ocols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < ocols; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += taps[k] * img[r * cols + c + k];
      tmp[r * ocols + c] = acc;
    }
  for (std::size_t r = 0; r < orows; ++r)
    for (std::size_t c = 0; c < ocols; ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < n; ++k) acc += taps[k] * tmp[(r + k) * ocols + c];
      out[r * ocols + c] = acc;
    }
  return out;
}

}  // namespace

double ssim(std::span<const float> a, std::span<const float> b, std::size_t rows, std::size_t cols, double peak,
            const SsimParams& params) {
  if (a.size() != rows * cols || b.size() != rows * cols) throw ContractError("ssim: size mismatch");
  if (rows < params.window || cols < params.window) {
    throw ContractError("ssim: image " + std::to_string(rows) + "x" + std::to_string(cols) +
                        " is smaller than the window " + std::to_string(params.window));
  }
  const std::size_t n = rows * cols;
  std::vector<double> x(n), y(n), xx(n), yy(n), xy(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = a[i];
    y[i] = b[i];
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto taps = gaussian_taps(params.window, params.sigma);
  const auto mx = filter_valid(x, rows, cols, taps), my = filter_valid(y, rows, cols, taps);
  const auto sxx = filter_valid(xx, rows, cols, taps), syy = filter_valid(yy, rows, cols, taps),
             sxy = filter_valid(xy, rows, cols, taps);
  const double c1 = (params.k1 * peak) * (params.k1 * peak), c2 = (params.k2 * peak) * (params.k2 * peak);
  double total = 0.0;
  for (std::size_t i = 0; i < mx.size(); ++i) {
    const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
    total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mx.size());
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json per_view = nlohmann::json::array();
  for (const auto& v : views) per_view.push_back({{"view", v.view}, {"angle", v.angle}, {"psnr", v.psnr}, {"ssim", v.ssim}});
  nlohmann::json j = {{"views", per_view}, {"mean_psnr", mean_psnr}, {"mean_ssim", mean_ssim},
                      {"fingerprint", fingerprint}};
  if (volume) {
    j["volume"] = {{"psnr_3d", volume->psnr_3d},
                   {"psnr_slice_mean", volume->psnr_slice_mean},
                   {"ssim_slice_mean", volume->ssim_slice_mean}};
  }
  return j;
}

std::string fingerprint(const config::ExperimentConfig& cfg) {
  const std::string text = config::to_json(cfg).dump();
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

// Evaluates the field on `seq` sequences of `per` normalized points, in chunks.
std::vector<float> query(model::Field<float>& field, const std::vector<geometry::Vec3>& pts, std::size_t per,
                         std::size_t chunk_sequences) {
  std::vector<float> out(pts.size());
  const std::size_t seq = pts.size() / per;
  for (std::size_t s0 = 0; s0 < seq; s0 += chunk_sequences) {
    const std::size_t s1 = std::min(seq, s0 + chunk_sequences);
    ad::Tape<float> tape;
    ad::Binder<float> bind(tape);
    const std::span<const geometry::Vec3> part(pts.data() + s0 * per, (s1 - s0) * per);
    const auto& rho = tape.value(field.density(bind, part, per));
    std::copy(rho.data(), rho.data() + rho.size(), out.begin() + static_cast<std::ptrdiff_t>(s0 * per));
  }
  return out;
}

}  // namespace

RenderedViews render_views(model::Field<float>& field, const config::ExperimentConfig& cfg,
                           const geometry::ScanGeometry& geom, double i0) {
  const std::size_t n = cfg.eval_points();
  RenderedViews out;
  out.views = geom.views();
  out.rows = geom.rows;
  out.cols = geom.cols;
  out.images.assign(out.views * out.rows * out.cols, static_cast<float>(i0));
  Rng unused(0);  // uniform sampling draws nothing
  const geometry::Vec3 half = geom.half_extent();
  std::vector<std::size_t> pixel;
  std::vector<geometry::Vec3> pts;
  std::vector<double> deltas;
  auto flush = [&] {
    if (pixel.empty()) return;
    const auto rho = query(field, pts, n, pixel.size());
    for (std::size_t r = 0; r < pixel.size(); ++r) {
      const auto res = rendering::render(std::span<const float>(rho.data() + r * n, n),
                                         std::span<const double>(deltas.data() + r * n, n), i0);
      out.images[pixel[r]] = static_cast<float>(res.i_pred);
    }
    pixel.clear();
    pts.clear();
    deltas.clear();
  };
  for (std::size_t v = 0; v < out.views; ++v)
    for (std::size_t r = 0; r < out.rows; ++r)
      for (std::size_t c = 0; c < out.cols; ++c) {
        const auto ray = geometry::ray_for_pixel(geom, v, r, c);
        if (!ray) continue;
        const auto pb = geometry::sample_points(*ray, n, geometry::SampleMode::uniform, unused, half);
        pixel.push_back((v * out.rows + r) * out.cols + c);
        pts.insert(pts.end(), pb.normalized.begin(), pb.normalized.end());
        deltas.insert(deltas.end(), pb.delta.begin(), pb.delta.end());
        if (pixel.size() == cfg.eval.chunk_rays) flush();
      }
  flush();
  return out;
}

MetricsReport eval_nvs(model::Field<float>& field, const config::ExperimentConfig& cfg,
                       const phantom::ProjectionSet& reference, RenderedViews* rendered) {
  if (reference.rows != cfg.geometry.rows || reference.cols != cfg.geometry.cols) {
    throw DataError("eval_nvs: reference views do not match the configured detector");
  }
  const auto geom = cfg.geometry.scan(reference.angles);
  const RenderedViews views = render_views(field, cfg, geom, reference.i0);
  MetricsReport report;
  report.fingerprint = fingerprint(cfg);
  for (std::size_t v = 0; v < views.views; ++v) {
    ViewScore s;
    s.view = v;
    s.angle = reference.angles[v];
    s.psnr = psnr(views.view(v), reference.view(v), reference.i0, cfg.eval.psnr_cap);
    s.ssim = ssim(views.view(v), reference.view(v), views.rows, views.cols, reference.i0);
    report.mean_psnr += s.psnr;
    report.mean_ssim += s.ssim;
    report.views.push_back(s);
  }
  if (!report.views.empty()) {
    report.mean_psnr /= static_cast<double>(report.views.size());
    report.mean_ssim /= static_cast<double>(report.views.size());
  }
  if (rendered) *rendered = views;
  return report;
}

phantom::VoxelVolume extract_ct(model::Field<float>& field, const config::ExperimentConfig& cfg,
                                std::array<std::size_t, 3> dims) {
  const auto& e = cfg.geometry.volume_extent;
  const geometry::Vec3 spacing(e[0] / static_cast<double>(dims[0]), e[1] / static_cast<double>(dims[1]),
                               e[2] / static_cast<double>(dims[2]));
  phantom::VoxelVolume vol(dims, spacing);
  const geometry::Vec3 half(e[0] / 2, e[1] / 2, e[2] / 2);
  std::vector<geometry::Vec3> pts;
  pts.reserve(vol.data.size());
  for (std::size_t z = 0; z < dims[2]; ++z)
    for (std::size_t y = 0; y < dims[1]; ++y)
      for (std::size_t x = 0; x < dims[0]; ++x) pts.push_back(geometry::normalize_position(vol.voxel_center(x, y, z), half));
  const std::size_t rows_per_chunk = std::max<std::size_t>(1, cfg.eval.chunk_rays * cfg.eval_points() / dims[0]);
  const auto rho = query(field, pts, dims[0], rows_per_chunk);
  std::copy(rho.begin(), rho.end(), vol.data.begin());
  return vol;
}

VolumeScore eval_ct(const phantom::VoxelVolume& volume, const phantom::VoxelVolume& reference, double cap) {
  if (volume.dims != reference.dims) throw ContractError("eval_ct: volume dims differ from the reference");
  const double peak = *std::max_element(reference.data.begin(), reference.data.end());
  VolumeScore s;
  s.psnr_3d = psnr(volume.data, reference.data, peak, cap);
  const std::size_t plane = reference.dims[0] * reference.dims[1];
  const std::size_t slices = reference.dims[2];
  for (std::size_t z = 0; z < slices; ++z) {
    const std::span<const float> a(volume.data.data() + z * plane, plane), b(reference.data.data() + z * plane, plane);
    s.psnr_slice_mean += psnr(a, b, peak, cap);
    s.ssim_slice_mean += ssim(a, b, reference.dims[1], reference.dims[0], peak);
  }
  s.psnr_slice_mean /= static_cast<double>(slices);
  s.ssim_slice_mean /= static_cast<double>(slices);
  return s;
}

void write_report(const fs::path& dir, const MetricsReport& report) {
  fs::create_directories(dir);
  {
    std::ofstream csv(dir / "metrics.csv");
    if (!csv) throw DataError("cannot write " + (dir / "metrics.csv").string());
    csv << "view,angle,psnr,ssim\n";
    char line[160];
    for (const auto& v : report.views) {
      std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g\n", v.view, v.angle, v.psnr, v.ssim);
      csv << line;
    }
    if (!report.views.empty()) {
      std::snprintf(line, sizeof line, "mean,,%.9g,%.9g\n", report.mean_psnr, report.mean_ssim);
      csv << line;
    }
  }
  std::ofstream js(dir / "summary.json");
  if (!js) throw DataError("cannot write " + (dir / "summary.json").string());
  js << report.to_json().dump(2) << '\n';
}

void write_views(const fs::path& dir, const std::string& stem, const RenderedViews& views, double i0) {
  fs::create_directories(dir);
  io::write_raw_f32(dir / (stem + ".f32"), views.images);
  char name[64];
  for (std::size_t v = 0; v < views.views; ++v) {
    std::snprintf(name, sizeof name, "%s_%03zu.pgm", stem.c_str(), v);
    io::write_pgm_scaled(dir / name, views.cols, views.rows, views.view(v), 0.0, i0);
  }
}

void write_ct(const fs::path& dir, const phantom::VoxelVolume& volume) {
  fs::create_directories(dir / "slices");
  phantom::write_volume(dir / "ct.xfv", volume);
  io::write_raw_f32(dir / "ct.f32", volume.data);
  const double hi = std::max(1e-12, static_cast<double>(*std::max_element(volume.data.begin(), volume.data.end())));
  const std::size_t plane = volume.dims[0] * volume.dims[1];
  char name[64];
  for (std::size_t z = 0; z < volume.dims[2]; ++z) {
    std::snprintf(name, sizeof name, "slice_%03zu.pgm", z);
    io::write_pgm_scaled(dir / "slices" / name, volume.dims[0], volume.dims[1],
                         std::span<const float>(volume.data.data() + z * plane, plane), 0.0, hi);
  }
}

}  // namespace xfe::eval
