// Command-line front end: data generation, training, evaluation and diagnostics.

#include <Eigen/Core>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "xfe/bench.hpp"
#include "xfe/dataset.hpp"
#include "xfe/error.hpp"
#include "xfe/evaluator.hpp"
#include "xfe/grad_suite.hpp"
#include "xfe/trainer.hpp"
#include "xfe/version.hpp"

namespace fs = std::filesystem;
using namespace xfe;

namespace {

enum Exit : int { kOk = 0, kConfig = 1, kData = 2, kNumerical = 3, kInternal = 4 };

config::ExperimentConfig load_config(const std::string& path) {
  return path.empty() ? [] {
    config::ExperimentConfig c;
    c.resolve();
    return c;
  }()
                      : config::load(path);
}

nlohmann::json geometry_json(const config::ExperimentConfig& cfg) { return config::to_json(cfg).at("geometry"); }

// The detector and box recorded with a projection file must agree with the config.
void check_geometry(const nlohmann::json& stored, const config::ExperimentConfig& cfg, const fs::path& file) {
  if (stored.is_null()) return;
  nlohmann::json expected = geometry_json(cfg), got = stored;
  for (auto* j : {&expected, &got}) {
    j->erase("train_views");
    j->erase("test_views");
  }
  if (expected != got) {
    throw DataError("geometry of " + file.string() + " does not match the experiment config: " + got.dump() +
                    " vs " + expected.dump());
  }
}

void apply_threads() {
  const char* env = std::getenv("XFE_THREADS");
  if (!env || !*env) return;
  int n = 0;
  const auto [ptr, ec] = std::from_chars(env, env + std::strlen(env), n);
  if (ec != std::errc() || *ptr != '\0' || n < 1) throw ConfigError("XFE_THREADS must be a positive integer");
  Eigen::setNbThreads(n);
}

std::vector<std::size_t> parse_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || ptr != item.data() + item.size() || v == 0) {
      throw ConfigError("bad entry '" + item + "' in list '" + text + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError("empty list");
  return out;
}

int cmd_phantom(const std::string& cfg_path, const fs::path& out) {
  const auto cfg = load_config(cfg_path);
  const auto vol = data::make_volume(cfg);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  phantom::write_volume(out, vol);
  std::cout << "wrote " << out.string() << " (" << vol.dims[0] << "x" << vol.dims[1] << "x" << vol.dims[2] << ")\n";
  return kOk;
}

int cmd_project(const fs::path& volume, const std::string& cfg_path, const fs::path& out) {
  const auto cfg = load_config(cfg_path);
  const auto vol = phantom::read_volume(volume);
  const auto views = data::make_views(vol, cfg);
  fs::create_directories(out);
  phantom::write_projections(out / "train.xfp", views.train, geometry_json(cfg));
  phantom::write_projections(out / "test.xfp", views.test, geometry_json(cfg));
  config::save(out / "config.json", cfg);
  std::cout << "wrote " << views.train.views << " training and " << views.test.views << " test views to "
            << out.string() << '\n';
  return kOk;
}

struct TrainFlags {
  bool no_ls_msa = false, no_mlg = false;
  std::size_t segments = 0, segment_length = 0, patch_size = 0, iterations = 0;
  std::optional<std::uint64_t> seed;
  std::string resume;
};

int cmd_train(const std::string& cfg_path, const fs::path& data_dir, const fs::path& out, const TrainFlags& f) {
  nlohmann::json stored;
  const fs::path train_file = data_dir / "train.xfp";
  auto views = phantom::read_projections(train_file, &stored);
  std::unique_ptr<train::Trainer> trainer;
  if (!f.resume.empty()) {
    trainer = train::Trainer::resume(f.resume, std::move(views), out);
    check_geometry(stored, trainer->config(), train_file);
    std::cout << "resumed at iteration " << trainer->iteration() << '\n';
  } else {
    auto cfg = load_config(cfg_path);
    if (f.no_ls_msa) cfg.lineformer.mixer = model::Mixer::mlp;
    if (f.no_mlg) cfg.sampler.mode = config::SamplerMode::naive;
    if (f.segments && f.segment_length) throw ConfigError("--segments and --segment-length are exclusive");
    if (f.segments) {
      if (cfg.train.points % f.segments != 0) {
        throw ConfigError("--segments " + std::to_string(f.segments) + " does not divide the " +
                          std::to_string(cfg.train.points) + " points per ray");
      }
      cfg.lineformer.segment = cfg.train.points / f.segments;
    }
    if (f.segment_length) cfg.lineformer.segment = f.segment_length;
    if (f.patch_size) cfg.sampler.patch_size = f.patch_size;
    if (f.iterations) cfg.train.iterations = f.iterations;
    if (f.seed) cfg.train.seed = *f.seed;
    cfg.resolve();
    check_geometry(stored, cfg, train_file);
    trainer = std::make_unique<train::Trainer>(cfg, std::move(views), out);
  }
  const auto& c = trainer->config();
  std::cout << "training " << c.train.iterations << " iterations: mixer " << model::to_string(c.lineformer.mixer)
            << ", sampler " << config::to_string(c.sampler.mode) << ", " << trainer->field().parameter_count()
            << " parameters\n";
  while (trainer->iteration() < c.train.iterations) {
    const std::size_t next = std::min(c.train.iterations, (trainer->iteration() / 100 + 1) * 100);
    trainer->run(next);
    const auto& row = trainer->history().back();
    std::cout << "iteration " << row.iteration << "  lr " << row.lr << "  loss " << row.loss << '\n' << std::flush;
  }
  trainer->run();
  return kOk;
}

int cmd_eval_nvs(const fs::path& ckpt_path, const fs::path& data_dir, const fs::path& out, const std::string& split) {
  if (split != "test" && split != "train") throw ConfigError("--split must be test or train");
  config::ExperimentConfig cfg;
  auto field = train::load_field(train::read_checkpoint(ckpt_path), &cfg);
  nlohmann::json stored;
  const fs::path file = data_dir / (split + ".xfp");
  const auto reference = phantom::read_projections(file, &stored);
  check_geometry(stored, cfg, file);
  eval::RenderedViews rendered;
  const auto report = eval::eval_nvs(*field, cfg, reference, &rendered);
  eval::write_report(out, report);
  eval::write_views(out / "views", split, rendered, reference.i0);
  std::cout << split << " views: mean PSNR " << report.mean_psnr << " dB, mean SSIM " << report.mean_ssim << '\n';
  return kOk;
}

int cmd_eval_ct(const fs::path& ckpt_path, const fs::path& reference_path, const fs::path& out) {
  config::ExperimentConfig cfg;
  auto field = train::load_field(train::read_checkpoint(ckpt_path), &cfg);
  const auto reference = phantom::read_volume(reference_path);
  const auto volume = eval::extract_ct(*field, cfg, reference.dims);
  eval::MetricsReport report;
  report.fingerprint = eval::fingerprint(cfg);
  report.volume = eval::eval_ct(volume, reference, cfg.eval.psnr_cap);
  eval::write_report(out, report);
  eval::write_ct(out, volume);
  std::cout << "CT: PSNR " << report.volume->psnr_3d << " dB (3-D), " << report.volume->psnr_slice_mean
            << " dB (slice mean), SSIM " << report.volume->ssim_slice_mean << '\n';
  return kOk;
}

int cmd_gradcheck(std::size_t seeds, double tolerance) {
  std::size_t failures = 0;
  double worst = 0.0;
  const auto cases = run_gradient_suite(seeds, 0, 1e-4, [&](const SuiteCase& c) {
    const bool ok = c.result.max_rel_error < tolerance;
    failures += !ok;
    worst = std::max(worst, c.result.max_rel_error);
    if (!ok) {
      std::cout << "FAIL " << c.module << " / " << c.name << " seed " << c.seed << ": " << c.result.max_rel_error
                << " at " << c.result.worst << '\n';
    }
  });
  std::cout << cases.size() << " checks over " << seeds << " seeds, worst relative error " << worst << ", "
            << failures << " failures\n";
  return failures ? kNumerical : kOk;
}

int cmd_bench_attn(const std::string& n_list, const bench::AttnBenchOptions& opts, const std::string& out) {
  const auto rows = bench::bench_attention(parse_list(n_list), opts);
  if (out.empty()) {
    bench::write_attention_csv(std::cout, rows);
  } else {
    std::ofstream f(out);
    if (!f) throw DataError("cannot write " + out);
    bench::write_attention_csv(f, rows);
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse-view X-ray neural tomography"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(version()));

  std::string cfg_path, data_dir, out, volume, checkpoint, split = "test", n_list = "64,128,256,512,1024,2048,4096",
                                                                        reference;
  TrainFlags tf;
  std::size_t seeds = 20;
  double tolerance = 1e-3;
  bench::AttnBenchOptions bopts;

  auto* phantom_cmd = app.add_subcommand("phantom", "Generate the configured phantom volume");
  phantom_cmd->add_option("--config", cfg_path, "Experiment config (JSON); defaults when omitted");
  phantom_cmd->add_option("--out", out, "Output volume file")->required();

  auto* project_cmd = app.add_subcommand("project", "Simulate training and test projections of a volume");
  project_cmd->add_option("--volume", volume, "Input volume file")->required()->check(CLI::ExistingFile);
  project_cmd->add_option("--config", cfg_path, "Experiment config (JSON)");
  project_cmd->add_option("--out", out, "Output data directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Fit the radiodensity field to training projections");
  train_cmd->add_option("--config", cfg_path, "Experiment config (JSON)");
  train_cmd->add_option("--data", data_dir, "Data directory written by 'project'")->required();
  train_cmd->add_option("--out", out, "Run directory")->required();
  train_cmd->add_flag("--no-ls-msa", tf.no_ls_msa, "Replace line-segment attention with a per-point MLP");
  train_cmd->add_flag("--no-mlg", tf.no_mlg, "Uniform ray sampling instead of masked local-global sampling");
  train_cmd->add_option("--segments", tf.segments, "Number of attention segments per ray");
  train_cmd->add_option("--segment-length", tf.segment_length, "Points per attention segment");
  train_cmd->add_option("--patch-size", tf.patch_size, "Side of the sampled foreground windows");
  train_cmd->add_option("--iterations", tf.iterations, "Override the configured iteration count");
  train_cmd->add_option("--seed", tf.seed, "Override the training seed");
  train_cmd->add_option("--resume", tf.resume, "Continue from a checkpoint (its config wins)")
      ->check(CLI::ExistingFile);

  auto* nvs_cmd = app.add_subcommand("eval-nvs", "Render held-out views and score them");
  nvs_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  nvs_cmd->add_option("--data", data_dir, "Data directory written by 'project'")->required();
  nvs_cmd->add_option("--out", out, "Report directory")->required();
  nvs_cmd->add_option("--split", split, "test (default) or train");

  auto* ct_cmd = app.add_subcommand("eval-ct", "Extract the density volume and score it");
  ct_cmd->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ct_cmd->add_option("--reference", reference, "Reference volume file")->required()->check(CLI::ExistingFile);
  ct_cmd->add_option("--out", out, "Report directory")->required();

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable module");
  grad_cmd->add_option("--seeds", seeds, "Number of random seeds");
  grad_cmd->add_option("--tolerance", tolerance, "Largest accepted relative error");

  auto* bench_cmd = app.add_subcommand("bench-attn", "Time ls-msa against g-msa over a range of ray lengths");
  bench_cmd->add_option("--n-list", n_list, "Comma-separated points per ray");
  bench_cmd->add_option("--channels", bopts.channels, "Channels C");
  bench_cmd->add_option("--heads", bopts.heads, "Attention heads k");
  bench_cmd->add_option("--segment-length", bopts.segment, "Points per ls-msa segment");
  bench_cmd->add_option("--rays", bopts.rays, "Rays per timed call");
  bench_cmd->add_option("--out", out, "CSV file (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kConfig;
  }

  try {
    apply_threads();
    if (*phantom_cmd) return cmd_phantom(cfg_path, out);
    if (*project_cmd) return cmd_project(volume, cfg_path, out);
    if (*train_cmd) return cmd_train(cfg_path, data_dir, out, tf);
    if (*nvs_cmd) return cmd_eval_nvs(checkpoint, data_dir, out, split);
    if (*ct_cmd) return cmd_eval_ct(checkpoint, reference, out);
    if (*grad_cmd) return cmd_gradcheck(seeds, tolerance);
    if (*bench_cmd) return cmd_bench_attn(n_list, bopts, out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << '\n';
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return kInternal;
  }
  return kInternal;
}
