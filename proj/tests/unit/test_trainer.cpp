#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "support/tiny.hpp"
#include "xfe/dataset.hpp"
#include "xfe/error.hpp"
#include "xfe/trainer.hpp"

using namespace xfe;
using namespace xfe::train;
using ad::Parameter;
using ad::Tensor;
namespace fs = std::filesystem;

namespace {

struct Scene {
  config::ExperimentConfig cfg;
  phantom::VoxelVolume volume;
  data::Views views;
};

const Scene& tiny_scene() {
  static const Scene scene = [] {
    Scene s;
    s.cfg = test_support::tiny_config();
    s.volume = data::make_volume(s.cfg);
    s.views = data::make_views(s.volume, s.cfg);
    return s;
  }();
  return scene;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// metrics.csv without the wall-clock column.
std::vector<std::string> metric_lines(const fs::path& p) {
  std::istringstream in(slurp(p));
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) out.push_back(line.substr(0, line.rfind(',')));
  return out;
}

}  // namespace

TEST(LrSchedule, HalvesOnFloorBoundaries) {
  EXPECT_DOUBLE_EQ(lr_at(0, 1e-4, 1500), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(1499, 1e-4, 1500), 1e-4);
  EXPECT_DOUBLE_EQ(lr_at(1500, 1e-4, 1500), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(2999, 1e-4, 1500), 5e-5);
  EXPECT_DOUBLE_EQ(lr_at(3000, 1e-4, 1500), 2.5e-5);
  EXPECT_THROW(lr_at(0, 1e-4, 0), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Parameter<double> p("w", Tensor<double>({3}, {0.5, -1.0, 2.0}));
  AdamState<double> s({&p});
  for (int i = 0; i < 5; ++i) adam_step<double>({&p}, s, 0.1, {});
  EXPECT_EQ(p.value.to_vector(), (std::vector<double>{0.5, -1.0, 2.0}));
  EXPECT_EQ(s.step, 5u);
}

TEST(Adam, ZeroLearningRateStillUpdatesMoments) {
  Parameter<double> p("w", Tensor<double>({2}, {1.0, 2.0}));
  p.grad = Tensor<double>({2}, {0.5, -2.0});
  AdamState<double> s({&p});
  adam_step<double>({&p}, s, 0.0, {});
  EXPECT_EQ(p.value.to_vector(), (std::vector<double>{1.0, 2.0}));
  EXPECT_NEAR(s.m[0][0], 0.05, 1e-15);
  EXPECT_NEAR(s.m[0][1], -0.2, 1e-15);
  EXPECT_NEAR(s.v[0][0], 0.001 * 0.25, 1e-15);
  EXPECT_NEAR(s.v[0][1], 0.001 * 4.0, 1e-15);
}

TEST(Adam, ScalarTwoStepHandTrace) {
  const double lr = 0.1, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const std::vector<double> grads{1.0, 1.0, -3.0};
  Parameter<double> p("w", Tensor<double>({1}, {1.0}));
  AdamState<double> s({&p});
  double w = 1.0, m = 0.0, v = 0.0;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    const double g = grads[t - 1];
    p.grad[0] = g;
    adam_step<double>({&p}, s, lr, {b1, b2, eps});
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, static_cast<double>(t)));
    const double vhat = v / (1 - std::pow(b2, static_cast<double>(t)));
    w -= lr * mhat / (std::sqrt(vhat) + eps);
    EXPECT_NEAR(p.value[0], w, 1e-14) << "step " << t;
  }
  // With a constant unit gradient each of the first two steps moves by lr / (1 + eps).
  EXPECT_NEAR(1.0 - 2 * lr / (1 + eps) - 0.0, 0.8, 1e-8);
}

TEST(Adam, NonFiniteGradientAbortsBeforeAnyUpdate) {
  Parameter<double> a("a", Tensor<double>({1}, {1.0})), b("b", Tensor<double>({1}, {2.0}));
  a.grad[0] = 1.0;
  b.grad[0] = std::numeric_limits<double>::quiet_NaN();
  AdamState<double> s({&a, &b});
  EXPECT_THROW(adam_step<double>({&a, &b}, s, 0.1, {}), NumericalError);
  EXPECT_EQ(a.value[0], 1.0);
  EXPECT_EQ(s.step, 0u);
}

TEST(ClipGradNorm, RescalesOnlyAboveTheLimit) {
  Parameter<double> a("a", Tensor<double>({2})), b("b", Tensor<double>({1}));
  a.grad = Tensor<double>({2}, {3.0, 0.0});
  b.grad = Tensor<double>({1}, {4.0});
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>({&a, &b}, 10.0), 5.0);
  EXPECT_EQ(b.grad[0], 4.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm<double>({&a, &b}, 1.0), 5.0);
  EXPECT_NEAR(a.grad[0], 0.6, 1e-15);
  EXPECT_NEAR(b.grad[0], 0.8, 1e-15);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(config::from_json(nlohmann::json::parse(R"({"train": {"lr": 1e-3}})")), ConfigError);
  EXPECT_THROW(config::from_json(nlohmann::json::parse(R"({"optimizer": {}})")), ConfigError);
  EXPECT_THROW(config::from_json(nlohmann::json::parse(R"({"train": {"lr0": "fast"}})")), ConfigError);
  EXPECT_NO_THROW(config::from_json(nlohmann::json::object()));
}

TEST(Config, JsonRoundTripIsLossless) {
  const auto cfg = test_support::tiny_config();
  const auto j = config::to_json(cfg);
  EXPECT_EQ(config::to_json(config::from_json(j)), j);
}

TEST(Config, ResolveRejectsInconsistentSections) {
  auto cfg = test_support::tiny_config();
  cfg.train.patch_rays = 30;  // not a multiple of 2^2
  EXPECT_THROW(cfg.resolve(), ConfigError);
  cfg = test_support::tiny_config();
  cfg.train.points = 15;  // odd length with segment 2
  EXPECT_THROW(cfg.resolve(), ConfigError);
  cfg = test_support::tiny_config();
  cfg.lineformer.channels = 16;
  EXPECT_THROW(cfg.resolve(), ConfigError);
}

TEST(Trainer, SmokeLossDecreasesOverEveryFiftyStepWindow) {
  const auto& s = tiny_scene();
  Trainer tr(s.cfg, s.views.train, test_support::scratch_dir("smoke"));
  tr.run();
  ASSERT_EQ(tr.history().size(), 200u);
  std::vector<double> window_means;
  for (std::size_t w = 0; w < 4; ++w) {
    double acc = 0;
    for (std::size_t i = 50 * w; i < 50 * (w + 1); ++i) acc += tr.history()[i].loss;
    window_means.push_back(acc / 50);
  }
  for (std::size_t w = 1; w < window_means.size(); ++w) {
    EXPECT_LT(window_means[w], window_means[w - 1]) << "window " << w;
  }
  const fs::path out = tr.out_dir();
  EXPECT_TRUE(fs::exists(out / "config.json"));
  EXPECT_TRUE(fs::exists(out / "version.txt"));
  EXPECT_TRUE(fs::exists(out / "metrics.csv"));
  for (std::size_t it : {50u, 100u, 150u, 200u}) EXPECT_TRUE(fs::exists(checkpoint_path(out, it))) << it;
  EXPECT_TRUE(fs::exists(out / "checkpoints" / "final.xfc"));
  EXPECT_EQ(metric_lines(out / "metrics.csv").front(), "iteration,lr,loss");
}

TEST(Trainer, MissedRaysAreDroppedFromTheBatch) {
  auto cfg = tiny_scene().cfg;
  cfg.sampler.mode = config::SamplerMode::naive;
  Trainer tr(cfg, tiny_scene().views.train, test_support::scratch_dir("dropped"));
  const StepRays r = tr.sample_rays();
  EXPECT_EQ(r.rays + r.dropped, cfg.train.batch_rays);
  EXPECT_EQ(r.points.size(), r.rays * cfg.train.points);
  EXPECT_EQ(r.deltas.size(), r.points.size());
  EXPECT_EQ(r.ground_truth.size(), r.rays);
  for (const auto& p : r.points) EXPECT_LE(p.cwiseAbs().maxCoeff(), 1.0 + 1e-9);
}

TEST(Trainer, CheckpointRoundTripRestoresTheField) {
  const auto& s = tiny_scene();
  auto cfg = s.cfg;
  cfg.train.iterations = 5;
  Trainer tr(cfg, s.views.train, test_support::scratch_dir("roundtrip"));
  tr.run();
  const Checkpoint ck = read_checkpoint(tr.out_dir() / "checkpoints" / "final.xfc");
  EXPECT_EQ(ck.header.at("iteration").get<std::size_t>(), 5u);
  EXPECT_EQ(ck.header.at("adam_step").get<std::size_t>(), 5u);
  EXPECT_TRUE(ck.header.contains("init"));
  EXPECT_TRUE(ck.header.contains("version"));
  config::ExperimentConfig restored_cfg;
  auto field = load_field(ck, &restored_cfg);
  EXPECT_EQ(config::to_json(restored_cfg), config::to_json(tr.config()));
  auto original = tr.field().parameters();
  auto loaded = field->parameters();
  ASSERT_EQ(original.size(), loaded.size());
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    EXPECT_EQ(loaded[i]->name, original[i]->name);
    EXPECT_EQ(loaded[i]->value.storage(), original[i]->value.storage()) << loaded[i]->name;
  }
}

TEST(Trainer, CorruptCheckpointIsRejected) {
  const fs::path dir = test_support::scratch_dir("corrupt");
  std::ofstream(dir / "bad.xfc", std::ios::binary) << "XFECKP01garbage";
  EXPECT_THROW(read_checkpoint(dir / "bad.xfc"), FormatError);
  EXPECT_THROW(read_checkpoint(dir / "missing.xfc"), DataError);
}

TEST(Trainer, ResumeReproducesTheUninterruptedRun) {
  const auto& s = tiny_scene();
  auto cfg = s.cfg;
  cfg.train.iterations = 40;
  cfg.train.checkpoint_every = 20;
  Trainer full(cfg, s.views.train, test_support::scratch_dir("resume_full"));
  full.run();
  auto resumed = Trainer::resume(checkpoint_path(full.out_dir(), 20), s.views.train,
                                 test_support::scratch_dir("resume_half"));
  EXPECT_EQ(resumed->iteration(), 20u);
  resumed->run();
  ASSERT_EQ(resumed->history().size(), 20u);
  for (std::size_t i = 0; i < 20; ++i) {
    EXPECT_EQ(resumed->history()[i].iteration, full.history()[20 + i].iteration);
    EXPECT_EQ(resumed->history()[i].loss, full.history()[20 + i].loss) << i;
    EXPECT_EQ(resumed->history()[i].lr, full.history()[20 + i].lr) << i;
  }
  EXPECT_TRUE(slurp(full.out_dir() / "checkpoints" / "final.xfc") ==
            slurp(resumed->out_dir() / "checkpoints" / "final.xfc"));
}

TEST(Trainer, IdenticalSeedsGiveIdenticalOutputs) {
  const auto& s = tiny_scene();
  auto cfg = s.cfg;
  cfg.train.iterations = 10;
  Trainer a(cfg, s.views.train, test_support::scratch_dir("det_a"));
  Trainer b(cfg, s.views.train, test_support::scratch_dir("det_b"));
  a.run();
  b.run();
  EXPECT_TRUE(slurp(a.out_dir() / "checkpoints" / "final.xfc") == slurp(b.out_dir() / "checkpoints" / "final.xfc"));
  EXPECT_EQ(metric_lines(a.out_dir() / "metrics.csv"), metric_lines(b.out_dir() / "metrics.csv"));

  cfg.train.seed = 1;
  Trainer c(cfg, s.views.train, test_support::scratch_dir("det_c"));
  c.run();
  EXPECT_TRUE(slurp(a.out_dir() / "checkpoints" / "final.xfc") != slurp(c.out_dir() / "checkpoints" / "final.xfc"));
}

TEST(Trainer, NanAbortDumpsLastGoodCheckpoint) {
  const auto& s = tiny_scene();
  auto cfg = s.cfg;
  cfg.train.iterations = 10;
  Trainer tr(cfg, s.views.train, test_support::scratch_dir("nan"));
  tr.run(3);
  tr.field().net.head2.bias.value[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(tr.run(), NumericalError);
  EXPECT_EQ(tr.iteration(), 3u);
  const Checkpoint ck = read_checkpoint(tr.out_dir() / "checkpoints" / "last_good.xfc");
  EXPECT_EQ(ck.header.at("iteration").get<std::size_t>(), 3u);
}

TEST(Trainer, AblationTogglesRunWithTheSameConfigSurface) {
  const auto& s = tiny_scene();
  for (model::Mixer mixer : {model::Mixer::ls_msa, model::Mixer::mlp}) {
    for (config::SamplerMode mode : {config::SamplerMode::mlg, config::SamplerMode::naive}) {
      auto cfg = s.cfg;
      cfg.train.iterations = 5;
      cfg.lineformer.mixer = mixer;
      cfg.sampler.mode = mode;
      Trainer tr(cfg, s.views.train,
                 test_support::scratch_dir(std::string("ablation_") + std::string(model::to_string(mixer)) + "_" +
                                           std::string(config::to_string(mode))));
      tr.run();
      EXPECT_EQ(tr.iteration(), 5u);
      for (const auto& row : tr.history()) EXPECT_TRUE(std::isfinite(row.loss));
      const auto saved = config::load(tr.out_dir() / "config.json");
      EXPECT_EQ(saved.lineformer.mixer, mixer);
      EXPECT_EQ(saved.sampler.mode, mode);
    }
  }
}

TEST(Trainer, MismatchedDetectorIsDataError) {
  auto cfg = tiny_scene().cfg;
  cfg.geometry.rows = 32;
  cfg.geometry.cols = 32;
  EXPECT_THROW(Trainer(cfg, tiny_scene().views.train, test_support::scratch_dir("mismatch")), DataError);
}
