#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "json.hpp"
#include "xfe/config.hpp"
#include "xfe/field.hpp"
#include "xfe/mlg_sampler.hpp"
#include "xfe/phantom.hpp"

namespace xfe::train {

// lr0 * 0.5^floor(iteration / halve_every).
double lr_at(std::size_t iteration, double lr0, std::size_t halve_every);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <class T>
struct AdamState {
  std::uint64_t step = 0;
  std::vector<ad::Tensor<T>> m, v;  // one pair per parameter, same shapes

  AdamState() = default;
  explicit AdamState(const std::vector<ad::Parameter<T>*>& params);
};

// Bias-corrected Adam on Parameter::grad:
//   m = b1 m + (1 - b1) g,  v = b2 v + (1 - b2) g^2,
//   p -= lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps).
// A non-finite gradient throws NumericalError before anything is modified.
template <class T>
void adam_step(const std::vector<ad::Parameter<T>*>& params, AdamState<T>& state, double lr, const AdamConfig& cfg);

// Global L2 norm of all gradients; rescales them to max_norm when it is exceeded.
// Returns the norm before clipping.
template <class T>
double clip_grad_norm(const std::vector<ad::Parameter<T>*>& params, double max_norm);

inline constexpr std::string_view kCheckpointMagic = "XFECKP01";

// Decoded checkpoint: the JSON header plus every named blob.
struct Checkpoint {
  nlohmann::json header;
  std::map<std::string, ad::Tensor<float>> blobs;
};

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Restores a field (architecture from the header's config) from a checkpoint.
std::unique_ptr<model::Field<float>> load_field(const Checkpoint& ckpt, config::ExperimentConfig* cfg_out = nullptr);

struct MetricRow {
  std::size_t iteration = 0;  // 1-based count of completed steps
  double lr = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

// Rays of one training step, ready for the field.
struct StepRays {
  std::vector<geometry::Vec3> points;  // normalized, ray-major
  std::vector<float> deltas;
  std::vector<float> ground_truth;
  std::size_t rays = 0;
  std::size_t dropped = 0;  // sampled pixels whose ray misses the volume box
};

// Owns the field, optimizer state, sampler and RNG of one experiment. Writes
// metrics.csv and checkpoints/ into the output directory.
class Trainer {
 public:
  Trainer(config::ExperimentConfig cfg, phantom::ProjectionSet views, std::filesystem::path out_dir);

  // Continues from a checkpoint written by an earlier Trainer on the same views.
  static std::unique_ptr<Trainer> resume(const std::filesystem::path& checkpoint, phantom::ProjectionSet views,
                                         std::filesystem::path out_dir);

  // Runs until `until` iterations have completed (default: the configured total).
  // NaN/Inf aborts with NumericalError after writing checkpoints/last_good.xfc.
  void run(std::optional<std::size_t> until = std::nullopt);

  // One optimizer step; returns the batch loss.
  double step();

  void save_checkpoint(const std::filesystem::path& path) const;

  std::size_t iteration() const noexcept { return iteration_; }
  const std::vector<MetricRow>& history() const noexcept { return history_; }
  model::Field<float>& field() noexcept { return *field_; }
  const config::ExperimentConfig& config() const noexcept { return cfg_; }
  const std::filesystem::path& out_dir() const noexcept { return out_; }

  StepRays sample_rays();

 private:
  void append_metrics(const MetricRow& row);

  config::ExperimentConfig cfg_;
  phantom::ProjectionSet views_;
  geometry::ScanGeometry geom_;
  std::filesystem::path out_;
  Rng rng_;
  std::unique_ptr<model::Field<float>> field_;
  std::vector<ad::Parameter<float>*> params_;
  AdamState<float> adam_;
  std::optional<sampling::MlgSampler> mlg_;
  std::size_t iteration_ = 0;
  std::vector<MetricRow> history_;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& out_dir, std::size_t iteration);

}  // namespace xfe::train
