#include "xfe/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "xfe/ad/ops.hpp"
#include "xfe/binary_io.hpp"
#include "xfe/error.hpp"
#include "xfe/renderer.hpp"
#include "xfe/version.hpp"

namespace xfe::train {

namespace fs = std::filesystem;
using ad::Parameter;
using ad::Tensor;

double lr_at(std::size_t iteration, double lr0, std::size_t halve_every) {
  if (halve_every == 0) throw ConfigError("lr schedule: halve_every must be positive");
  return lr0 * std::ldexp(1.0, -static_cast<int>(iteration / halve_every));
}

template <class T>
AdamState<T>::AdamState(const std::vector<Parameter<T>*>& params) {
  for (const auto* p : params) {
    m.emplace_back(p->value.shape());
    v.emplace_back(p->value.shape());
  }
}

template <class T>
void adam_step(const std::vector<Parameter<T>*>& params, AdamState<T>& state, double lr, const AdamConfig& cfg) {
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam: state does not match the parameter list");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Parameter<T>& p = *params[i];
    if (p.grad.shape() != p.value.shape() || state.m[i].shape() != p.value.shape()) {
      throw ContractError("adam: shape mismatch for '" + p.name + "'");
    }
    const std::size_t bad = ad::first_non_finite(p.grad);
    if (bad != p.grad.size()) {
      throw NumericalError("adam: non-finite gradient in '" + p.name + "' at index " + std::to_string(bad));
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2);
  const T step = static_cast<T>(lr / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(cfg.epsilon);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Parameter<T>& p = *params[i];
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    T* w = p.value.data();
    const T* g = p.grad.data();
    for (std::size_t k = 0, n = p.value.size(); k < n; ++k) {
      m[k] = b1 * m[k] + (T(1) - b1) * g[k];
      v[k] = b2 * v[k] + (T(1) - b2) * g[k] * g[k];
      w[k] -= step * m[k] / (std::sqrt(v[k] * inv_c2) + eps);
    }
  }
}

template <class T>
double clip_grad_norm(const std::vector<Parameter<T>*>& params, double max_norm) {
  double total = 0.0;
  for (const auto* p : params)
    for (T g : p->grad.storage()) total += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(total);
  if (std::isfinite(norm) && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto* p : params)
      for (T& g : p->grad.storage()) g *= factor;
  }
  return norm;
}

template struct AdamState<float>;
template struct AdamState<double>;
template void adam_step(const std::vector<Parameter<float>*>&, AdamState<float>&, double, const AdamConfig&);
template void adam_step(const std::vector<Parameter<double>*>&, AdamState<double>&, double, const AdamConfig&);
template double clip_grad_norm(const std::vector<Parameter<float>*>&, double);
template double clip_grad_norm(const std::vector<Parameter<double>*>&, double);

namespace {

constexpr const char* kInitNote =
    "linear weights and biases uniform in +-1/sqrt(fan_in); per-head alpha = 1; positional embedding "
    "N(0, 0.02^2); layer-norm gain 1, bias 0; hash tables uniform in +-1e-4";

void write_blob(std::ostream& out, const std::string& name, const Tensor<float>& t) {
  io::write_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  io::write_u64(out, t.size());
  io::write_f32(out, t.values());
}

config::ExperimentConfig config_from_header(const nlohmann::json& header) {
  if (!header.contains("config")) throw FormatError("checkpoint header lacks 'config'", 0);
  return config::from_json(header.at("config"));
}

}  // namespace

fs::path checkpoint_path(const fs::path& out_dir, std::size_t iteration) {
  char name[32];
  std::snprintf(name, sizeof name, "iter_%06zu.xfc", iteration);
  return out_dir / "checkpoints" / name;
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::size_t offset = 0;
  Checkpoint ck;
  ck.header = io::read_header(in, kCheckpointMagic, offset);
  try {
    for (const auto& entry : ck.header.at("blobs")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<ad::Shape>();
      const std::uint32_t len = io::read_u32(in, offset, "blob name length");
      const std::string stored = io::read_string(in, len, offset, "blob name");
      if (stored != name) throw FormatError("checkpoint blob '" + stored + "' where '" + name + "' was expected", offset);
      const std::uint64_t count = io::read_u64(in, offset, "blob size");
      if (count != ad::numel(shape)) throw FormatError("checkpoint blob '" + name + "' has the wrong size", offset);
      Tensor<float> t(shape);
      io::read_f32(in, t.values(), offset, name);
      ck.blobs.emplace(name, std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), offset);
  }
  io::expect_end(in, offset);
  return ck;
}

std::unique_ptr<model::Field<float>> load_field(const Checkpoint& ckpt, config::ExperimentConfig* cfg_out) {
  const auto cfg = config_from_header(ckpt.header);
  Rng scratch(0);
  auto field = std::make_unique<model::Field<float>>(cfg.encoder, cfg.lineformer, cfg.density_scale(), scratch);
  for (auto* p : field->parameters()) {
    const auto it = ckpt.blobs.find(p->name);
    if (it == ckpt.blobs.end()) throw DataError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.shape() != p->value.shape()) throw DataError("checkpoint parameter '" + p->name + "' has the wrong shape");
    p->value = it->second;
  }
  if (cfg_out) *cfg_out = cfg;
  return field;
}

Trainer::Trainer(config::ExperimentConfig cfg, phantom::ProjectionSet views, fs::path out_dir)
    : cfg_(std::move(cfg)), views_(std::move(views)), out_(std::move(out_dir)), rng_(cfg_.train.seed) {
  cfg_.resolve();
  geom_ = cfg_.geometry.scan(views_.angles);
  if (views_.rows != geom_.rows || views_.cols != geom_.cols || views_.views != views_.angles.size()) {
    throw DataError("training projections do not match the configured detector");
  }
  geom_.validate();
  field_ = std::make_unique<model::Field<float>>(cfg_.encoder, cfg_.lineformer, cfg_.density_scale(), rng_);
  params_ = field_->parameters();
  adam_ = AdamState<float>(params_);
  if (cfg_.sampler.mode == config::SamplerMode::mlg) {
    std::vector<sampling::ForegroundMask> masks;
    for (std::size_t v = 0; v < views_.views; ++v) {
      masks.push_back(sampling::build_mask(views_.view(v), views_.rows, views_.cols, v, cfg_.sampler.tau, views_.i0));
    }
    mlg_.emplace(std::move(masks), cfg_.sampler.patch_size);
  }
  fs::create_directories(out_ / "checkpoints");
  config::save(out_ / "config.json", cfg_);
  std::ofstream(out_ / "version.txt") << version() << '\n';
  std::ofstream(out_ / "seed.txt") << cfg_.train.seed << '\n';
}

std::unique_ptr<Trainer> Trainer::resume(const fs::path& checkpoint, phantom::ProjectionSet views, fs::path out_dir) {
  const Checkpoint ck = read_checkpoint(checkpoint);
  auto t = std::make_unique<Trainer>(config_from_header(ck.header), std::move(views), std::move(out_dir));
  try {
    t->iteration_ = ck.header.at("iteration").get<std::size_t>();
    t->rng_ = load_rng(ck.header.at("rng").get<std::string>());
    t->adam_.step = ck.header.at("adam_step").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what(), 0);
  }
  for (std::size_t i = 0; i < t->params_.size(); ++i) {
    auto* p = t->params_[i];
    auto fetch = [&](const std::string& name) -> const Tensor<float>& {
      const auto it = ck.blobs.find(name);
      if (it == ck.blobs.end() || it->second.shape() != p->value.shape()) {
        throw DataError("checkpoint lacks a matching blob '" + name + "'");
      }
      return it->second;
    };
    p->value = fetch(p->name);
    t->adam_.m[i] = fetch("adam.m." + p->name);
    t->adam_.v[i] = fetch("adam.v." + p->name);
  }
  return t;
}

void Trainer::save_checkpoint(const fs::path& path) const {
  nlohmann::json blobs = nlohmann::json::array();
  for (const auto* p : params_) blobs.push_back({{"name", p->name}, {"shape", p->value.shape()}});
  for (const char* which : {"adam.m.", "adam.v."})
    for (const auto* p : params_) blobs.push_back({{"name", which + p->name}, {"shape", p->value.shape()}});
  const nlohmann::json header = {
      {"config", config::to_json(cfg_)}, {"iteration", iteration_},     {"rng", save_rng(rng_)},
      {"adam_step", adam_.step},         {"init", kInitNote},            {"version", std::string(version())},
      {"dtype", "f32le"},                {"blobs", blobs},
  };
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw DataError("cannot write checkpoint " + tmp.string());
    io::write_header(out, kCheckpointMagic, header);
    for (const auto* p : params_) write_blob(out, p->name, p->value);
    for (std::size_t i = 0; i < params_.size(); ++i) write_blob(out, "adam.m." + params_[i]->name, adam_.m[i]);
    for (std::size_t i = 0; i < params_.size(); ++i) write_blob(out, "adam.v." + params_[i]->name, adam_.v[i]);
    if (!out) throw DataError("failed writing checkpoint " + tmp.string());
  }
  fs::rename(tmp, path);
}

StepRays Trainer::sample_rays() {
  sampling::RayBatch batch =
      mlg_ ? mlg_->sample(cfg_.train.patch_rays, cfg_.train.pixel_rays(), rng_)
           : sampling::naive_sample(views_.views, views_.rows, views_.cols, cfg_.train.batch_rays, rng_);
  const std::size_t n = cfg_.train.points;
  const geometry::Vec3 half = geom_.half_extent();
  StepRays out;
  out.points.reserve(batch.pixels.size() * n);
  out.deltas.reserve(batch.pixels.size() * n);
  for (const auto& px : batch.pixels) {
    const auto ray = geometry::ray_for_pixel(geom_, px.view, px.row, px.col);
    if (!ray) {
      ++out.dropped;
      continue;
    }
    const auto pts = geometry::sample_points(*ray, n, geometry::SampleMode::stratified, rng_, half);
    out.points.insert(out.points.end(), pts.normalized.begin(), pts.normalized.end());
    for (double d : pts.delta) out.deltas.push_back(static_cast<float>(d));
    out.ground_truth.push_back(views_.at(px.view, px.row, px.col));
    ++out.rays;
  }
  return out;
}

double Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  const StepRays rays = sample_rays();
  if (rays.rays == 0) throw DataError("training batch has no ray that crosses the volume");
  for (auto* p : params_) p->zero_grad();

  ad::Tape<float> tape;
  ad::Binder<float> bind(tape);
  const ad::Var rho = field_->density(bind, rays.points);
  ad::Var absorption;
  const ad::Var intensity = rendering::render<float>(tape, rho, rays.deltas, cfg_.train.points,
                                                     static_cast<float>(views_.i0), &absorption);
  const bool log_domain = cfg_.train.loss_domain == rendering::LossDomain::log;
  const ad::Var loss = rendering::loss<float>(tape, log_domain ? absorption : intensity, rays.ground_truth,
                                              cfg_.train.reduction, cfg_.train.loss_domain,
                                              static_cast<float>(views_.i0));
  const double loss_value = tape.value(loss).item();
  tape.backward(loss);

  clip_grad_norm(params_, cfg_.train.clip_norm);
  const double lr = lr_at(iteration_, cfg_.train.lr0, cfg_.train.halve_every);
  adam_step(params_, adam_, lr, {cfg_.train.beta1, cfg_.train.beta2, cfg_.train.epsilon});
  ++iteration_;

  const MetricRow row{iteration_, lr, loss_value,
                      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count()};
  history_.push_back(row);
  append_metrics(row);
  return loss_value;
}

void Trainer::append_metrics(const MetricRow& row) {
  const fs::path path = out_ / "metrics.csv";
  const bool fresh = !fs::exists(path);
  std::ofstream out(path, std::ios::app);
  if (!out) throw DataError("cannot append to " + path.string());
  if (fresh) out << "iteration,lr,loss,wall-ms\n";
  char line[128];
  std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.3f\n", row.iteration, row.lr, row.loss, row.wall_ms);
  out << line;
}

void Trainer::run(std::optional<std::size_t> until) {
  const std::size_t target = until.value_or(cfg_.train.iterations);
  while (iteration_ < target) {
    try {
      step();
    } catch (const NumericalError& e) {
      const fs::path dump = out_ / "checkpoints" / "last_good.xfc";
      save_checkpoint(dump);
      throw NumericalError(std::string(e.what()) + " during iteration " + std::to_string(iteration_ + 1) +
                           "; last good state written to " + dump.string());
    }
    if (iteration_ % cfg_.train.checkpoint_every == 0 || iteration_ == cfg_.train.iterations) {
      save_checkpoint(checkpoint_path(out_, iteration_));
    }
  }
  if (iteration_ == cfg_.train.iterations) save_checkpoint(out_ / "checkpoints" / "final.xfc");
}

}  // namespace xfe::train
