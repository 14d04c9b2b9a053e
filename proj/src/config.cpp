#include "xfe/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <string_view>

#include "xfe/error.hpp"

namespace xfe::config {

using nlohmann::json;

namespace {

void check_keys(const json& j, std::string_view section, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) throw ConfigError("config: section '" + std::string(section) + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("config: unknown key '" + key + "' in section '" + std::string(section) + "'");
    }
  }
}

template <class V>
void read(const json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

}  // namespace

geometry::ScanGeometry GeometrySection::scan(std::vector<double> angles) const {
  geometry::ScanGeometry g;
  g.dso = dso;
  g.dsd = dsd;
  g.rows = rows;
  g.cols = cols;
  g.pitch = pitch;
  g.angles = std::move(angles);
  g.volume_extent = geometry::Vec3(volume_extent[0], volume_extent[1], volume_extent[2]);
  return g;
}

SamplerMode parse_sampler_mode(std::string_view name) {
  if (name == "mlg") return SamplerMode::mlg;
  if (name == "naive") return SamplerMode::naive;
  throw ConfigError("unknown sampler mode '" + std::string(name) + "' (expected mlg or naive)");
}

std::string_view to_string(SamplerMode mode) { return mode == SamplerMode::mlg ? "mlg" : "naive"; }

void ExperimentConfig::resolve() {
  if (geometry.train_views == 0) throw ConfigError("config: geometry.train_views must be positive");
  geometry.scan(geometry::uniform_angles(geometry.train_views)).validate();
  for (std::size_t d : phantom.dims) {
    if (d < 16) throw ConfigError("config: phantom.dims must be at least 16 on every axis");
  }
  if (phantom.projection_steps == 0) throw ConfigError("config: phantom.projection_steps must be positive");
  if (!(phantom.noise >= 0.0)) throw ConfigError("config: phantom.noise must be non-negative");
  encoder.validate();
  if (train.points == 0) throw ConfigError("config: train.points must be positive");
  lineformer.points = train.points;
  lineformer.validate();
  if (encoder.channels() != lineformer.channels) {
    throw ConfigError("config: encoder channels (" + std::to_string(encoder.channels()) +
                      ") must equal lineformer.channels (" + std::to_string(lineformer.channels) + ")");
  }
  if (!(sampler.tau >= 0.0)) throw ConfigError("config: sampler.tau must be non-negative");
  if (sampler.patch_size == 0) throw ConfigError("config: sampler.patch_size must be positive");
  if (train.patch_rays > train.batch_rays) throw ConfigError("config: train.patch_rays exceeds train.batch_rays");
  if (train.batch_rays == 0) throw ConfigError("config: train.batch_rays must be positive");
  if (sampler.mode == SamplerMode::mlg && train.patch_rays % (sampler.patch_size * sampler.patch_size) != 0) {
    throw ConfigError("config: train.patch_rays (" + std::to_string(train.patch_rays) +
                      ") must be divisible by sampler.patch_size^2 (" +
                      std::to_string(sampler.patch_size * sampler.patch_size) + ")");
  }
  if (train.halve_every == 0) throw ConfigError("config: train.halve_every must be positive");
  if (!(train.lr0 >= 0.0)) throw ConfigError("config: train.lr0 must be non-negative");
  if (!(train.beta1 >= 0.0 && train.beta1 < 1.0 && train.beta2 >= 0.0 && train.beta2 < 1.0)) {
    throw ConfigError("config: Adam betas must lie in [0, 1)");
  }
  if (!(train.epsilon > 0.0)) throw ConfigError("config: train.epsilon must be positive");
  if (!(train.clip_norm > 0.0)) throw ConfigError("config: train.clip_norm must be positive");
  if (train.checkpoint_every == 0) throw ConfigError("config: train.checkpoint_every must be positive");
  if (eval.points != 0 && eval.points % lineformer.segment != 0) {
    throw ConfigError("config: eval.points must be divisible by lineformer.segment");
  }
  if (eval.chunk_rays == 0) throw ConfigError("config: eval.chunk_rays must be positive");
  for (std::size_t d : eval.ct_dims) {
    if (d == 0) throw ConfigError("config: eval.ct_dims must be positive");
  }
  if (!(eval.psnr_cap > 0.0)) throw ConfigError("config: eval.psnr_cap must be positive");
}

double ExperimentConfig::density_scale() const {
  return 1.0 / *std::max_element(geometry.volume_extent.begin(), geometry.volume_extent.end());
}

ExperimentConfig from_json(const json& j) {
  ExperimentConfig c;
  try {
    check_keys(j, "root", {"geometry", "phantom", "encoder", "lineformer", "sampler", "train", "eval"});
    if (j.contains("geometry")) {
      const json& g = j.at("geometry");
      check_keys(g, "geometry",
                 {"dso", "dsd", "rows", "cols", "pitch", "volume_extent", "train_views", "test_views"});
      read(g, "dso", c.geometry.dso);
      read(g, "dsd", c.geometry.dsd);
      read(g, "rows", c.geometry.rows);
      read(g, "cols", c.geometry.cols);
      read(g, "pitch", c.geometry.pitch);
      read(g, "volume_extent", c.geometry.volume_extent);
      read(g, "train_views", c.geometry.train_views);
      read(g, "test_views", c.geometry.test_views);
    }
    if (j.contains("phantom")) {
      const json& p = j.at("phantom");
      check_keys(p, "phantom", {"kind", "dims", "projection_steps", "noise", "seed"});
      if (p.contains("kind")) c.phantom.kind = phantom::parse_phantom_kind(p.at("kind").get<std::string>());
      read(p, "dims", c.phantom.dims);
      read(p, "projection_steps", c.phantom.projection_steps);
      read(p, "noise", c.phantom.noise);
      read(p, "seed", c.phantom.seed);
    }
    if (j.contains("encoder")) {
      const json& e = j.at("encoder");
      check_keys(e, "encoder", {"levels", "log2_table", "features", "base_resolution", "growth"});
      encoding::from_json(e, c.encoder);
    }
    if (j.contains("lineformer")) {
      const json& l = j.at("lineformer");
      check_keys(l, "lineformer", {"channels", "heads", "segment", "ffn_expansion", "mixer", "points"});
      model::from_json(l, c.lineformer);
      if (l.contains("points") && !(j.contains("train") && j.at("train").contains("points"))) {
        c.train.points = c.lineformer.points;
      }
    }
    if (j.contains("sampler")) {
      const json& s = j.at("sampler");
      check_keys(s, "sampler", {"mode", "tau", "patch_size"});
      if (s.contains("mode")) c.sampler.mode = parse_sampler_mode(s.at("mode").get<std::string>());
      read(s, "tau", c.sampler.tau);
      read(s, "patch_size", c.sampler.patch_size);
    }
    if (j.contains("train")) {
      const json& t = j.at("train");
      check_keys(t, "train",
                 {"lr0", "halve_every", "iterations", "batch_rays", "patch_rays", "points", "beta1", "beta2",
                  "epsilon", "clip_norm", "checkpoint_every", "seed", "reduction", "loss_domain"});
      read(t, "lr0", c.train.lr0);
      read(t, "halve_every", c.train.halve_every);
      read(t, "iterations", c.train.iterations);
      read(t, "batch_rays", c.train.batch_rays);
      read(t, "patch_rays", c.train.patch_rays);
      read(t, "points", c.train.points);
      read(t, "beta1", c.train.beta1);
      read(t, "beta2", c.train.beta2);
      read(t, "epsilon", c.train.epsilon);
      read(t, "clip_norm", c.train.clip_norm);
      read(t, "checkpoint_every", c.train.checkpoint_every);
      read(t, "seed", c.train.seed);
      if (t.contains("reduction")) c.train.reduction = rendering::parse_reduction(t.at("reduction").get<std::string>());
      if (t.contains("loss_domain")) {
        c.train.loss_domain = rendering::parse_loss_domain(t.at("loss_domain").get<std::string>());
      }
      if (j.contains("lineformer") && j.at("lineformer").contains("points") &&
          c.lineformer.points != c.train.points) {
        throw ConfigError("config: lineformer.points and train.points disagree");
      }
    }
    if (j.contains("eval")) {
      const json& e = j.at("eval");
      check_keys(e, "eval", {"points", "chunk_rays", "ct_dims", "psnr_cap"});
      read(e, "points", c.eval.points);
      read(e, "chunk_rays", c.eval.chunk_rays);
      read(e, "ct_dims", c.eval.ct_dims);
      read(e, "psnr_cap", c.eval.psnr_cap);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.resolve();
  return c;
}

json to_json(const ExperimentConfig& c) {
  json enc, lf;
  encoding::to_json(enc, c.encoder);
  model::to_json(lf, c.lineformer);
  return {
      {"geometry",
       {{"dso", c.geometry.dso},
        {"dsd", c.geometry.dsd},
        {"rows", c.geometry.rows},
        {"cols", c.geometry.cols},
        {"pitch", c.geometry.pitch},
        {"volume_extent", c.geometry.volume_extent},
        {"train_views", c.geometry.train_views},
        {"test_views", c.geometry.test_views}}},
      {"phantom",
       {{"kind", std::string(phantom::to_string(c.phantom.kind))},
        {"dims", c.phantom.dims},
        {"projection_steps", c.phantom.projection_steps},
        {"noise", c.phantom.noise},
        {"seed", c.phantom.seed}}},
      {"encoder", enc},
      {"lineformer", lf},
      {"sampler",
       {{"mode", std::string(to_string(c.sampler.mode))}, {"tau", c.sampler.tau}, {"patch_size", c.sampler.patch_size}}},
      {"train",
       {{"lr0", c.train.lr0},
        {"halve_every", c.train.halve_every},
        {"iterations", c.train.iterations},
        {"batch_rays", c.train.batch_rays},
        {"patch_rays", c.train.patch_rays},
        {"points", c.train.points},
        {"beta1", c.train.beta1},
        {"beta2", c.train.beta2},
        {"epsilon", c.train.epsilon},
        {"clip_norm", c.train.clip_norm},
        {"checkpoint_every", c.train.checkpoint_every},
        {"seed", c.train.seed},
        {"reduction", std::string(rendering::to_string(c.train.reduction))},
        {"loss_domain", std::string(rendering::to_string(c.train.loss_domain))}}},
      {"eval",
       {{"points", c.eval.points},
        {"chunk_rays", c.eval.chunk_rays},
        {"ct_dims", c.eval.ct_dims},
        {"psnr_cap", c.eval.psnr_cap}}},
  };
}

ExperimentConfig load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void save(const std::filesystem::path& path, const ExperimentConfig& c) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << to_json(c).dump(2) << '\n';
}

}  // namespace xfe::config
