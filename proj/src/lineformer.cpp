#include "xfe/lineformer.hpp"

#include <cmath>
#include <string>

#include "xfe/error.hpp"

namespace xfe::model {

using ad::Parameter;
using ad::Shape;
using ad::Tensor;
using ad::Var;

Mixer parse_mixer(std::string_view name) {
  if (name == "ls-msa") return Mixer::ls_msa;
  if (name == "g-msa") return Mixer::g_msa;
  if (name == "mlp") return Mixer::mlp;
  throw ConfigError("unknown mixer '" + std::string(name) + "' (expected ls-msa, g-msa or mlp)");
}

std::string_view to_string(Mixer mixer) {
  switch (mixer) {
    case Mixer::ls_msa: return "ls-msa";
    case Mixer::g_msa: return "g-msa";
    case Mixer::mlp: return "mlp";
  }
  return "?";
}

void LineformerConfig::validate() const {
  if (channels == 0 || heads == 0 || channels % heads != 0) {
    throw ConfigError("lineformer: channels (" + std::to_string(channels) + ") must be divisible by heads (" +
                      std::to_string(heads) + ")");
  }
  if (segment == 0 || points == 0 || points % segment != 0) {
    throw ConfigError("lineformer: points (" + std::to_string(points) + ") must be divisible by segment (" +
                      std::to_string(segment) + ")");
  }
  if (ffn_expansion == 0) throw ConfigError("lineformer: ffn_expansion must be positive");
}

void to_json(nlohmann::json& j, const LineformerConfig& c) {
  j = {{"channels", c.channels},   {"heads", c.heads},   {"segment", c.segment},
       {"ffn_expansion", c.ffn_expansion}, {"points", c.points}, {"mixer", std::string(to_string(c.mixer))}};
}

void from_json(const nlohmann::json& j, LineformerConfig& c) {
  c.channels = j.value("channels", c.channels);
  c.heads = j.value("heads", c.heads);
  c.segment = j.value("segment", c.segment);
  c.ffn_expansion = j.value("ffn_expansion", c.ffn_expansion);
  c.points = j.value("points", c.points);
  if (j.contains("mixer")) c.mixer = parse_mixer(j.at("mixer").get<std::string>());
}

namespace {

template <class T>
Parameter<T> uniform_param(const std::string& name, Shape shape, double bound, Rng& rng) {
  Tensor<T> v(std::move(shape));
  for (auto& x : v.storage()) x = static_cast<T>(uniform(rng, -bound, bound));
  return Parameter<T>(name, std::move(v));
}

template <class T>
Parameter<T> filled(const std::string& name, Shape shape, T value) {
  return Parameter<T>(name, Tensor<T>(std::move(shape), value));
}

template <class T>
void push(std::vector<Parameter<T>*>& out, LinearParams<T>& l) {
  out.push_back(&l.weight);
  out.push_back(&l.bias);
}

template <class T>
Var apply(ad::Binder<T>& b, LinearParams<T>& l, Var x) {
  return ad::linear(b.tape(), x, b(l.weight), b(l.bias));
}

}  // namespace

template <class T>
LinearParams<T>::LinearParams(const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight = uniform_param<T>(name + ".weight", {in, out}, bound, rng);
  bias = uniform_param<T>(name + ".bias", {out}, bound, rng);
}

template <class T>
LSABParams<T>::LSABParams(const std::string& name, const LineformerConfig& cfg, Rng& rng) {
  const std::size_t c = cfg.channels;
  pre = LinearParams<T>(name + ".pre", c, c, rng);
  ln1_gain = filled<T>(name + ".ln1.gain", {c}, T(1));
  ln1_bias = filled<T>(name + ".ln1.bias", {c}, T(0));
  ln2_gain = filled<T>(name + ".ln2.gain", {c}, T(1));
  ln2_bias = filled<T>(name + ".ln2.bias", {c}, T(0));
  if (cfg.mixer == Mixer::mlp) {
    mix1 = LinearParams<T>(name + ".mix1", c, 2 * c, rng);
    mix2 = LinearParams<T>(name + ".mix2", 2 * c, c, rng);
  } else {
    query = LinearParams<T>(name + ".query", c, c, rng);
    key = LinearParams<T>(name + ".key", c, c, rng);
    value = LinearParams<T>(name + ".value", c, c, rng);
    out = LinearParams<T>(name + ".out", c, c, rng);
    alpha = filled<T>(name + ".alpha", {cfg.heads}, T(1));
    Tensor<T> e({cfg.segment, c});
    for (auto& x : e.storage()) x = static_cast<T>(0.02 * normal(rng));
    embedding = Parameter<T>(name + ".embedding", std::move(e));
  }
  ffn1 = LinearParams<T>(name + ".ffn1", c, cfg.ffn_expansion * c, rng);
  ffn2 = LinearParams<T>(name + ".ffn2", cfg.ffn_expansion * c, c, rng);
}

template <class T>
LineformerParams<T>::LineformerParams(const LineformerConfig& cfg, Rng& rng) : config(cfg) {
  config.validate();
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i] = LSABParams<T>("lsab" + std::to_string(i + 1), cfg, rng);
  fuse = LinearParams<T>("fuse", 2 * cfg.channels, cfg.channels, rng);
  head1 = LinearParams<T>("head1", cfg.channels, cfg.channels, rng);
  head2 = LinearParams<T>("head2", cfg.channels, 1, rng);
}

template <class T>
std::vector<Parameter<T>*> LSABParams<T>::parameters(Mixer mixer) {
  std::vector<Parameter<T>*> out;
  push(out, pre);
  out.push_back(&ln1_gain);
  out.push_back(&ln1_bias);
  if (mixer == Mixer::mlp) {
    push(out, mix1);
    push(out, mix2);
  } else {
    push(out, query);
    push(out, key);
    push(out, value);
    push(out, this->out);
    out.push_back(&alpha);
    out.push_back(&embedding);
  }
  out.push_back(&ln2_gain);
  out.push_back(&ln2_bias);
  push(out, ffn1);
  push(out, ffn2);
  return out;
}

template <class T>
std::vector<Parameter<T>*> LineformerParams<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& blk : blocks) {
    const auto own = blk.parameters(config.mixer);
    out.insert(out.end(), own.begin(), own.end());
  }
  push(out, fuse);
  push(out, head1);
  push(out, head2);
  return out;
}

template <class T>
std::size_t LineformerParams<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <class T>
std::vector<Tensor<T>> partition(const Tensor<T>& x, std::size_t segment) {
  if (x.rank() != 2) throw ContractError("partition: expected a rank-2 tensor");
  const std::size_t n = x.dim(0), c = x.dim(1);
  if (segment == 0 || n % segment != 0) {
    throw ContractError("partition: " + std::to_string(n) + " points not divisible by segment length " +
                        std::to_string(segment));
  }
  std::vector<Tensor<T>> out;
  out.reserve(n / segment);
  for (std::size_t m = 0; m < n / segment; ++m) {
    const auto first = x.storage().begin() + static_cast<std::ptrdiff_t>(m * segment * c);
    out.emplace_back(Shape{segment, c}, std::vector<T>(first, first + static_cast<std::ptrdiff_t>(segment * c)));
  }
  return out;
}

template <class T>
Tensor<T> regroup(const std::vector<Tensor<T>>& segments) {
  if (segments.empty()) throw ContractError("regroup: no segments");
  const Shape s = segments.front().shape();
  std::vector<T> data;
  data.reserve(segments.size() * ad::numel(s));
  for (const auto& seg : segments) {
    if (seg.shape() != s) throw ContractError("regroup: segments differ in shape");
    data.insert(data.end(), seg.storage().begin(), seg.storage().end());
  }
  return Tensor<T>({segments.size() * s[0], s[1]}, std::move(data));
}

template <class T>
Var ls_msa(ad::Binder<T>& b, LSABParams<T>& p, const LineformerConfig& cfg, Var x) {
  auto& t = b.tape();
  const std::size_t s = cfg.segment, k = cfg.heads;
  // Column-normalised channel attention K^T Q / alpha per (segment, head) block.
  const Var h = ad::segment_attention(t, apply(b, p.query, x), apply(b, p.key, x), apply(b, p.value, x), b(p.alpha),
                                      s, k);
  return ad::add_tiled(t, apply(b, p.out, h), b(p.embedding));
}

template <class T>
Var g_msa(ad::Binder<T>& b, LSABParams<T>& p, const LineformerConfig& cfg, Var x) {
  auto& t = b.tape();
  const std::size_t n = cfg.points, k = cfg.heads;
  const Var q = ad::split_heads(t, apply(b, p.query, x), n, k);  // [rays * k, N, d_h]
  const Var kk = ad::split_heads(t, apply(b, p.key, x), n, k);
  const Var v = ad::split_heads(t, apply(b, p.value, x), n, k);
  Var attn = ad::batched_matmul(t, q, kk, false, /*transpose_b=*/true);  // [rays * k, N, N]
  attn = ad::divide_by_group(t, attn, b(p.alpha), static_cast<T>(std::sqrt(static_cast<double>(cfg.head_dim()))));
  attn = ad::softmax(t, attn, 2);
  const Var h = ad::merge_heads(t, ad::batched_matmul(t, attn, v), k);
  return ad::add_tiled(t, apply(b, p.out, h), b(p.embedding));
}

template <class T>
Var point_mlp(ad::Binder<T>& b, LSABParams<T>& p, Var x) {
  return apply(b, p.mix2, ad::gelu(b.tape(), apply(b, p.mix1, x)));
}

template <class T>
Var lsab_forward(ad::Binder<T>& b, LSABParams<T>& p, const LineformerConfig& cfg, Var x) {
  auto& t = b.tape();
  Var u = apply(b, p.pre, x);
  const Var n1 = ad::layer_norm(t, u, b(p.ln1_gain), b(p.ln1_bias));
  Var mixed;
  switch (cfg.mixer) {
    case Mixer::ls_msa: mixed = ls_msa(b, p, cfg, n1); break;
    case Mixer::g_msa: mixed = g_msa(b, p, cfg, n1); break;
    case Mixer::mlp: mixed = point_mlp(b, p, n1); break;
  }
  u = ad::add(t, u, mixed);
  const Var n2 = ad::layer_norm(t, u, b(p.ln2_gain), b(p.ln2_bias));
  return ad::add(t, u, apply(b, p.ffn2, ad::gelu(t, apply(b, p.ffn1, n2))));
}

template <class T>
Var forward(ad::Binder<T>& b, LineformerParams<T>& p, Var features, std::size_t points) {
  auto& t = b.tape();
  LineformerConfig cfg = p.config;
  if (points != 0) {
    cfg.points = points;
    cfg.validate();
  }
  const Shape s = t.shape(features);  // copied: the tape grows below
  if (s.size() != 2 || s[1] != cfg.channels || s[0] % cfg.points != 0) {
    throw ContractError("lineformer: features " + ad::shape_string(s) + " are not whole rays of " +
                        std::to_string(cfg.points) + " x " + std::to_string(cfg.channels));
  }
  Var h = lsab_forward(b, p.blocks[0], cfg, features);
  h = lsab_forward(b, p.blocks[1], cfg, h);
  h = apply(b, p.fuse, ad::concat_cols(t, h, features));
  h = lsab_forward(b, p.blocks[2], cfg, h);
  h = lsab_forward(b, p.blocks[3], cfg, h);
  h = apply(b, p.head2, ad::gelu(t, apply(b, p.head1, h)));
  return ad::reshape(t, ad::softplus(t, h), Shape{s[0]});
}

std::uint64_t attention_macs(std::size_t points, std::size_t channels, std::size_t heads, Mixer mixer) {
  const std::uint64_t n = points, c = channels;
  switch (mixer) {
    case Mixer::ls_msa: return 2 * n * c * c / heads;
    case Mixer::g_msa: return 2 * n * n * c;
    case Mixer::mlp: return 0;
  }
  return 0;
}

#define XFE_INSTANTIATE(T)                                                                    \
  template struct LinearParams<T>;                                                            \
  template struct LSABParams<T>;                                                              \
  template struct LineformerParams<T>;                                                        \
  template std::vector<Tensor<T>> partition(const Tensor<T>&, std::size_t);                   \
  template Tensor<T> regroup(const std::vector<Tensor<T>>&);                                  \
  template Var ls_msa(ad::Binder<T>&, LSABParams<T>&, const LineformerConfig&, Var);          \
  template Var g_msa(ad::Binder<T>&, LSABParams<T>&, const LineformerConfig&, Var);           \
  template Var point_mlp(ad::Binder<T>&, LSABParams<T>&, Var);                                \
  template Var lsab_forward(ad::Binder<T>&, LSABParams<T>&, const LineformerConfig&, Var);    \
  template Var forward(ad::Binder<T>&, LineformerParams<T>&, Var, std::size_t);

XFE_INSTANTIATE(float)
XFE_INSTANTIATE(double)

}  // namespace xfe::model
