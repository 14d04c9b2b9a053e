#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "xfe/ad/binder.hpp"
#include "xfe/ad/ops.hpp"
#include "xfe/rng.hpp"

namespace xfe::model {

// Which token mixer sits inside each block.
//   ls_msa: channel attention within contiguous segments of s points
//   g_msa:  token attention over all points of a ray
//   mlp:    per-point C -> 2C -> GELU -> C, no mixing between points
enum class Mixer { ls_msa, g_msa, mlp };

Mixer parse_mixer(std::string_view name);  // ConfigError on unknown names
std::string_view to_string(Mixer mixer);

struct LineformerConfig {
  std::size_t channels = 32;
  std::size_t heads = 4;
  std::size_t segment = 2;        // s, points per attention segment
  std::size_t ffn_expansion = 2;
  std::size_t points = 192;       // N, points per ray
  Mixer mixer = Mixer::ls_msa;

  void validate() const;  // ConfigError
  std::size_t head_dim() const noexcept { return channels / heads; }
  std::size_t segments() const noexcept { return points / segment; }
};

void to_json(nlohmann::json& j, const LineformerConfig& c);
void from_json(const nlohmann::json& j, LineformerConfig& c);

template <class T>
struct LinearParams {
  ad::Parameter<T> weight;  // [in, out]
  ad::Parameter<T> bias;    // [out]

  LinearParams() = default;
  // Fan-in scaled uniform: U(-1/sqrt(in), 1/sqrt(in)) for weight and bias.
  LinearParams(const std::string& name, std::size_t in, std::size_t out, Rng& rng);
};

template <class T>
struct LSABParams {
  LinearParams<T> pre;
  ad::Parameter<T> ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  // Attention branch (ls_msa and g_msa).
  LinearParams<T> query, key, value, out;
  ad::Parameter<T> alpha;      // [heads], starts at 1
  ad::Parameter<T> embedding;  // E, [segment, channels], N(0, 0.02^2)
  // Point-wise replacement branch (mlp).
  LinearParams<T> mix1, mix2;
  LinearParams<T> ffn1, ffn2;

  LSABParams() = default;
  LSABParams(const std::string& name, const LineformerConfig& cfg, Rng& rng);

  // Parameters used by the given mixer, in a stable order.
  std::vector<ad::Parameter<T>*> parameters(Mixer mixer);
};

template <class T>
struct LineformerParams {
  LineformerConfig config;
  std::array<LSABParams<T>, 4> blocks;
  LinearParams<T> fuse;   // 2C -> C after the skip concatenation
  LinearParams<T> head1;  // C -> C
  LinearParams<T> head2;  // C -> 1

  LineformerParams() = default;
  LineformerParams(const LineformerConfig& cfg, Rng& rng);

  // Parameters that take part in the forward pass for the configured mixer, in a
  // stable order with unique names.
  std::vector<ad::Parameter<T>*> parameters();
  std::size_t parameter_count();
};

// Contiguous, order-preserving split of x[N, C] into N/s segments, and its inverse.
template <class T>
std::vector<ad::Tensor<T>> partition(const ad::Tensor<T>& x, std::size_t segment);
template <class T>
ad::Tensor<T> regroup(const std::vector<ad::Tensor<T>>& segments);

// Mixers on x[rows, C] where rows stacks whole rays of `points` each.
template <class T>
ad::Var ls_msa(ad::Binder<T>& b, LSABParams<T>& p, const LineformerConfig& cfg, ad::Var x);
template <class T>
ad::Var g_msa(ad::Binder<T>& b, LSABParams<T>& p, const LineformerConfig& cfg, ad::Var x);
template <class T>
ad::Var point_mlp(ad::Binder<T>& b, LSABParams<T>& p, ad::Var x);

// u = pre(x); u += mixer(LN1(u)); y = u + ffn(LN2(u)).
template <class T>
ad::Var lsab_forward(ad::Binder<T>& b, LSABParams<T>& p, const LineformerConfig& cfg, ad::Var x);

// Features [rays * points, C] -> non-negative densities [rays * points]. `points`
// overrides the configured sequence length (0 keeps it); it must stay divisible by
// the segment length.
template <class T>
ad::Var forward(ad::Binder<T>& b, LineformerParams<T>& p, ad::Var features, std::size_t points = 0);

// Closed-form multiply-accumulate counts of the two matrix products inside the
// attention of one ray: 2 N C^2 / k for ls_msa, 2 N^2 C for g_msa.
std::uint64_t attention_macs(std::size_t points, std::size_t channels, std::size_t heads, Mixer mixer);

}  // namespace xfe::model
