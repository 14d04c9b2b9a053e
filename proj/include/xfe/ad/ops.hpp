#pragma once

#include <cstdint>
#include <vector>

#include "xfe/ad/tape.hpp"

// Differentiable primitives. Every function records one node on the tape and
// throws ContractError on shape mismatch.
namespace xfe::ad {

// Elementwise, identical shapes.
template <class T> Var add(Tape<T>& t, Var a, Var b);
template <class T> Var sub(Tape<T>& t, Var a, Var b);
template <class T> Var mul(Tape<T>& t, Var a, Var b);
template <class T> Var neg(Tape<T>& t, Var a);
template <class T> Var scale(Tape<T>& t, Var a, T factor);
template <class T> Var exp(Tape<T>& t, Var a);
template <class T> Var square(Tape<T>& t, Var a);
template <class T> Var softplus(Tape<T>& t, Var a);
// Exact (erf) GELU.
template <class T> Var gelu(Tape<T>& t, Var a);

// [m, n] x [n, p] -> [m, p].
template <class T> Var matmul(Tape<T>& t, Var a, Var b);
// x[R, in] * w[in, out] + bias[out].
template <class T> Var linear(Tape<T>& t, Var x, Var w, Var bias);

// Batched product over the leading axis: a[G, m, n] x b[G, n, p] -> [G, m, p].
// With transpose_a, a is [G, n, m] and its trailing two axes are transposed first.
template <class T> Var batched_matmul(Tape<T>& t, Var a, Var b, bool transpose_a = false, bool transpose_b = false);

// Numerically stable softmax along `axis`.
template <class T> Var softmax(Tape<T>& t, Var x, std::size_t axis);

// Per-row normalization over the last axis with affine gain/bias; eps = 1e-5.
template <class T> Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias);
inline constexpr double kLayerNormEps = 1e-5;

// Concatenation of rank-2 tensors along the column axis.
template <class T> Var concat_cols(Tape<T>& t, Var a, Var b);
// Sub-range [begin, end) along `axis`.
template <class T> Var slice(Tape<T>& t, Var x, std::size_t axis, std::size_t begin, std::size_t end);
template <class T> Var reshape(Tape<T>& t, Var x, Shape shape);

// Full reductions to a scalar.
template <class T> Var sum(Tape<T>& t, Var x);
template <class T> Var mean(Tape<T>& t, Var x);
// Reduction of a rank-2 tensor over its columns: [R, C] -> [R].
template <class T> Var sum_cols(Tape<T>& t, Var x);

// x[R, C] + table[s, C] repeated every s rows (R divisible by s).
template <class T> Var add_tiled(Tape<T>& t, Var x, Var table);

// Rearranges x[R, C] into [R/s * heads, s, C/heads]; batch index = segment * heads + head.
template <class T> Var split_heads(Tape<T>& t, Var x, std::size_t segment, std::size_t heads);
// Inverse of split_heads.
template <class T> Var merge_heads(Tape<T>& t, Var x, std::size_t heads);

// x[G, ...] / (divisor[g % k] * extra) where k = numel(divisor).
template <class T> Var divide_by_group(Tape<T>& t, Var x, Var divisor, T extra = T{1});

// Channel attention inside line segments. q, k, v are [R, C]; rows form segments of
// `segment` consecutive rows and columns form `heads` blocks of C / heads. For every
// (segment, head) block with slices Q, K, V of shape [segment, d]:
//   A = softmax over rows of (K^T Q / alpha[head]),  out = V A.
// Each column of A sums to one. Equivalent to split_heads + batched_matmul +
// divide_by_group + softmax + merge_heads, in one pass without the intermediates.
template <class T>
Var segment_attention(Tape<T>& t, Var q, Var k, Var v, Var alpha, std::size_t segment, std::size_t heads);

// Multiply-accumulate counter incremented by batched_matmul and segment_attention (forward only).
std::uint64_t& batched_mac_counter();

}  // namespace xfe::ad
