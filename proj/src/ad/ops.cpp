#include "xfe/ad/ops.hpp"

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <type_traits>

namespace xfe::ad {

namespace {

template <class T>
using MatR = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapR = Eigen::Map<MatR<T>>;
template <class T>
using CMapR = Eigen::Map<const MatR<T>>;
template <class T>
using CVec = Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>;
template <class T>
using Vec = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>;

// The message expression is only evaluated when the check fails.
#define XFE_REQUIRE(cond, msg)                \
  do {                                        \
    if (!(cond)) throw ContractError(msg);    \
  } while (false)

template <class T>
void require_same(const Tape<T>& t, Var a, Var b, const char* op) {
  XFE_REQUIRE(t.shape(a) == t.shape(b), std::string(op) + ": shape mismatch " + shape_string(t.shape(a)) + " vs " +
                                        shape_string(t.shape(b)));
}

template <class T>
void require_rank(const Tape<T>& t, Var a, std::size_t rank, const char* op) {
  XFE_REQUIRE(t.shape(a).size() == rank, std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                                         shape_string(t.shape(a)));
}

// Accumulates f(i) into the gradient of v, if v needs one.
template <class T, class F>
void accumulate(Tape<T>& t, Var v, F&& f) {
  if (!t.requires_grad(v)) return;
  Tensor<T>& g = t.grad(v);
  const std::size_t n = g.size();
  for (std::size_t i = 0; i < n; ++i) g[i] += f(i);
}

}  // namespace

std::uint64_t& batched_mac_counter() {
  thread_local std::uint64_t counter = 0;
  return counter;
}

template <class T>
Var add(Tape<T>& t, Var a, Var b) {
  require_same(t, a, b, "add");
  const auto& x = t.value(a);
  const auto& y = t.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return t.record("add", std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    accumulate(tp, a, [&](std::size_t i) { return g[i]; });
    accumulate(tp, b, [&](std::size_t i) { return g[i]; });
  });
}

template <class T>
Var sub(Tape<T>& t, Var a, Var b) {
  require_same(t, a, b, "sub");
  const auto& x = t.value(a);
  const auto& y = t.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return t.record("sub", std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    accumulate(tp, a, [&](std::size_t i) { return g[i]; });
    accumulate(tp, b, [&](std::size_t i) { return -g[i]; });
  });
}

template <class T>
Var mul(Tape<T>& t, Var a, Var b) {
  require_same(t, a, b, "mul");
  const auto& x = t.value(a);
  const auto& y = t.value(b);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return t.record("mul", std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& g) {
    const auto& x = tp.value(a);
    const auto& y = tp.value(b);
    accumulate(tp, a, [&](std::size_t i) { return g[i] * y[i]; });
    accumulate(tp, b, [&](std::size_t i) { return g[i] * x[i]; });
  });
}

template <class T>
Var neg(Tape<T>& t, Var a) {
  return scale(t, a, T(-1));
}

template <class T>
Var scale(Tape<T>& t, Var a, T factor) {
  const auto& x = t.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * factor;
  return t.record("scale", std::move(out), {a}, [a, factor](Tape<T>& tp, const Tensor<T>& g) {
    accumulate(tp, a, [&](std::size_t i) { return g[i] * factor; });
  });
}

template <class T>
Var exp(Tape<T>& t, Var a) {
  const auto& x = t.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x[i]);
  Tensor<T> saved = out;
  return t.record("exp", std::move(out), {a}, [a, y = std::move(saved)](Tape<T>& tp, const Tensor<T>& g) {
    accumulate(tp, a, [&](std::size_t i) { return g[i] * y[i]; });
  });
}

template <class T>
Var square(Tape<T>& t, Var a) {
  const auto& x = t.value(a);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * x[i];
  return t.record("square", std::move(out), {a}, [a](Tape<T>& tp, const Tensor<T>& g) {
    const auto& x = tp.value(a);
    accumulate(tp, a, [&](std::size_t i) { return T(2) * x[i] * g[i]; });
  });
}

template <class T>
Var softplus(Tape<T>& t, Var a) {
  const Tensor<T>& x = t.value(a);
  const auto n = static_cast<Eigen::Index>(x.size());
  Tensor<T> y(x.shape());
  // log(1 + e^x) = max(x, 0) + log1p(e^-|x|), stable for any x.
  const auto X = CVec<T>(x.data(), n).array();
  Vec<T>(y.data(), n).array() = X.max(T(0)) + (-X.abs()).exp().log1p();
  return t.record("softplus", std::move(y), {a}, [a, n](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    const auto X = CVec<T>(tp.value(a).data(), n).array();
    Vec<T>(tp.grad(a).data(), n).array() += CVec<T>(g.data(), n).array() / (T(1) + (-X).exp());
  });
}

template <class T>
Var gelu(Tape<T>& t, Var a) {
  const Tensor<T>& x = t.value(a);
  const auto n = static_cast<Eigen::Index>(x.size());
  const auto X = CVec<T>(x.data(), n).array();
  // Standard normal CDF, kept for the backward pass.
  Tensor<T> cdf(x.shape());
  Vec<T>(cdf.data(), n).array() = T(0.5) * (T(1) + (X * T(std::numbers::sqrt2 / 2)).erf());
  Tensor<T> y(x.shape());
  Vec<T>(y.data(), n).array() = X * CVec<T>(cdf.data(), n).array();
  return t.record("gelu", std::move(y), {a}, [a, n, cdf = std::move(cdf)](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(a)) return;
    const auto X = CVec<T>(tp.value(a).data(), n).array();
    const T norm = T(1 / std::sqrt(2 * std::numbers::pi));
    Vec<T>(tp.grad(a).data(), n).array() +=
        CVec<T>(g.data(), n).array() *
        (CVec<T>(cdf.data(), n).array() + X * norm * (T(-0.5) * X.square()).exp());
  });
}

template <class T>
Var matmul(Tape<T>& t, Var a, Var b) {
  require_rank(t, a, 2, "matmul");
  require_rank(t, b, 2, "matmul");
  const auto& sa = t.shape(a);
  const auto& sb = t.shape(b);
  XFE_REQUIRE(sa[1] == sb[0], "matmul: inner dimensions differ " + shape_string(sa) + " x " + shape_string(sb));
  const std::size_t m = sa[0], n = sa[1], p = sb[1];
  Tensor<T> out({m, p});
  MapR<T>(out.data(), m, p).noalias() = CMapR<T>(t.value(a).data(), m, n) * CMapR<T>(t.value(b).data(), n, p);
  return t.record("matmul", std::move(out), {a, b}, [a, b, m, n, p](Tape<T>& tp, const Tensor<T>& g) {
    CMapR<T> G(g.data(), m, p);
    if (tp.requires_grad(a)) {
      MapR<T>(tp.grad(a).data(), m, n).noalias() += G * CMapR<T>(tp.value(b).data(), n, p).transpose();
    }
    if (tp.requires_grad(b)) {
      MapR<T>(tp.grad(b).data(), n, p).noalias() += CMapR<T>(tp.value(a).data(), m, n).transpose() * G;
    }
  });
}

template <class T>
Var linear(Tape<T>& t, Var x, Var w, Var bias) {
  require_rank(t, x, 2, "linear");
  require_rank(t, w, 2, "linear");
  const auto& sx = t.shape(x);
  const auto& sw = t.shape(w);
  XFE_REQUIRE(sx[1] == sw[0], "linear: input width " + shape_string(sx) + " vs weight " + shape_string(sw));
  XFE_REQUIRE(t.shape(bias) == Shape{sw[1]}, "linear: bias shape " + shape_string(t.shape(bias)));
  const std::size_t rows = sx[0], in = sx[1], out_w = sw[1];
  Tensor<T> out({rows, out_w});
  MapR<T> Y(out.data(), rows, out_w);
  Y.noalias() = CMapR<T>(t.value(x).data(), rows, in) * CMapR<T>(t.value(w).data(), in, out_w);
  Y.rowwise() += CVec<T>(t.value(bias).data(), out_w).transpose();
  return t.record("linear", std::move(out), {x, w, bias},
                  [x, w, bias, rows, in, out_w](Tape<T>& tp, const Tensor<T>& g) {
                    CMapR<T> G(g.data(), rows, out_w);
                    if (tp.requires_grad(x)) {
                      MapR<T>(tp.grad(x).data(), rows, in).noalias() +=
                          G * CMapR<T>(tp.value(w).data(), in, out_w).transpose();
                    }
                    if (tp.requires_grad(w)) {
                      MapR<T>(tp.grad(w).data(), in, out_w).noalias() +=
                          CMapR<T>(tp.value(x).data(), rows, in).transpose() * G;
                    }
                    if (tp.requires_grad(bias)) {
                      Vec<T>(tp.grad(bias).data(), out_w) += G.colwise().sum().transpose();
                    }
                  });
}

template <class T>
Var batched_matmul(Tape<T>& t, Var a, Var b, bool transpose_a, bool transpose_b) {
  require_rank(t, a, 3, "batched_matmul");
  require_rank(t, b, 3, "batched_matmul");
  const auto& sa = t.shape(a);
  const auto& sb = t.shape(b);
  XFE_REQUIRE(sa[0] == sb[0], "batched_matmul: batch sizes differ");
  const std::size_t batch = sa[0];
  const std::size_t m = transpose_a ? sa[2] : sa[1];
  const std::size_t n = transpose_a ? sa[1] : sa[2];
  const std::size_t nb = transpose_b ? sb[2] : sb[1];
  const std::size_t p = transpose_b ? sb[1] : sb[2];
  XFE_REQUIRE(n == nb, "batched_matmul: inner dimensions differ " + shape_string(sa) + " x " + shape_string(sb));

  Tensor<T> out({batch, m, p});
  // op(x) as an Eigen expression over one batch slice: the stored [r, c] block or its transpose.
  auto with_op = [](const T* ptr, bool transposed, std::size_t rows, std::size_t cols, auto&& f) {
    if (transposed) {
      f(CMapR<T>(ptr, cols, rows).transpose());
    } else {
      f(CMapR<T>(ptr, rows, cols));
    }
  };
  const T* A = t.value(a).data();
  const T* B = t.value(b).data();
  for (std::size_t g = 0; g < batch; ++g) {
    with_op(A + g * m * n, transpose_a, m, n, [&](const auto& opa) {
      with_op(B + g * n * p, transpose_b, n, p,
              [&](const auto& opb) { MapR<T>(out.data() + g * m * p, m, p).noalias() = opa * opb; });
    });
  }
  batched_mac_counter() += static_cast<std::uint64_t>(batch) * m * n * p;

  return t.record(
      "batched_matmul", std::move(out), {a, b},
      [=](Tape<T>& tp, const Tensor<T>& grad) {
        const T* A = tp.value(a).data();
        const T* B = tp.value(b).data();
        T* dA = tp.requires_grad(a) ? tp.grad(a).data() : nullptr;
        T* dB = tp.requires_grad(b) ? tp.grad(b).data() : nullptr;
        for (std::size_t g = 0; g < batch; ++g) {
          CMapR<T> G(grad.data() + g * m * p, m, p);
          if (dA) {
            // d op(a) = G op(b)^T, stored transposed when a is.
            with_op(B + g * n * p, transpose_b, n, p, [&](const auto& opb) {
              if (transpose_a) {
                MapR<T>(dA + g * m * n, n, m).noalias() += opb * G.transpose();
              } else {
                MapR<T>(dA + g * m * n, m, n).noalias() += G * opb.transpose();
              }
            });
          }
          if (dB) {
            // d op(b) = op(a)^T G.
            with_op(A + g * m * n, transpose_a, m, n, [&](const auto& opa) {
              if (transpose_b) {
                MapR<T>(dB + g * n * p, p, n).noalias() += G.transpose() * opa;
              } else {
                MapR<T>(dB + g * n * p, n, p).noalias() += opa.transpose() * G;
              }
            });
          }
        }
      });
}

template <class T>
Var softmax(Tape<T>& t, Var x, std::size_t axis) {
  const Shape& s = t.shape(x);
  XFE_REQUIRE(axis < s.size(), "softmax: axis " + std::to_string(axis) + " invalid for " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis];

  const Tensor<T>& in = t.value(x);
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t j = 0; j < inner; ++j) {
      const std::size_t base = o * len * inner + j;
      T mx = in[base];
      for (std::size_t k = 1; k < len; ++k) mx = std::max(mx, in[base + k * inner]);
      T total = 0;
      for (std::size_t k = 0; k < len; ++k) {
        const T e = std::exp(in[base + k * inner] - mx);
        out[base + k * inner] = e;
        total += e;
      }
      const T inv = T(1) / total;
      for (std::size_t k = 0; k < len; ++k) out[base + k * inner] *= inv;
    }
  }
  Tensor<T> saved = out;
  return t.record("softmax", std::move(out), {x},
                  [x, outer, inner, len, y = std::move(saved)](Tape<T>& tp, const Tensor<T>& g) {
                    if (!tp.requires_grad(x)) return;
                    Tensor<T>& dx = tp.grad(x);
                    for (std::size_t o = 0; o < outer; ++o) {
                      for (std::size_t j = 0; j < inner; ++j) {
                        const std::size_t base = o * len * inner + j;
                        T dot = 0;
                        for (std::size_t k = 0; k < len; ++k) dot += g[base + k * inner] * y[base + k * inner];
                        for (std::size_t k = 0; k < len; ++k) {
                          const std::size_t idx = base + k * inner;
                          dx[idx] += y[idx] * (g[idx] - dot);
                        }
                      }
                    }
                  });
}

template <class T>
Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias) {
  require_rank(t, x, 2, "layer_norm");
  const std::size_t rows = t.shape(x)[0], cols = t.shape(x)[1];
  XFE_REQUIRE(t.shape(gain) == Shape{cols} && t.shape(bias) == Shape{cols}, "layer_norm: affine shape mismatch");
  const Tensor<T>& in = t.value(x);
  const Tensor<T>& gv = t.value(gain);
  const Tensor<T>& bv = t.value(bias);
  Tensor<T> out({rows, cols});
  Tensor<T> xhat({rows, cols});
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = in.data() + r * cols;
    T mu = 0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= T(cols);
    T var = 0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= T(cols);
    const T is = T(1) / std::sqrt(var + T(kLayerNormEps));
    inv_std[r] = is;
    for (std::size_t c = 0; c < cols; ++c) {
      const T h = (row[c] - mu) * is;
      xhat[r * cols + c] = h;
      out[r * cols + c] = h * gv[c] + bv[c];
    }
  }
  return t.record(
      "layer_norm", std::move(out), {x, gain, bias},
      [x, gain, bias, rows, cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& tp,
                                                                                       const Tensor<T>& g) {
        const Tensor<T>& gv = tp.value(gain);
        if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
          Tensor<T>* dg = tp.requires_grad(gain) ? &tp.grad(gain) : nullptr;
          Tensor<T>* db = tp.requires_grad(bias) ? &tp.grad(bias) : nullptr;
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < cols; ++c) {
              const std::size_t i = r * cols + c;
              if (dg) (*dg)[c] += g[i] * xhat[i];
              if (db) (*db)[c] += g[i];
            }
          }
        }
        if (!tp.requires_grad(x)) return;
        Tensor<T>& dx = tp.grad(x);
        const T inv_n = T(1) / T(cols);
        for (std::size_t r = 0; r < rows; ++r) {
          T sum_dh = 0, sum_dh_h = 0;
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const T dh = g[i] * gv[c];
            sum_dh += dh;
            sum_dh_h += dh * xhat[i];
          }
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t i = r * cols + c;
            const T dh = g[i] * gv[c];
            dx[i] += inv_std[r] * (dh - inv_n * sum_dh - xhat[i] * inv_n * sum_dh_h);
          }
        }
      });
}

template <class T>
Var concat_cols(Tape<T>& t, Var a, Var b) {
  require_rank(t, a, 2, "concat_cols");
  require_rank(t, b, 2, "concat_cols");
  const std::size_t rows = t.shape(a)[0];
  XFE_REQUIRE(t.shape(b)[0] == rows, "concat_cols: row counts differ");
  const std::size_t ca = t.shape(a)[1], cb = t.shape(b)[1];
  Tensor<T> out({rows, ca + cb});
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(A.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(B.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return t.record("concat_cols", std::move(out), {a, b}, [a, b, rows, ca, cb](Tape<T>& tp, const Tensor<T>& g) {
    const std::size_t w = ca + cb;
    accumulate(tp, a, [&](std::size_t i) { return g[(i / ca) * w + i % ca]; });
    accumulate(tp, b, [&](std::size_t i) { return g[(i / cb) * w + ca + i % cb]; });
  });
}

template <class T>
Var slice(Tape<T>& t, Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  const Shape& s = t.shape(x);
  XFE_REQUIRE(axis < s.size() && begin < end && end <= s[axis], "slice: range out of bounds for " + shape_string(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[axis], width = end - begin;
  Shape os = s;
  os[axis] = width;
  Tensor<T> out(os);
  const auto& in = t.value(x);
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(in.data() + (o * len + begin) * inner, width * inner, out.data() + o * width * inner);
  }
  return t.record("slice", std::move(out), {x}, [=](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(x)) return;
    Tensor<T>& dx = tp.grad(x);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t k = 0; k < width * inner; ++k) dx[(o * len + begin) * inner + k] += g[o * width * inner + k];
    }
  });
}

template <class T>
Var reshape(Tape<T>& t, Var x, Shape shape) {
  Tensor<T> out = t.value(x).reshaped(std::move(shape));
  return t.record("reshape", std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    accumulate(tp, x, [&](std::size_t i) { return g[i]; });
  });
}

template <class T>
Var sum(Tape<T>& t, Var x) {
  const auto& in = t.value(x);
  T total = 0;
  for (std::size_t i = 0; i < in.size(); ++i) total += in[i];
  return t.record("sum", Tensor<T>::scalar(total), {x}, [x](Tape<T>& tp, const Tensor<T>& g) {
    const T gv = g[0];
    accumulate(tp, x, [&](std::size_t) { return gv; });
  });
}

template <class T>
Var mean(Tape<T>& t, Var x) {
  const std::size_t n = t.value(x).size();
  XFE_REQUIRE(n > 0, "mean: empty tensor");
  return scale(t, sum(t, x), T(1) / T(n));
}

template <class T>
Var sum_cols(Tape<T>& t, Var x) {
  require_rank(t, x, 2, "sum_cols");
  const std::size_t rows = t.shape(x)[0], cols = t.shape(x)[1];
  const auto& in = t.value(x);
  Tensor<T> out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t c = 0; c < cols; ++c) acc += in[r * cols + c];
    out[r] = acc;
  }
  return t.record("sum_cols", std::move(out), {x}, [x, cols](Tape<T>& tp, const Tensor<T>& g) {
    accumulate(tp, x, [&](std::size_t i) { return g[i / cols]; });
  });
}

template <class T>
Var add_tiled(Tape<T>& t, Var x, Var table) {
  require_rank(t, x, 2, "add_tiled");
  require_rank(t, table, 2, "add_tiled");
  const std::size_t rows = t.shape(x)[0], cols = t.shape(x)[1], period = t.shape(table)[0];
  XFE_REQUIRE(t.shape(table)[1] == cols, "add_tiled: column mismatch");
  XFE_REQUIRE(period > 0 && rows % period == 0, "add_tiled: rows not divisible by table length");
  const auto& in = t.value(x);
  const auto& tab = t.value(table);
  Tensor<T> out({rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* e = tab.data() + (r % period) * cols;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = in[r * cols + c] + e[c];
  }
  return t.record("add_tiled", std::move(out), {x, table},
                  [x, table, rows, cols, period](Tape<T>& tp, const Tensor<T>& g) {
                    accumulate(tp, x, [&](std::size_t i) { return g[i]; });
                    if (tp.requires_grad(table)) {
                      Tensor<T>& dt = tp.grad(table);
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < cols; ++c) dt[(r % period) * cols + c] += g[r * cols + c];
                      }
                    }
                  });
}

namespace {
// Offset in a [R, C] matrix of element (segment, head, point, channel).
struct HeadLayout {
  std::size_t segment, heads, head_dim, cols;
  std::size_t matrix_index(std::size_t seg, std::size_t h, std::size_t p, std::size_t c) const {
    return (seg * segment + p) * cols + h * head_dim + c;
  }
  std::size_t batched_index(std::size_t seg, std::size_t h, std::size_t p, std::size_t c) const {
    return ((seg * heads + h) * segment + p) * head_dim + c;
  }
};
}  // namespace

template <class T>
Var split_heads(Tape<T>& t, Var x, std::size_t segment, std::size_t heads) {
  require_rank(t, x, 2, "split_heads");
  const std::size_t rows = t.shape(x)[0], cols = t.shape(x)[1];
  XFE_REQUIRE(segment > 0 && rows % segment == 0, "split_heads: rows not divisible by segment length");
  XFE_REQUIRE(heads > 0 && cols % heads == 0, "split_heads: channels not divisible by heads");
  const HeadLayout L{segment, heads, cols / heads, cols};
  const std::size_t nseg = rows / segment;
  const auto& in = t.value(x);
  Tensor<T> out({nseg * heads, segment, L.head_dim});
  for (std::size_t sg = 0; sg < nseg; ++sg)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t p = 0; p < segment; ++p)
        for (std::size_t c = 0; c < L.head_dim; ++c) out[L.batched_index(sg, h, p, c)] = in[L.matrix_index(sg, h, p, c)];
  return t.record("split_heads", std::move(out), {x}, [x, L, nseg](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(x)) return;
    Tensor<T>& dx = tp.grad(x);
    for (std::size_t sg = 0; sg < nseg; ++sg)
      for (std::size_t h = 0; h < L.heads; ++h)
        for (std::size_t p = 0; p < L.segment; ++p)
          for (std::size_t c = 0; c < L.head_dim; ++c) dx[L.matrix_index(sg, h, p, c)] += g[L.batched_index(sg, h, p, c)];
  });
}

template <class T>
Var merge_heads(Tape<T>& t, Var x, std::size_t heads) {
  require_rank(t, x, 3, "merge_heads");
  const Shape& s = t.shape(x);
  XFE_REQUIRE(heads > 0 && s[0] % heads == 0, "merge_heads: batch not divisible by heads");
  const std::size_t nseg = s[0] / heads, segment = s[1], head_dim = s[2];
  const HeadLayout L{segment, heads, head_dim, head_dim * heads};
  const auto& in = t.value(x);
  Tensor<T> out({nseg * segment, L.cols});
  for (std::size_t sg = 0; sg < nseg; ++sg)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t p = 0; p < segment; ++p)
        for (std::size_t c = 0; c < head_dim; ++c) out[L.matrix_index(sg, h, p, c)] = in[L.batched_index(sg, h, p, c)];
  return t.record("merge_heads", std::move(out), {x}, [x, L, nseg](Tape<T>& tp, const Tensor<T>& g) {
    if (!tp.requires_grad(x)) return;
    Tensor<T>& dx = tp.grad(x);
    for (std::size_t sg = 0; sg < nseg; ++sg)
      for (std::size_t h = 0; h < L.heads; ++h)
        for (std::size_t p = 0; p < L.segment; ++p)
          for (std::size_t c = 0; c < L.head_dim; ++c) dx[L.batched_index(sg, h, p, c)] += g[L.matrix_index(sg, h, p, c)];
  });
}

template <class T>
Var divide_by_group(Tape<T>& t, Var x, Var divisor, T extra) {
  const Shape& s = t.shape(x);
  XFE_REQUIRE(!s.empty(), "divide_by_group: scalar input");
  const std::size_t k = t.value(divisor).size();
  XFE_REQUIRE(k > 0 && s[0] % k == 0, "divide_by_group: leading axis not divisible by group count");
  const std::size_t block = numel(s) / s[0];
  const auto& in = t.value(x);
  const auto& dv = t.value(divisor);
  for (std::size_t j = 0; j < k; ++j) {
    XFE_REQUIRE(dv[j] != T(0), "divide_by_group: zero divisor");
  }
  Tensor<T> out(s);
  for (std::size_t g = 0; g < s[0]; ++g) {
    const T inv = T(1) / (dv[g % k] * extra);
    for (std::size_t i = 0; i < block; ++i) out[g * block + i] = in[g * block + i] * inv;
  }
  return t.record("divide_by_group", std::move(out), {x, divisor},
                  [x, divisor, k, block, extra, groups = s[0]](Tape<T>& tp, const Tensor<T>& g) {
                    const auto& in = tp.value(x);
                    const auto& dv = tp.value(divisor);
                    if (tp.requires_grad(x)) {
                      Tensor<T>& dx = tp.grad(x);
                      for (std::size_t b = 0; b < groups; ++b) {
                        const T inv = T(1) / (dv[b % k] * extra);
                        for (std::size_t i = 0; i < block; ++i) dx[b * block + i] += g[b * block + i] * inv;
                      }
                    }
                    if (tp.requires_grad(divisor)) {
                      Tensor<T>& dd = tp.grad(divisor);
                      for (std::size_t b = 0; b < groups; ++b) {
                        const T a = dv[b % k];
                        // d/da (x / (a e)) = -x / (a^2 e)
                        T acc = 0;
                        for (std::size_t i = 0; i < block; ++i) acc += g[b * block + i] * in[b * block + i];
                        dd[b % k] -= acc / (a * a * extra);
                      }
                    }
                  });
}

namespace {

// Per-block kernels of segment_attention. D > 0 fixes the head width at compile
// time so the d x d loops unroll and vectorise; D == 0 reads it from `dyn`.
template <class T, std::size_t D>
struct AttentionKernel {
  std::size_t dyn;
  std::size_t d() const { return D ? D : dyn; }

  // S[a][b] = sum_r K[r][a] Q[r][b] / alpha, minus the column maximum.
  void logits(const T* Q, const T* K, std::size_t cols, std::size_t segment, T inv_alpha, T* S) const {
    const std::size_t n = d();
    for (std::size_t i = 0; i < n * n; ++i) S[i] = T(0);
    for (std::size_t r = 0; r < segment; ++r) {
      const T* kr = K + r * cols;
      const T* qr = Q + r * cols;
      for (std::size_t a = 0; a < n; ++a) {
        const T ka = kr[a];
        for (std::size_t b = 0; b < n; ++b) S[a * n + b] += ka * qr[b];
      }
    }
    for (std::size_t i = 0; i < n * n; ++i) S[i] *= inv_alpha;
    T mx[D ? D : 64];
    T* m = mx;
    std::vector<T> heap;
    if (!D && n > 64) {
      heap.resize(n);
      m = heap.data();
    }
    for (std::size_t b = 0; b < n; ++b) m[b] = S[b];
    for (std::size_t a = 1; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) m[b] = std::max(m[b], S[a * n + b]);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) S[a * n + b] -= m[b];
  }

  // Normalises the exponentiated columns of A and writes H = V A.
  void apply(T* A, const T* V, std::size_t cols, std::size_t segment, T* H) const {
    const std::size_t n = d();
    T tot[D ? D : 64];
    T* sum = tot;
    std::vector<T> heap;
    if (!D && n > 64) {
      heap.resize(n);
      sum = heap.data();
    }
    for (std::size_t b = 0; b < n; ++b) sum[b] = A[b];
    for (std::size_t a = 1; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) sum[b] += A[a * n + b];
    for (std::size_t b = 0; b < n; ++b) sum[b] = T(1) / sum[b];
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) A[a * n + b] *= sum[b];
    for (std::size_t r = 0; r < segment; ++r) {
      const T* vr = V + r * cols;
      T* hr = H + r * cols;
      for (std::size_t a = 0; a < n; ++a) {
        const T va = vr[a];
        for (std::size_t b = 0; b < n; ++b) hr[b] += va * A[a * n + b];
      }
    }
  }

  // Backward of one block. dA is scratch of size d*d. Returns sum(dS * P) for alpha.
  T backward(const T* A, const T* Q, const T* K, const T* V, const T* G, std::size_t cols, std::size_t segment,
             T inv_alpha, T* dQ, T* dK, T* dV, T* dA) const {
    const std::size_t n = d();
    for (std::size_t i = 0; i < n * n; ++i) dA[i] = T(0);
    for (std::size_t r = 0; r < segment; ++r) {
      const T* gr = G + r * cols;
      const T* vr = V + r * cols;
      for (std::size_t a = 0; a < n; ++a) {
        const T va = vr[a];
        T acc = 0;
        for (std::size_t b = 0; b < n; ++b) {
          dA[a * n + b] += va * gr[b];
          acc += gr[b] * A[a * n + b];
        }
        if (dV) dV[r * cols + a] += acc;
      }
    }
    // Column softmax backward; dA becomes the gradient of the scaled logits.
    T dt[D ? D : 64];
    T* dot = dt;
    std::vector<T> heap;
    if (!D && n > 64) {
      heap.resize(n);
      dot = heap.data();
    }
    for (std::size_t b = 0; b < n; ++b) dot[b] = dA[b] * A[b];
    for (std::size_t a = 1; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) dot[b] += dA[a * n + b] * A[a * n + b];
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = 0; b < n; ++b) dA[a * n + b] = A[a * n + b] * (dA[a * n + b] - dot[b]);
    T alpha_acc = 0;
    for (std::size_t r = 0; r < segment; ++r) {
      const T* qr = Q + r * cols;
      const T* kr = K + r * cols;
      T* dq = dQ ? dQ + r * cols : nullptr;
      for (std::size_t a = 0; a < n; ++a) {
        const T ka = kr[a];
        T acc = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const T ds = dA[a * n + b];
          acc += qr[b] * ds;
          if (dq) dq[b] += ka * ds * inv_alpha;
        }
        alpha_acc += acc * ka;
        if (dK) dK[r * cols + a] += acc * inv_alpha;
      }
    }
    return alpha_acc;
  }
};

template <class T, std::size_t D>
Var segment_attention_impl(Tape<T>& t, Var q, Var k, Var v, Var alpha, std::size_t segment, std::size_t heads) {
  const std::size_t rows = t.shape(q)[0], cols = t.shape(q)[1];
  const AttentionKernel<T, D> kern{cols / heads};
  const std::size_t d = kern.d(), dd = d * d, groups = rows / segment * heads;
  const T* Q = t.value(q).data();
  const T* K = t.value(k).data();
  const T* V = t.value(v).data();
  const T* al = t.value(alpha).data();

  // Logits for every block, then one vectorised exp over the whole buffer.
  typename Tensor<T>::Storage attn(groups * dd);
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t off = g / heads * segment * cols + g % heads * d;
    kern.logits(Q + off, K + off, cols, segment, T(1) / al[g % heads], attn.data() + g * dd);
  }
  Vec<T>(attn.data(), static_cast<Eigen::Index>(attn.size())).array() =
      CVec<T>(attn.data(), static_cast<Eigen::Index>(attn.size())).array().exp();
  Tensor<T> out({rows, cols});
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t off = g / heads * segment * cols + g % heads * d;
    kern.apply(attn.data() + g * dd, V + off, cols, segment, out.data() + off);
  }
  batched_mac_counter() += 2 * static_cast<std::uint64_t>(groups) * segment * dd;

  return t.record(
      "segment_attention", std::move(out), {q, k, v, alpha},
      [q, k, v, alpha, segment, heads, rows, cols, kern, attn = std::move(attn)](Tape<T>& tp, const Tensor<T>& grad) {
        const std::size_t d = kern.d(), dd = d * d, groups = rows / segment * heads;
        const T* Q = tp.value(q).data();
        const T* K = tp.value(k).data();
        const T* V = tp.value(v).data();
        const T* al = tp.value(alpha).data();
        T* dQ = tp.requires_grad(q) ? tp.grad(q).data() : nullptr;
        T* dK = tp.requires_grad(k) ? tp.grad(k).data() : nullptr;
        T* dV = tp.requires_grad(v) ? tp.grad(v).data() : nullptr;
        T* dAl = tp.requires_grad(alpha) ? tp.grad(alpha).data() : nullptr;
        std::vector<T> scratch(dd);
        for (std::size_t g = 0; g < groups; ++g) {
          const std::size_t off = g / heads * segment * cols + g % heads * d;
          const T inv = T(1) / al[g % heads];
          const T acc = kern.backward(attn.data() + g * dd, Q + off, K + off, V + off, grad.data() + off, cols,
                                      segment, inv, dQ ? dQ + off : nullptr, dK ? dK + off : nullptr,
                                      dV ? dV + off : nullptr, scratch.data());
          // logits = P / alpha, so d/dalpha = -sum(dS * P) / alpha^2.
          if (dAl) dAl[g % heads] -= acc * inv * inv;
        }
      });
}

}  // namespace

template <class T>
Var segment_attention(Tape<T>& t, Var q, Var k, Var v, Var alpha, std::size_t segment, std::size_t heads) {
  require_rank(t, q, 2, "segment_attention");
  require_same(t, q, k, "segment_attention");
  require_same(t, q, v, "segment_attention");
  const std::size_t rows = t.shape(q)[0], cols = t.shape(q)[1];
  XFE_REQUIRE(heads > 0 && cols % heads == 0, "segment_attention: channels not divisible by heads");
  XFE_REQUIRE(segment > 0 && rows % segment == 0, "segment_attention: rows not divisible by segment");
  XFE_REQUIRE(t.shape(alpha) == Shape{heads}, "segment_attention: alpha must have one entry per head");
  for (std::size_t j = 0; j < heads; ++j) XFE_REQUIRE(t.value(alpha)[j] != T(0), "segment_attention: zero alpha");
  // Fixed-width kernels for the training precision only; double keeps the generic
  // loop order used by the reference computations.
  if constexpr (!std::is_same_v<T, float>) return segment_attention_impl<T, 0>(t, q, k, v, alpha, segment, heads);
  switch (cols / heads) {
    case 4: return segment_attention_impl<T, 4>(t, q, k, v, alpha, segment, heads);
    case 8: return segment_attention_impl<T, 8>(t, q, k, v, alpha, segment, heads);
    case 16: return segment_attention_impl<T, 16>(t, q, k, v, alpha, segment, heads);
    default: return segment_attention_impl<T, 0>(t, q, k, v, alpha, segment, heads);
  }
}

#define XFE_INSTANTIATE(T)                                                          \
  template Var add(Tape<T>&, Var, Var);                                             \
  template Var segment_attention(Tape<T>&, Var, Var, Var, Var, std::size_t, std::size_t); \
  template Var sub(Tape<T>&, Var, Var);                                             \
  template Var mul(Tape<T>&, Var, Var);                                             \
  template Var neg(Tape<T>&, Var);                                                  \
  template Var scale(Tape<T>&, Var, T);                                             \
  template Var exp(Tape<T>&, Var);                                                  \
  template Var square(Tape<T>&, Var);                                               \
  template Var softplus(Tape<T>&, Var);                                             \
  template Var gelu(Tape<T>&, Var);                                                 \
  template Var matmul(Tape<T>&, Var, Var);                                          \
  template Var linear(Tape<T>&, Var, Var, Var);                                     \
  template Var batched_matmul(Tape<T>&, Var, Var, bool, bool);                      \
  template Var softmax(Tape<T>&, Var, std::size_t);                                 \
  template Var layer_norm(Tape<T>&, Var, Var, Var);                                 \
  template Var concat_cols(Tape<T>&, Var, Var);                                     \
  template Var slice(Tape<T>&, Var, std::size_t, std::size_t, std::size_t);         \
  template Var reshape(Tape<T>&, Var, Shape);                                       \
  template Var sum(Tape<T>&, Var);                                                  \
  template Var mean(Tape<T>&, Var);                                                 \
  template Var sum_cols(Tape<T>&, Var);                                             \
  template Var add_tiled(Tape<T>&, Var, Var);                                       \
  template Var split_heads(Tape<T>&, Var, std::size_t, std::size_t);                \
  template Var merge_heads(Tape<T>&, Var, std::size_t);                             \
  template Var divide_by_group(Tape<T>&, Var, Var, T);

XFE_INSTANTIATE(float)
XFE_INSTANTIATE(double)

}  // namespace xfe::ad
