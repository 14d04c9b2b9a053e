#pragma once

// Reference attention written with explicit loops over segments, heads and small
// matrices. Used by the unit tests and the acceptance harness.

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "xfe/lineformer.hpp"

namespace xfe::test_support {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Mat to_mat(const ad::Tensor<double>& t) {
  return Eigen::Map<const Mat>(t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

inline Mat project(const Mat& x, const model::LinearParams<double>& l) {
  Mat y = x * to_mat(l.weight.value);
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    for (Eigen::Index c = 0; c < y.cols(); ++c) y(r, c) += l.bias.value[static_cast<std::size_t>(c)];
  }
  return y;
}

// Normalizes every column of m (max-subtracted exponentials over the rows).
inline Mat column_softmax(const Mat& m) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index c = 0; c < m.cols(); ++c) {
    double mx = m(0, c);
    for (Eigen::Index r = 1; r < m.rows(); ++r) mx = std::max(mx, m(r, c));
    double total = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      out(r, c) = std::exp(m(r, c) - mx);
      total += out(r, c);
    }
    const double inv = 1.0 / total;
    for (Eigen::Index r = 0; r < m.rows(); ++r) out(r, c) *= inv;
  }
  return out;
}

// Plain triple loop, summing over the inner index in increasing order.
inline Mat loop_product(const Mat& a, const Mat& b) {
  Mat c = Mat::Zero(a.rows(), b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index k = 0; k < a.cols(); ++k)
      for (Eigen::Index j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
  return c;
}

// Line-segment channel attention on x[N, C] for one ray.
inline Mat ls_msa_oracle(const model::LSABParams<double>& p, const model::LineformerConfig& cfg, const Mat& x) {
  const Eigen::Index s = static_cast<Eigen::Index>(cfg.segment);
  const Eigen::Index k = static_cast<Eigen::Index>(cfg.heads);
  const Eigen::Index dh = static_cast<Eigen::Index>(cfg.head_dim());
  const Eigen::Index n = x.rows();
  const Mat q = project(x, p.query), kk = project(x, p.key), v = project(x, p.value);
  Mat h(n, x.cols());
  for (Eigen::Index seg = 0; seg < n / s; ++seg) {
    for (Eigen::Index head = 0; head < k; ++head) {
      const Mat qi = q.block(seg * s, head * dh, s, dh);
      const Mat ki = kk.block(seg * s, head * dh, s, dh);
      const Mat vi = v.block(seg * s, head * dh, s, dh);
      Mat scores = loop_product(ki.transpose(), qi);  // d_h x d_h
      scores /= p.alpha.value[static_cast<std::size_t>(head)];
      h.block(seg * s, head * dh, s, dh) = loop_product(vi, column_softmax(scores));
    }
  }
  Mat out = project(h, p.out);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) += p.embedding.value.at(static_cast<std::size_t>(r % s), c);
  }
  return out;
}

// Global token attention on x[N, C] for one ray.
inline Mat g_msa_oracle(const model::LSABParams<double>& p, const model::LineformerConfig& cfg, const Mat& x) {
  const Eigen::Index s = static_cast<Eigen::Index>(cfg.segment);
  const Eigen::Index k = static_cast<Eigen::Index>(cfg.heads);
  const Eigen::Index dh = static_cast<Eigen::Index>(cfg.head_dim());
  const Eigen::Index n = x.rows();
  const Mat q = project(x, p.query), kk = project(x, p.key), v = project(x, p.value);
  Mat h(n, x.cols());
  for (Eigen::Index head = 0; head < k; ++head) {
    const Mat qi = q.middleCols(head * dh, dh), ki = kk.middleCols(head * dh, dh), vi = v.middleCols(head * dh, dh);
    Mat scores = loop_product(qi, ki.transpose()) / (p.alpha.value[static_cast<std::size_t>(head)] * std::sqrt(double(dh)));
    // Row-wise softmax is the column softmax of the transpose.
    const Mat weights = column_softmax(scores.transpose()).transpose();
    h.middleCols(head * dh, dh) = loop_product(weights, vi);
  }
  Mat out = project(h, p.out);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < out.cols(); ++c) out(r, c) += p.embedding.value.at(static_cast<std::size_t>(r % s), c);
  }
  return out;
}

}  // namespace xfe::test_support
