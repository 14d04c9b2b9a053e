#include "xfe/ad/tensor.hpp"

#include <Eigen/Core>

#include <cmath>

namespace xfe::ad {

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <class T>
std::size_t first_non_finite(const Tensor<T>& t) {
  const T* p = t.data();
  const std::size_t n = t.size();
  // x - x is 0 for finite x and NaN otherwise; this sum vectorises, so the exact
  // scan below only runs when something is wrong.
  const Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> a(p, static_cast<Eigen::Index>(n));
  if ((a - a).sum() == T(0)) return n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) return i;
  }
  return n;
}

template std::size_t first_non_finite(const Tensor<float>&);
template std::size_t first_non_finite(const Tensor<double>&);

}  // namespace xfe::ad
