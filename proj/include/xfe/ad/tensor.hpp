#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "xfe/error.hpp"

namespace xfe::ad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape);

// Tensor buffers start on a 64-byte boundary. Vectorized kernels peel a
// pointer-dependent number of leading elements onto a scalar path, so with
// malloc's weaker alignment the same computation could round differently
// from one allocation to the next.
template <class T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t alignment{64};

  AlignedAllocator() noexcept = default;
  template <class U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

  template <class U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

// Dense row-major array. The last dimension is contiguous.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Storage = std::vector<T, AlignedAllocator<T>>;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::initializer_list<T> data) : Tensor(std::move(shape), Storage(data)) {}
  Tensor(Shape shape, const std::vector<T>& data) : Tensor(std::move(shape), Storage(data.begin(), data.end())) {}
  Tensor(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (numel(shape_) != data_.size()) {
      throw ContractError("tensor: shape " + shape_string(shape_) + " does not match " +
                          std::to_string(data_.size()) + " values");
    }
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, Storage{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) throw ContractError("tensor: axis out of range");
    return shape_[axis];
  }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  Storage& storage() noexcept { return data_; }
  const Storage& storage() const noexcept { return data_; }
  std::vector<T> to_vector() const { return {data_.begin(), data_.end()}; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // Row-major 2-D access; only valid for rank-2 tensors.
  T& at(std::size_t r, std::size_t c) noexcept { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const noexcept { return data_[r * shape_[1] + c]; }

  T item() const {
    if (data_.size() != 1) throw ContractError("tensor: item() on non-scalar " + shape_string(shape_));
    return data_[0];
  }

  Tensor reshaped(Shape shape) const {
    if (numel(shape) != data_.size()) {
      throw ContractError("tensor: cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, typename Tensor<U>::Storage(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  Storage data_;
};

// Index of the first non-finite value, or size() if all are finite.
template <class T>
std::size_t first_non_finite(const Tensor<T>& t);

}  // namespace xfe::ad
