#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "xfe/ad/tensor.hpp"

namespace xfe::ad {

// Handle to a node recorded on a Tape.
struct Var {
  std::uint32_t id = 0;
};

// A trainable tensor. `grad` has the shape of `value` and is accumulated by Tape::backward.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Parameter() = default;
  Parameter(std::string n, Tensor<T> v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad() { grad = Tensor<T>(value.shape()); }
};

// Define-by-run reverse-mode tape. One tape per training step: record the forward
// pass, call backward() once, then discard the tape.
template <class T>
class Tape {
 public:
  // Propagates `out_grad` (gradient w.r.t. the node's value) into the inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var constant(Tensor<T> value);
  Var parameter(Parameter<T>& p);

  // Records an op result. `inputs` decide whether the node requires a gradient;
  // `backward` is dropped when none of them do. Non-finite values throw NumericalError.
  Var record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient buffer of a node, allocated (zero) on first use. Only valid during backward().
  Tensor<T>& grad(Var v);

  // Populates gradients of every reachable node from a scalar loss and adds the
  // results into the owning Parameter::grad buffers. Callable once per tape.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn backward;
    Parameter<T>* param = nullptr;
    bool requires_grad = false;
    std::string_view op;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace xfe::ad
