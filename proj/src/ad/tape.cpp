#include "xfe/ad/tape.hpp"

#include <algorithm>

namespace xfe::ad {

template <class T>
Var Tape<T>::constant(Tensor<T> value) {
  if (first_non_finite(value) != value.size()) throw NumericalError("tape: non-finite constant");
  Node n;
  n.value = std::move(value);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Tape<T>::parameter(Parameter<T>& p) {
  if (first_non_finite(p.value) != p.value.size()) {
    throw NumericalError("tape: parameter '" + p.name + "' holds a non-finite value");
  }
  Node n;
  n.value = p.value;
  n.param = &p;
  n.requires_grad = true;
  n.op = "parameter";
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Var Tape<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs,
                    BackwardFn backward) {
  if (backward_done_) throw ContractError("tape: recording after backward()");
  const std::size_t bad = first_non_finite(value);
  if (bad != value.size()) {
    throw NumericalError("tape: op '" + std::string(op) + "' produced a non-finite value at index " +
                         std::to_string(bad) + " of " + shape_string(value.shape()));
  }
  Node n;
  n.value = std::move(value);
  n.op = op;
  n.requires_grad = std::any_of(inputs.begin(), inputs.end(),
                                [this](Var v) { return nodes_.at(v.id).requires_grad; });
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

template <class T>
Tensor<T>& Tape<T>::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <class T>
void Tape<T>::backward(Var loss) {
  if (backward_done_) throw ContractError("tape: backward() called twice on the same tape");
  Node& root = nodes_.at(loss.id);
  if (root.value.size() != 1) {
    throw ContractError("tape: backward() needs a scalar loss, got " + shape_string(root.value.shape()));
  }
  backward_done_ = true;
  if (!root.requires_grad) return;
  grad(loss).fill(T{1});

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) {
      n.backward(*this, n.grad);
      n.backward = nullptr;
    }
    if (n.param != nullptr) {
      auto& dst = n.param->grad;
      if (dst.shape() != n.value.shape()) dst = Tensor<T>(n.value.shape());
      const std::size_t bad = first_non_finite(n.grad);
      if (bad != n.grad.size()) {
        throw NumericalError("tape: non-finite gradient for parameter '" + n.param->name + "'");
      }
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += n.grad[k];
    }
    // Intermediate gradients are no longer needed once propagated.
    if (n.param == nullptr && i != loss.id) n.grad = Tensor<T>();
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace xfe::ad
