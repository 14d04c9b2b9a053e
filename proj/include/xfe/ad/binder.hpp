#pragma once

#include <unordered_map>

#include "xfe/ad/tape.hpp"

namespace xfe::ad {

// Registers each Parameter on a tape at most once, so a parameter used by several
// ops shares one gradient node.
template <class T>
class Binder {
 public:
  explicit Binder(Tape<T>& tape) : tape_(tape) {}

  Var operator()(Parameter<T>& p) {
    auto [it, inserted] = bound_.try_emplace(&p);
    if (inserted) it->second = tape_.parameter(p);
    return it->second;
  }

  Tape<T>& tape() noexcept { return tape_; }

 private:
  Tape<T>& tape_;
  std::unordered_map<const Parameter<T>*, Var> bound_;
};

}  // namespace xfe::ad
