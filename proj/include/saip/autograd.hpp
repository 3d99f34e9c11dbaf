#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "saip/tensor.hpp"

namespace saip {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape
/// lives.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  Index dim(int axis) const { return value().dim(axis); }
  bool requires_grad() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Accumulates into the gradients of an op's parents. Entries are null for
/// parents that do not require a gradient.
template <typename T>
using BackwardFn = std::function<void(const BasicTensor<T>& grad_out, std::span<BasicTensor<T>*> parent_grads)>;

template <typename T>
class Gradients {
 public:
  Gradients() = default;
  Gradients(std::vector<BasicTensor<T>> grads, const Tape<T>* tape) : grads_(std::move(grads)), tape_(tape) {}

  /// Gradient of a leaf; exact zeros when the leaf did not reach the loss.
  BasicTensor<T> of(const Var<T>& leaf) const;

 private:
  std::vector<BasicTensor<T>> grads_;
  const Tape<T>* tape_ = nullptr;
};

/// Reverse-mode recording of one forward evaluation. Single-threaded; one
/// tape per forward/backward pass.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Trainable input; receives a gradient.
  Var<T> leaf(BasicTensor<T> value);
  /// Non-trainable input.
  Var<T> constant(BasicTensor<T> value);
  /// Records an op result. The backward function is dropped when no parent
  /// requires a gradient.
  Var<T> record(BasicTensor<T> value, std::vector<Var<T>> parents, BackwardFn<T> backward);

  const BasicTensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  bool is_leaf(int id) const { return nodes_[static_cast<std::size_t>(id)].leaf; }
  std::size_t size() const { return nodes_.size(); }

  /// Replays the tape backward from a single-element loss.
  Gradients<T> backward(const Var<T>& loss) const;

 private:
  struct Node {
    BasicTensor<T> value;
    std::vector<int> parents;
    BackwardFn<T> backward;
    bool requires_grad = false;
    bool leaf = false;
  };
  // deque: values stay addressable while new nodes are recorded.
  std::deque<Node> nodes_;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return tape->value(id);
}

template <typename T>
bool Var<T>::requires_grad() const {
  return tape->requires_grad(id);
}

extern template class Tape<float>;
extern template class Tape<double>;
extern template class Gradients<float>;
extern template class Gradients<double>;

}  // namespace saip
