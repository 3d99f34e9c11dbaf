#include "saip/autograd.hpp"

namespace saip {

template <typename T>
BasicTensor<T> Gradients<T>::of(const Var<T>& leaf) const {
  const auto i = static_cast<std::size_t>(leaf.id);
  if (i < grads_.size() && !grads_[i].empty()) return grads_[i];
  return BasicTensor<T>(leaf.value().shape());
}

template <typename T>
Var<T> Tape<T>::leaf(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = true;
  n.leaf = true;
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::constant(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var<T> Tape<T>::record(BasicTensor<T> value, std::vector<Var<T>> parents, BackwardFn<T> backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& p : parents) {
    if (p.tape != this) throw std::logic_error("operand recorded on a different tape");
    n.parents.push_back(p.id);
    n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(p.id)].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Gradients<T> Tape<T>::backward(const Var<T>& loss) const {
  if (loss.tape != this) throw std::logic_error("loss recorded on a different tape");
  const auto& lv = value(loss.id);
  if (lv.numel() != 1) throw ShapeError("backward needs a scalar loss, got shape " + shape_to_string(lv.shape()));

  std::vector<BasicTensor<T>> grads(nodes_.size());
  if (!requires_grad(loss.id)) return Gradients<T>(std::move(grads), this);
  grads[static_cast<std::size_t>(loss.id)] = BasicTensor<T>(lv.shape(), T(1));

  std::vector<BasicTensor<T>*> slots;
  for (int id = loss.id; id >= 0; --id) {
    const Node& node = nodes_[static_cast<std::size_t>(id)];
    auto& g = grads[static_cast<std::size_t>(id)];
    if (g.empty() || node.leaf || !node.backward) continue;
    slots.assign(node.parents.size(), nullptr);
    for (std::size_t k = 0; k < node.parents.size(); ++k) {
      const int pid = node.parents[k];
      if (!nodes_[static_cast<std::size_t>(pid)].requires_grad) continue;
      auto& pg = grads[static_cast<std::size_t>(pid)];
      if (pg.empty()) pg = BasicTensor<T>(nodes_[static_cast<std::size_t>(pid)].value.shape());
      slots[k] = &pg;
    }
    node.backward(g, slots);
    g = BasicTensor<T>();
  }
  return Gradients<T>(std::move(grads), this);
}

template class Tape<float>;
template class Tape<double>;
template class Gradients<float>;
template class Gradients<double>;

}  // namespace saip
