#include "saip/params.hpp"

#include <cmath>
#include <stdexcept>

namespace saip {

std::string join_name(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

Init Init::he(Index fan_in) { return normal(std::sqrt(2.0 / static_cast<double>(fan_in))); }

template <typename T>
void ParamSet<T>::add(const std::string& name, BasicTensor<T> value) {
  if (index_.contains(name)) throw std::invalid_argument("duplicate tensor name '" + name + "'");
  index_.emplace(name, names_.size());
  names_.push_back(name);
  values_.push_back(std::move(value));
}

template <typename T>
const BasicTensor<T>& ParamSet<T>::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown tensor '" + name + "'");
  return values_[it->second];
}

template <typename T>
BasicTensor<T>& ParamSet<T>::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw std::out_of_range("unknown tensor '" + name + "'");
  return values_[it->second];
}

template <typename T>
Index ParamSet<T>::total_elements() const {
  Index n = 0;
  for (const auto& v : values_) n += v.numel();
  return n;
}

template <typename T>
ParamSet<T> ParamSet<T>::zeros_like() const {
  ParamSet out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], BasicTensor<T>(values_[i].shape()));
  return out;
}

template <typename T>
template <typename U>
ParamSet<U> ParamSet<T>::cast() const {
  ParamSet<U> out;
  for (std::size_t i = 0; i < names_.size(); ++i) out.add(names_[i], values_[i].template cast<U>());
  return out;
}

template <typename T>
bool ParamSet<T>::operator==(const ParamSet& other) const {
  return names_ == other.names_ && values_ == other.values_;
}

template <typename T>
Context<T>::Context(Tape<T>& tape, ParamSet<T>& params, ParamSet<T>& buffers, bool training)
    : tape_(tape), params_(params), buffers_(buffers), training_(training) {}

template <typename T>
void Context<T>::bind(const std::string& name, Var<T> var) {
  if (bound_.contains(name)) throw std::invalid_argument("parameter '" + name + "' already bound");
  bound_.emplace(name, var);
  bound_order_.emplace_back(name, var);
}

namespace {

template <typename T>
BasicTensor<T> initial_value(const Shape& shape, const Init& init, std::mt19937_64& rng) {
  BasicTensor<T> t(shape);
  switch (init.kind) {
    case Init::Kind::zeros:
      break;
    case Init::Kind::constant:
      for (auto& v : t.data()) v = static_cast<T>(init.value);
      break;
    case Init::Kind::normal: {
      std::normal_distribution<double> nd(0.0, init.value);
      for (auto& v : t.data()) v = static_cast<T>(nd(rng));
      break;
    }
    case Init::Kind::center_tap: {
      std::normal_distribution<double> nd(0.0, init.value);
      for (auto& v : t.data()) v = static_cast<T>(nd(rng));
      const Index taps = shape.back() * shape[shape.size() - 2];
      for (Index c = 0; c < t.numel() / taps; ++c) t[c * taps + taps / 2] += T(1);
      break;
    }
  }
  return t;
}

}  // namespace

template <typename T>
Var<T> Context<T>::param(const std::string& name, const Shape& shape, const Init& init) {
  if (auto it = bound_.find(name); it != bound_.end()) {
    if (it->second.shape() != shape) {
      throw ShapeError("parameter '" + name + "' bound with shape " + shape_to_string(it->second.shape()) +
                       ", expected " + shape_to_string(shape));
    }
    return it->second;
  }
  if (!params_.contains(name)) {
    if (!building()) throw std::out_of_range("missing parameter '" + name + "'");
    params_.add(name, initial_value<T>(shape, init, *rng_));
  }
  const auto& value = params_.get(name);
  if (value.shape() != shape) {
    throw ShapeError("parameter '" + name + "' has shape " + shape_to_string(value.shape()) + ", expected " +
                     shape_to_string(shape));
  }
  Var<T> v = frozen_ ? tape_.constant(value) : tape_.leaf(value);
  bound_.emplace(name, v);
  bound_order_.emplace_back(name, v);
  return v;
}

template <typename T>
BasicTensor<T>& Context<T>::buffer(const std::string& name, const Shape& shape, T fill) {
  if (!buffers_.contains(name)) {
    if (!building()) throw std::out_of_range("missing buffer '" + name + "'");
    buffers_.add(name, BasicTensor<T>(shape, fill));
  }
  auto& b = buffers_.get(name);
  if (b.shape() != shape) {
    throw ShapeError("buffer '" + name + "' has shape " + shape_to_string(b.shape()) + ", expected " +
                     shape_to_string(shape));
  }
  return b;
}

template class ParamSet<float>;
template class ParamSet<double>;
template ParamSet<double> ParamSet<float>::cast<double>() const;
template ParamSet<float> ParamSet<double>::cast<float>() const;
template ParamSet<float> ParamSet<float>::cast<float>() const;
template ParamSet<double> ParamSet<double>::cast<double>() const;
template class Context<float>;
template class Context<double>;

}  // namespace saip
