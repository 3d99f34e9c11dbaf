#pragma once

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "saip/autograd.hpp"

namespace saip {

/// Ordered collection of named tensors (parameters, buffers, optimizer moments).
/// Iteration follows insertion order.
template <typename T>
class ParamSet {
 public:
  void add(const std::string& name, BasicTensor<T> value);
  bool contains(const std::string& name) const { return index_.contains(name); }
  const BasicTensor<T>& get(const std::string& name) const;
  BasicTensor<T>& get(const std::string& name);

  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return names_.size(); }
  Index total_elements() const;

  /// Same names and shapes, all values zero.
  ParamSet zeros_like() const;
  template <typename U>
  ParamSet<U> cast() const;

  bool operator==(const ParamSet& other) const;

 private:
  std::vector<std::string> names_;
  std::deque<BasicTensor<T>> values_;
  std::unordered_map<std::string, std::size_t> index_;
};

/// Parameter initialization recipe applied when a parameter is first created.
struct Init {
  enum class Kind { zeros, constant, normal, center_tap } kind = Kind::zeros;
  double value = 0;

  static Init zeros() { return {Kind::zeros, 0}; }
  static Init constant(double v) { return {Kind::constant, v}; }
  static Init normal(double stddev) { return {Kind::normal, stddev}; }
  /// He-normal for a fan-in of `fan_in` inputs.
  static Init he(Index fan_in);
  /// Depthwise (C,1,k,k) kernel with 1 at the centre tap plus N(0, noise^2).
  static Init center_tap(double noise) { return {Kind::center_tap, noise}; }
};

/// One forward evaluation: binds parameters to tape variables, exposes
/// buffers and the training flag, and optionally records intermediate maps.
///
/// In building mode, a parameter that does not exist yet is created with its
/// initializer; otherwise missing parameters and shape mismatches throw.
template <typename T>
class Context {
 public:
  Context(Tape<T>& tape, ParamSet<T>& params, ParamSet<T>& buffers, bool training);

  /// Enables parameter creation, drawing initial values from `rng`.
  void enable_building(std::mt19937_64& rng) { rng_ = &rng; }
  bool building() const { return rng_ != nullptr; }

  /// Parameters are bound as leaves unless frozen.
  void freeze_parameters(bool frozen) { frozen_ = frozen; }
  /// Uses `var` for parameter `name` instead of binding the stored value.
  void bind(const std::string& name, Var<T> var);

  Var<T> param(const std::string& name, const Shape& shape, const Init& init);
  BasicTensor<T>& buffer(const std::string& name, const Shape& shape, T fill);
  Var<T> constant(BasicTensor<T> value) { return tape_.constant(std::move(value)); }

  Tape<T>& tape() { return tape_; }
  bool training() const { return training_; }

  /// Parameters bound during this evaluation, in first-use order.
  const std::vector<std::pair<std::string, Var<T>>>& bound() const { return bound_order_; }

  /// Captures named intermediate values when a probe map is attached.
  void attach_probe(std::map<std::string, BasicTensor<T>>* probe) { probe_ = probe; }
  void record(const std::string& name, const Var<T>& v) {
    if (probe_) (*probe_)[name] = v.value();
  }

 private:
  Tape<T>& tape_;
  ParamSet<T>& params_;
  ParamSet<T>& buffers_;
  bool training_;
  bool frozen_ = false;
  std::mt19937_64* rng_ = nullptr;
  std::unordered_map<std::string, Var<T>> bound_;
  std::vector<std::pair<std::string, Var<T>>> bound_order_;
  std::map<std::string, BasicTensor<T>>* probe_ = nullptr;
};

/// Joins a scope prefix and a local name with '.'.
std::string join_name(const std::string& prefix, const std::string& name);

extern template class ParamSet<float>;
extern template class ParamSet<double>;
extern template class Context<float>;
extern template class Context<double>;

}  // namespace saip
