#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "brace/autodiff.hpp"
#include "brace/error.hpp"
#include "brace/tensor.hpp"

namespace brace {

/// Kind tags steer optimizer treatment (weight decay) and trainable selection.
enum class ParamGroup { backbone, brace_seed, brace_gate, brace_rel, steer_weight, steer_bias, lora };

/// A named leaf of the computation graph. Every mutation bumps `version`,
/// which downstream caches use as their validity stamp.
template <typename T>
class Parameter {
 public:
  Parameter(std::string name, Tensor<T> value, ParamGroup group)
      : name_(std::move(name)), group_(group), var_(std::move(value), true) {}

  const std::string& name() const { return name_; }
  ParamGroup group() const { return group_; }
  bool trainable() const { return var_.requires_grad(); }
  void set_trainable(bool on) {
    var_.set_requires_grad(on);
    var_.zero_grad();
  }

  const ad::Var<T>& var() const { return var_; }
  const Tensor<T>& value() const { return var_.value(); }
  Tensor<T>& mutable_value() {
    ++version_;
    return var_.mutable_value();
  }
  void assign(Tensor<T> v) {
    if (v.shape() != var_.value().shape()) {
      throw ShapeError("assign to " + name_ + ": " + shape_str(v.shape()) +
                       " vs " + shape_str(var_.value().shape()));
    }
    mutable_value() = std::move(v);
  }

  const Tensor<T>* grad() const { return var_.grad(); }
  void zero_grad() { var_.zero_grad(); }
  std::uint64_t version() const { return version_; }

 private:
  std::string name_;
  ParamGroup group_;
  ad::Var<T> var_;
  std::uint64_t version_ = 0;
};

/// Insertion-ordered parameter registry. Parameters live behind unique_ptr so
/// references handed out stay valid as the set grows.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> value, ParamGroup group) {
    if (index_.count(name)) throw Error("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(
        std::make_unique<Parameter<T>>(std::move(name), std::move(value), group));
    return *params_.back();
  }

  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  Parameter<T>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw Error("unknown parameter: " + name);
    return *params_[it->second];
  }

  std::size_t size() const { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  std::vector<Parameter<T>*> trainable() {
    std::vector<Parameter<T>*> out;
    for (auto& p : params_)
      if (p->trainable()) out.push_back(p.get());
    return out;
  }

  /// Sum of all parameter versions; strictly increases on any mutation.
  std::uint64_t state_version() const {
    std::uint64_t v = 0;
    for (const auto& p : params_) v += p->version();
    return v + params_.size();
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace brace
