#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "brace/autodiff.hpp"
#include "brace/error.hpp"
#include "brace/parameter.hpp"

namespace brace {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::string worst;  // "name[index]"
  std::size_t checked = 0;
};

struct GradCheckOptions {
  double eps = 1e-5;
  double floor = 1e-12;  // denominator floor for near-zero gradients
  std::size_t max_per_tensor = 0;  // 0 = every element
};

namespace detail {

struct GradTarget {
  std::string name;
  std::function<double(std::size_t)> get;
  std::function<void(std::size_t, double)> set;
  std::function<const void*()> grad;  // Tensor<T>* of the analytic gradient
  std::size_t numel;
};

template <typename T>
GradCheckResult run_gradcheck(const std::function<ad::Var<T>()>& loss_fn,
                              std::vector<GradTarget>& targets, const GradCheckOptions& opt) {
  auto eval = [&] { return static_cast<double>(loss_fn().item()); };
  // Analytic pass.
  ad::Var<T> loss = loss_fn();
  const double base = static_cast<double>(loss.item());
  if (eval() != base) throw Error("gradcheck: loss is not deterministic across evaluations");
  ad::backward(loss);
  std::vector<std::vector<double>> analytic;
  for (auto& t : targets) {
    const auto* g = static_cast<const Tensor<T>*>(t.grad());
    std::vector<double> a(t.numel, 0.0);
    if (g)
      for (std::size_t i = 0; i < t.numel; ++i) a[i] = static_cast<double>((*g)[i]);
    analytic.push_back(std::move(a));
  }
  GradCheckResult res;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    auto& t = targets[k];
    const std::size_t n = opt.max_per_tensor ? std::min(opt.max_per_tensor, t.numel) : t.numel;
    for (std::size_t i = 0; i < n; ++i) {
      const double orig = t.get(i);
      t.set(i, orig + opt.eps);
      const double up = eval();
      t.set(i, orig - opt.eps);
      const double down = eval();
      t.set(i, orig);
      const double num = (up - down) / (2.0 * opt.eps);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - num);
      const double rel = abs_err / std::max({std::abs(a), std::abs(num), opt.floor});
      res.max_abs_error = std::max(res.max_abs_error, abs_err);
      if (rel >= res.max_rel_error) {
        res.max_rel_error = rel;
        res.worst = t.name + "[" + std::to_string(i) + "]";
      }
      ++res.checked;
    }
  }
  if (eval() != base) throw Error("gradcheck: parameters were not restored");
  return res;
}

}  // namespace detail

/// Central finite differences against reverse-mode gradients for every
/// element of the given parameters. Perturbations go through the parameter
/// API so version-keyed caches stay coherent.
template <typename T>
GradCheckResult finite_diff_check(const std::function<ad::Var<T>()>& loss_fn,
                                  const std::vector<Parameter<T>*>& params,
                                  const GradCheckOptions& opt = {}) {
  std::vector<detail::GradTarget> targets;
  for (auto* p : params) {
    if (!p->trainable()) throw Error("gradcheck: parameter " + p->name() + " is not trainable");
    p->zero_grad();
    targets.push_back({p->name(),
                       [p](std::size_t i) { return static_cast<double>(p->value()[i]); },
                       [p](std::size_t i, double v) { p->mutable_value()[i] = static_cast<T>(v); },
                       [p]() -> const void* { return p->grad(); }, p->value().numel()});
  }
  return detail::run_gradcheck<T>(loss_fn, targets, opt);
}

/// Same check over raw leaf variables.
template <typename T>
GradCheckResult finite_diff_check(const std::function<ad::Var<T>()>& loss_fn,
                                  std::vector<ad::Var<T>> leaves,
                                  const GradCheckOptions& opt = {}) {
  std::vector<detail::GradTarget> targets;
  for (std::size_t k = 0; k < leaves.size(); ++k) {
    ad::Var<T> v = leaves[k];
    v.zero_grad();
    targets.push_back({"input" + std::to_string(k),
                       [v](std::size_t i) { return static_cast<double>(v.value()[i]); },
                       [v](std::size_t i, double x) mutable {
                         v.mutable_value()[i] = static_cast<T>(x);
                       },
                       [v]() -> const void* { return v.grad(); }, v.numel()});
  }
  return detail::run_gradcheck<T>(loss_fn, targets, opt);
}

}  // namespace brace
