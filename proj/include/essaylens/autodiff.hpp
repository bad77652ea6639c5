#pragma once

// Numerical gradient oracle and the analytic-vs-numeric comparison used by
// every gradient test in the project.

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "essaylens/graph.hpp"
#include "essaylens/rng.hpp"

namespace essaylens::ad {

/// |a - n| / max(|a|, |n|, 1e-8)
template <typename S>
S relative_error(S analytic, S numeric) {
  const S denom = std::max({std::abs(analytic), std::abs(numeric), S(1e-8)});
  return std::abs(analytic - numeric) / denom;
}

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
template <typename S>
Tensor<S> finite_difference_grad(const std::function<S(const Tensor<S>&)>& f, const Tensor<S>& x, S h) {
  if (!(h > S(0))) fail(ErrorCode::invalid_argument, "finite-difference step must be positive");
  Tensor<S> probe = x;
  Tensor<S> grad = Tensor<S>::with_rank(Matrix<S>::Zero(x.matrix().rows(), x.matrix().cols()), x.rank());
  for (Index i = 0; i < x.size(); ++i) {
    const S orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const S up = f(probe);
    probe.data()[i] = orig - h;
    const S down = f(probe);
    probe.data()[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      fail(ErrorCode::nonfinite_evaluation, "function is not finite near coordinate " + std::to_string(i));
    grad.data()[i] = (up - down) / (S(2) * h);
  }
  return grad;
}

template <typename S>
struct GradientEntry {
  Tensor<S> analytic;
  Tensor<S> numeric;
  S max_relative_error = S(0);
};

template <typename S>
struct GradientReport {
  std::map<std::string, GradientEntry<S>> entries;

  S max_relative_error() const {
    S worst = 0;
    for (const auto& [_, e] : entries) worst = std::max(worst, e.max_relative_error);
    return worst;
  }

  std::string worst_name() const {
    std::string name;
    S worst = -1;
    for (const auto& [n, e] : entries)
      if (e.max_relative_error > worst) {
        worst = e.max_relative_error;
        name = n;
      }
    return name;
  }
};

/// Compares backprop against central differences for the named bindings
/// (every binding when `names` is empty).
template <typename S>
GradientReport<S> check_gradients(const Graph<S>& graph, const Bindings<S>& bindings, Expr<S> loss, S h,
                                  std::vector<std::string> names = {}) {
  const auto analytic = backprop(graph, bindings, loss);
  if (names.empty())
    for (const auto& [n, _] : bindings) names.push_back(n);

  GradientReport<S> report;
  for (const auto& name : names) {
    auto it = bindings.find(name);
    if (it == bindings.end()) fail(ErrorCode::unbound_input, "unbound input '" + name + "'");
    std::function<S(const Tensor<S>&)> f = [&](const Tensor<S>& x) {
      Bindings<S> b = bindings;
      b[name] = x;
      const Trace<S> t = forward(graph, b);
      return t[loss.id](0, 0);
    };
    GradientEntry<S> e;
    e.analytic = analytic.at(name);
    e.numeric = finite_difference_grad(f, it->second, h);
    for (Index i = 0; i < e.analytic.size(); ++i)
      e.max_relative_error = std::max(e.max_relative_error, relative_error(e.analytic.data()[i], e.numeric.data()[i]));
    report.entries.emplace(name, std::move(e));
  }
  return report;
}

/// Inverted dropout expressed as a product with a constant keep-mask.  The
/// mask comes from a counter-based stream so a given (key, counter) always
/// drops the same units; with `training == false` it is the identity.
struct DropoutContext {
  bool training = false;
  double rate = 0.0;
  CounterRng rng{0};
};

template <typename S>
Expr<S> dropout(Expr<S> x, Index rows, Index cols, DropoutContext& ctx) {
  if (!ctx.training || ctx.rate <= 0.0) return x;
  const S keep = S(1) / S(1 - ctx.rate);
  Matrix<S> mask(rows, cols);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = ctx.rng.uniform() < ctx.rate ? S(0) : keep;
  return x * x.graph->constant(std::move(mask));
}

}  // namespace essaylens::ad
