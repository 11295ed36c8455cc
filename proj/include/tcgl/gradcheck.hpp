#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tcgl/autodiff.hpp"

namespace tcgl {

/// Builds a scalar on `tape` from leaves bound to the checked inputs.
template <typename T>
using TapeFunction = std::function<Var<T>(Tape<T>&, std::span<const Var<T>>)>;

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t input = 0;       ///< input holding the worst coordinate
  std::size_t coordinate = 0;  ///< flat index of the worst coordinate
  double analytic = 0.0;
  double numeric = 0.0;
  double epsilon = 0.0;
  std::size_t coordinates_checked = 0;
  /// Coordinates where every step size crossed a relu kink; not scored.
  std::size_t coordinates_skipped = 0;
  bool straddles_kink = false;
};

/// Denominator floor for the relative error: below it the error is measured
/// absolutely. Single precision gets a coarser floor.
template <typename T>
constexpr double relative_error_floor() {
  return sizeof(T) >= 8 ? 1e-6 : 1e-2;
}

template <typename T>
double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), relative_error_floor<T>()});
  return std::abs(analytic - numeric) / denom;
}

namespace detail {

template <typename T>
std::pair<T, std::uint64_t> evaluate(const TapeFunction<T>& f, const std::vector<Tensor<T>>& inputs) {
  Tape<T> tape;
  std::vector<Var<T>> vars;
  vars.reserve(inputs.size());
  for (const auto& in : inputs) vars.push_back(tape.constant(in));
  const Var<T> out = f(tape, vars);
  if (out.value().size() != 1) throw std::invalid_argument("finite_diff_check: function is not scalar-valued");
  return {out.value()[0], tape.diagnostics().relu_pattern};
}

}  // namespace detail

namespace detail {

/// One report per coordinate, in input-major order.
template <typename T>
std::vector<GradCheckReport> coordinate_reports(const TapeFunction<T>& f, std::vector<Tensor<T>> inputs, T epsilon) {
  if (!(epsilon > T(0))) throw std::invalid_argument("finite_diff_check: epsilon must be positive");

  Tape<T> tape;
  std::vector<Var<T>> vars;
  for (auto in : inputs) {
    in.set_requires_grad(true);
    vars.push_back(tape.leaf(std::move(in)));
  }
  const Var<T> out = f(tape, vars);
  if (out.value().size() != 1) throw std::invalid_argument("finite_diff_check: function is not scalar-valued");
  if (!std::isfinite(static_cast<double>(out.value()[0]))) throw std::domain_error("finite_diff_check: non-finite function value");
  const Gradients<T> grads = backward(out);
  const std::uint64_t pattern = tape.diagnostics().relu_pattern;

  std::vector<GradCheckReport> reports;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<T> analytic = grads.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const T saved = inputs[k][i];
      inputs[k][i] = saved + epsilon;
      const auto [up, up_pattern] = evaluate(f, inputs);
      inputs[k][i] = saved - epsilon;
      const auto [down, down_pattern] = evaluate(f, inputs);
      inputs[k][i] = saved;
      const double numeric = (static_cast<double>(up) - static_cast<double>(down)) / (2.0 * static_cast<double>(epsilon));
      const double a = static_cast<double>(analytic[i]);
      if (!std::isfinite(numeric) || !std::isfinite(a)) {
        throw std::domain_error("finite_diff_check: non-finite value at input " + std::to_string(k) + " coordinate " +
                                std::to_string(i));
      }
      GradCheckReport r;
      r.max_rel_error = relative_error<T>(a, numeric);
      r.input = k;
      r.coordinate = i;
      r.analytic = a;
      r.numeric = numeric;
      r.epsilon = static_cast<double>(epsilon);
      r.coordinates_checked = 1;
      r.straddles_kink = up_pattern != pattern || down_pattern != pattern;
      reports.push_back(r);
    }
  }
  return reports;
}

}  // namespace detail

/// Compares reverse-mode gradients of `f` against central differences
/// (f(x+e) - f(x-e)) / 2e over every coordinate of every input. Coordinates
/// whose perturbation flips a relu are differentiable only one-sidedly there;
/// they are counted in coordinates_skipped instead of being scored.
template <typename T>
GradCheckReport finite_diff_check(const TapeFunction<T>& f, std::vector<Tensor<T>> inputs, T epsilon = T(1e-5)) {
  const auto reports = detail::coordinate_reports(f, std::move(inputs), epsilon);
  GradCheckReport worst;
  worst.epsilon = static_cast<double>(epsilon);
  std::size_t skipped = 0;
  bool first = true;
  for (const auto& r : reports) {
    if (r.straddles_kink) {
      ++skipped;
      continue;
    }
    if (first || r.max_rel_error > worst.max_rel_error) worst = r;
    first = false;
  }
  worst.coordinates_checked = reports.size() - skipped;
  worst.coordinates_skipped = skipped;
  return worst;
}

/// Runs the check at each epsilon and keeps, per coordinate, the kink-free
/// epsilon with the smallest error.
template <typename T>
GradCheckReport finite_diff_check(const TapeFunction<T>& f, const std::vector<Tensor<T>>& inputs, std::span<const T> epsilons) {
  if (epsilons.empty()) throw std::invalid_argument("finite_diff_check: empty epsilon sweep");
  std::vector<std::vector<GradCheckReport>> per_eps;
  for (T eps : epsilons) per_eps.push_back(detail::coordinate_reports(f, inputs, eps));
  GradCheckReport worst;
  std::size_t skipped = 0;
  bool first = true;
  for (std::size_t c = 0; c < per_eps.front().size(); ++c) {
    const GradCheckReport* best = nullptr;
    for (const auto& r : per_eps)
      if (!r[c].straddles_kink && (!best || r[c].max_rel_error < best->max_rel_error)) best = &r[c];
    if (!best) {
      ++skipped;
      continue;
    }
    if (first || best->max_rel_error > worst.max_rel_error) worst = *best;
    first = false;
  }
  worst.coordinates_checked = per_eps.front().size() - skipped;
  worst.coordinates_skipped = skipped;
  return worst;
}

/// Default sweep per precision.
template <typename T>
std::vector<T> default_epsilons() {
  if constexpr (sizeof(T) >= 8) {
    return {T(1e-4), T(1e-5), T(1e-6)};
  } else {
    return {T(1e-2), T(3e-3), T(1e-3)};
  }
}

}  // namespace tcgl
