#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcgl/autodiff.hpp"
#include "tcgl/layers.hpp"
#include "tcgl/sampler.hpp"

namespace tcgl {

enum class GateActivation { relu, sigmoid };

/// Fusion (n*c -> c/2), excitation (c/2 -> c) and a two-layer classifier
/// (n*c -> n*c/2 -> n!).
template <typename Slot>
struct OrderHeadParamsT {
  LinearT<Slot> fuse;
  LinearT<Slot> excite;
  LinearT<Slot> hidden;
  LinearT<Slot> classify;

  template <typename F>
  auto map(F&& f) const {
    using R = std::decay_t<decltype(f(fuse.weight))>;
    return OrderHeadParamsT<R>{fuse.map(f), excite.map(f), hidden.map(f), classify.map(f)};
  }

  template <typename Self, typename F>
  static void each(Self& self, const std::string& prefix, F&& f) {
    LinearT<Slot>::each(self.fuse, join_name(prefix, "fuse"), f);
    LinearT<Slot>::each(self.excite, join_name(prefix, "excite"), f);
    LinearT<Slot>::each(self.hidden, join_name(prefix, "hidden"), f);
    LinearT<Slot>::each(self.classify, join_name(prefix, "classify"), f);
  }
};

template <typename T>
using OrderHeadParams = OrderHeadParamsT<Param<T>>;
template <typename T>
using OrderHeadVars = OrderHeadParamsT<Var<T>>;

/// Joint representation width: sum of the n snippet widths over 2n.
inline std::size_t fused_dim(std::size_t snippets, std::size_t channels) {
  const std::size_t total = snippets * channels;
  if (snippets == 0 || total % (2 * snippets) != 0) {
    throw std::invalid_argument("order head: feature width " + std::to_string(channels) + " must be even");
  }
  return total / (2 * snippets);
}

template <typename T>
OrderHeadParams<T> init_order_head(Rng& rng, std::size_t snippets, std::size_t channels) {
  const std::size_t joint = snippets * channels;
  const std::size_t con = fused_dim(snippets, channels);
  OrderHeadParams<T> p;
  p.fuse = init_linear<T>(rng, joint, con);
  p.excite = init_linear<T>(rng, con, channels);
  p.hidden = init_linear<T>(rng, joint, joint / 2);
  p.classify = init_linear<T>(rng, joint / 2, factorial(snippets));
  return p;
}

namespace detail {
template <typename T>
void check_equal_widths(std::span<const Var<T>> features, const char* op) {
  if (features.empty()) throw std::invalid_argument(std::string(op) + ": no snippet features");
  for (const auto& f : features) {
    if (f.value().rank() != 1 || f.shape() != features.front().shape()) shape_error(op, features.front().shape(), f.shape());
  }
}
}  // namespace detail

/// Z = W_s [f_1, ..., f_n] + b_s.
template <typename T>
Var<T> fuse(std::span<const Var<T>> features, const OrderHeadVars<T>& p) {
  detail::check_equal_widths(features, "fuse");
  const Var<T> joint = concat(features);
  if (joint.shape()[0] != p.fuse.weight.shape()[0]) detail::shape_error("fuse", joint.shape(), p.fuse.weight.shape());
  return affine(joint, p.fuse);
}

/// E = W_e Z + b_e.
template <typename T>
Var<T> excite(const Var<T>& z, const OrderHeadVars<T>& p) {
  return affine(z, p.excite);
}

/// f~_k = gate(E) (.) f_k.
template <typename T>
Var<T> recalibrate(const Var<T>& e, const Var<T>& f, GateActivation gate = GateActivation::relu) {
  if (e.shape() != f.shape() || e.value().rank() != 1) detail::shape_error("recalibrate", e.shape(), f.shape());
  const Var<T> g = gate == GateActivation::relu ? relu(e) : sigmoid(e);
  return hadamard(g, f);
}

/// Class logits (n!) from refined snippet features.
template <typename T>
Var<T> order_logits(std::span<const Var<T>> refined, const OrderHeadVars<T>& p) {
  detail::check_equal_widths(refined, "predict_order");
  const Var<T> joint = concat(refined);
  if (joint.shape()[0] != p.hidden.weight.shape()[0]) detail::shape_error("predict_order", joint.shape(), p.hidden.weight.shape());
  return affine(relu(affine(joint, p.hidden)), p.classify);
}

/// Fuse, excite, gate, classify.
template <typename T>
Var<T> order_head_logits(std::span<const Var<T>> features, const OrderHeadVars<T>& p, GateActivation gate = GateActivation::relu) {
  const Var<T> e = excite(fuse(features, p), p);
  std::vector<Var<T>> refined;
  refined.reserve(features.size());
  for (const auto& f : features) refined.push_back(recalibrate(e, f, gate));
  return order_logits(std::span<const Var<T>>(refined), p);
}

struct OrderPrediction {
  std::vector<double> probabilities;
  std::size_t permutation_id = 0;  ///< argmax, lowest index on ties
};

template <typename T>
OrderPrediction predict_order(const Tensor<T>& logits) {
  const auto v = logits.data();
  if (v.empty()) throw std::invalid_argument("predict_order: empty logits");
  const double mx = static_cast<double>(*std::max_element(v.begin(), v.end()));
  OrderPrediction out;
  out.probabilities.resize(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += (out.probabilities[i] = std::exp(static_cast<double>(v[i]) - mx));
  for (auto& p : out.probabilities) p /= s;
  out.permutation_id = static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
  return out;
}

inline constexpr double kProbabilityClamp = 1e-12;

/// -log p_label, with p clamped at 1e-12 (reporting path).
inline double order_loss(const OrderPrediction& pred, std::size_t label) {
  if (label >= pred.probabilities.size()) {
    throw std::invalid_argument("order_loss: label " + std::to_string(label) + " out of range [0, " +
                                std::to_string(pred.probabilities.size()) + ")");
  }
  return -std::log(std::max(pred.probabilities[label], kProbabilityClamp));
}

/// Differentiable cross-entropy from logits through log-softmax.
template <typename T>
Var<T> order_loss(const Var<T>& logits, std::size_t label) {
  if (logits.value().rank() != 1) detail::shape_error("order_loss", logits.shape());
  if (label >= logits.shape()[0]) {
    throw std::invalid_argument("order_loss: label " + std::to_string(label) + " out of range [0, " +
                                std::to_string(logits.shape()[0]) + ")");
  }
  return reshape(scale(gather(log_softmax(logits), {label}), T(-1)), Shape{});
}

/// J = lambda_g J_g + lambda_o J_o.
template <typename T>
Var<T> total_loss(const Var<T>& graph, const Var<T>& order, T lambda_g, T lambda_o) {
  return add(scale(graph, lambda_g), scale(order, lambda_o));
}

}  // namespace tcgl
