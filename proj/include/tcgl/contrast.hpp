#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcgl/autodiff.hpp"
#include "tcgl/layers.hpp"

namespace tcgl {

/// Two-layer projection g(x) = relu(x W1) W2. Bias-free, so g is positively
/// homogeneous and the normalized relation is invariant to embedding scale.
template <typename Slot>
struct ProjectionParamsT {
  Slot hidden;  ///< (F_out, F_proj)
  Slot output;  ///< (F_proj, F_proj)

  template <typename F>
  auto map(F&& f) const {
    using R = std::decay_t<decltype(f(hidden))>;
    return ProjectionParamsT<R>{f(hidden), f(output)};
  }

  template <typename Self, typename F>
  static void each(Self& self, const std::string& prefix, F&& f) {
    f(join_name(prefix, "hidden"), self.hidden);
    f(join_name(prefix, "output"), self.output);
  }
};

template <typename T>
using ProjectionParams = ProjectionParamsT<Param<T>>;
template <typename T>
using ProjectionVars = ProjectionParamsT<Var<T>>;

template <typename T>
ProjectionParams<T> init_projection(Rng& rng, std::size_t in, std::size_t proj) {
  auto hidden = uniform_tensor<T>(rng, Shape{in, proj}, 1.0 / std::sqrt(static_cast<double>(in)));
  auto output = uniform_tensor<T>(rng, Shape{proj, proj}, 1.0 / std::sqrt(static_cast<double>(proj)));
  return {std::move(hidden), std::move(output)};
}

struct ContrastConfig {
  double tau = 0.5;
  double alpha = 1.0;  ///< weight of the intra-snippet losses
  double beta = 1.0;   ///< weight of the inter-snippet loss

  void validate() const {
    if (!(tau > 0.0)) throw std::invalid_argument("contrast: temperature tau must be positive");
  }
};

/// g applied to every row of an (N, F_out) embedding matrix.
template <typename T>
Var<T> project(const Var<T>& h, const ProjectionVars<T>& p) {
  if (h.value().rank() != 2) detail::shape_error("project", h.shape());
  return matmul(relu(matmul(h, p.hidden)), p.output);
}

/// phi(u, v): cosine similarity of the projected vectors.
template <typename T>
Var<T> relation(const Var<T>& u, const Var<T>& v, const ProjectionVars<T>& p) {
  if (u.value().rank() != 1 || u.shape() != v.shape()) detail::shape_error("relation", u.shape(), v.shape());
  const Shape row{1, u.shape()[0]};
  const Var<T> gu = l2_normalize(project(reshape(u, row), p));
  const Var<T> gv = l2_normalize(project(reshape(v, row), p));
  return sum(gu * gv);
}

/// l(u_i, v_i) for every node i, given row-normalized projections of the two
/// views: -log of the positive pair's share of
///   exp(phi(u_i,v_i)/tau) + sum_{k!=i} exp(phi(u_i,v_k)/tau) + sum_{k!=i} exp(phi(u_i,u_k)/tau).
template <typename T>
Var<T> directional_losses(const Var<T>& zu, const Var<T>& zv, T tau) {
  if (zu.value().rank() != 2 || zu.shape() != zv.shape()) detail::shape_error("pairwise_loss", zu.shape(), zv.shape());
  const std::size_t n = zu.value().rows();
  const T inv_tau = T(1) / tau;
  const Var<T> cross = scale(matmul(zu, transpose(zv)), inv_tau);
  const Var<T> self = scale(matmul(zu, transpose(zu)), inv_tau);
  const Var<T> all = concat({reshape(cross, Shape{n * n}), reshape(self, Shape{n * n})});
  std::vector<std::size_t> index;
  index.reserve(n * (2 * n - 1));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < n; ++k) index.push_back(i * n + k);
    for (std::size_t k = 0; k < n; ++k)
      if (k != i) index.push_back(n * n + i * n + k);
  }
  const Var<T> logits = reshape(gather(all, std::move(index)), Shape{n, 2 * n - 1});
  std::vector<std::size_t> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = i * n + i;
  const Var<T> positive = gather(cross, std::move(diag));
  const Var<T> lse = logsumexp(logits);
  return sub(lse, positive);
}

template <typename T>
Var<T> normalized_projection(const Var<T>& h, const ProjectionVars<T>& p) {
  return l2_normalize(project(h, p));
}

/// l(u_i, v_i) for U, V the (N, F_out) embeddings of the two views.
template <typename T>
Var<T> pairwise_loss(const Var<T>& u, const Var<T>& v, std::size_t i, T tau, const ProjectionVars<T>& p) {
  if (u.value().rank() != 2 || u.shape() != v.shape()) detail::shape_error("pairwise_loss", u.shape(), v.shape());
  if (i >= u.value().rows()) throw std::invalid_argument("pairwise_loss: node " + std::to_string(i) + " out of range");
  const Var<T> all = directional_losses(normalized_projection(u, p), normalized_projection(v, p), tau);
  return reshape(gather(all, {i}), Shape{});
}

/// 1/(2N) sum_i [l(u_i, v_i) + l(v_i, u_i)].
template <typename T>
Var<T> graph_loss(const Var<T>& u, const Var<T>& v, T tau, const ProjectionVars<T>& p) {
  if (u.value().rank() != 2 || u.shape() != v.shape()) detail::shape_error("graph_loss", u.shape(), v.shape());
  if (!(tau > T(0))) throw std::invalid_argument("graph_loss: tau must be positive");
  const Var<T> zu = normalized_projection(u, p);
  const Var<T> zv = normalized_projection(v, p);
  return mean(concat({directional_losses(zu, zv, tau), directional_losses(zv, zu, tau)}));
}

/// alpha * sum_k J_intra^k + beta * J_inter.
template <typename T>
Var<T> total_graph_loss(std::span<const Var<T>> intra, const Var<T>& inter, T alpha, T beta) {
  Var<T> total = scale(inter, beta);
  for (const auto& j : intra) total = add(total, scale(j, alpha));
  return total;
}

}  // namespace tcgl
