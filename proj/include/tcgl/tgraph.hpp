#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcgl/autodiff.hpp"
#include "tcgl/layers.hpp"
#include "tcgl/rng.hpp"

namespace tcgl {

enum class GraphKind { inter, intra };

/// Nodes in chronological order with the chain prior as adjacency.
template <typename T>
struct TemporalGraph {
  Var<T> features;     ///< (N, F)
  Tensor<T> adjacency; ///< (N, N), entries in {0, 1}
  GraphKind kind = GraphKind::inter;
  std::size_t snippet = 0;  ///< owning snippet for intra graphs
  bool directed = false;

  std::size_t nodes() const { return adjacency.rows(); }
};

/// A[i][j] = 1 iff |i - j| = 1 (only j = i + 1 when directed).
template <typename T>
Tensor<T> chain_adjacency(std::size_t n, bool directed = false) {
  if (n == 0) throw std::invalid_argument("chain_adjacency: graph needs at least one node");
  Tensor<T> a(Shape{n, n});
  for (std::size_t i = 0; i + 1 < n; ++i) {
    a(i, i + 1) = T(1);
    if (!directed) a(i + 1, i) = T(1);
  }
  return a;
}

template <typename T>
TemporalGraph<T> build_chain_graph(const Var<T>& features, GraphKind kind, std::size_t snippet = 0, bool directed = false) {
  const auto& x = features.value();
  if (x.rank() != 2) throw std::invalid_argument("build_chain_graph: features must be an (N, F) matrix, got " + to_string(x.shape()));
  return TemporalGraph<T>{features, chain_adjacency<T>(x.rows(), directed), kind, snippet, directed};
}

template <typename T>
std::size_t edge_count(const Tensor<T>& a, bool directed) {
  std::size_t e = 0;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) e += (a(i, j) != T(0) && (directed || i < j)) ? 1 : 0;
  return e;
}

/// Corrupted copy of a graph: edges dropped with probability p_r and whole
/// feature dimensions zeroed with probability p_m.
template <typename T>
struct GraphView {
  Var<T> features;
  Tensor<T> adjacency;
  std::vector<unsigned char> feature_mask;  ///< 1 = kept
  const TemporalGraph<T>* origin = nullptr;
  int view_index = 1;
  std::size_t edges_before = 0;
  std::size_t edges_removed = 0;

  std::size_t masked_dims() const {
    std::size_t n = 0;
    for (auto m : feature_mask) n += m ? 0 : 1;
    return n;
  }
};

/// One Bernoulli draw per existing edge (shared by both directions of an
/// undirected edge), then one keep/mask draw per feature dimension applied to
/// every node.
template <typename T>
GraphView<T> generate_view(const TemporalGraph<T>& g, double p_r, double p_m, Rng& rng, int view_index = 1) {
  if (!(p_r >= 0.0 && p_r <= 1.0) || !(p_m >= 0.0 && p_m <= 1.0)) {
    throw std::invalid_argument("generate_view: probabilities must lie in [0, 1], got p_r=" + std::to_string(p_r) +
                                " p_m=" + std::to_string(p_m));
  }
  GraphView<T> view;
  view.origin = &g;
  view.view_index = view_index;
  view.adjacency = g.adjacency;
  const std::size_t n = g.nodes();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (g.adjacency(i, j) == T(0) || (!g.directed && j < i)) continue;
      ++view.edges_before;
      if (rng.bernoulli(p_r)) {
        ++view.edges_removed;
        view.adjacency(i, j) = T(0);
        if (!g.directed) view.adjacency(j, i) = T(0);
      }
    }
  }
  const std::size_t f = g.features.value().cols();
  view.feature_mask.assign(f, 1);
  Tensor<T> mask = Tensor<T>::filled(Shape{f}, T(1));
  for (std::size_t d = 0; d < f; ++d) {
    if (rng.bernoulli(p_m)) {
      view.feature_mask[d] = 0;
      mask[d] = T(0);
    }
  }
  view.features = view.masked_dims() == 0 ? g.features
                                          : mul_rowwise(g.features, g.features.mutable_tape().constant(std::move(mask)));
  return view;
}

/// D^-1/2 (A + I) D^-1/2 with D the row sums of A + I.
template <typename T>
Tensor<T> normalized_adjacency(const Tensor<T>& a) {
  if (a.rank() != 2 || a.rows() != a.cols()) throw std::invalid_argument("normalized_adjacency: square matrix expected, got " + to_string(a.shape()));
  const std::size_t n = a.rows();
  Tensor<T> out = a;
  for (std::size_t i = 0; i < n; ++i) out(i, i) += T(1);
  std::vector<T> inv_sqrt(n);
  for (std::size_t i = 0; i < n; ++i) {
    T d = 0;
    for (std::size_t j = 0; j < n; ++j) d += out(i, j);
    inv_sqrt[i] = T(1) / std::sqrt(d);
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) *= inv_sqrt[i] * inv_sqrt[j];
  return out;
}

template <typename Slot>
struct GcnParamsT {
  Slot weight;  ///< (F, F_out)

  template <typename F>
  auto map(F&& f) const {
    using R = std::decay_t<decltype(f(weight))>;
    return GcnParamsT<R>{f(weight)};
  }

  template <typename Self, typename F>
  static void each(Self& self, const std::string& prefix, F&& f) {
    f(join_name(prefix, "weight"), self.weight);
  }
};

template <typename T>
using GcnParams = GcnParamsT<Param<T>>;
template <typename T>
using GcnVars = GcnParamsT<Var<T>>;

template <typename T>
GcnParams<T> init_gcn(Rng& rng, std::size_t in, std::size_t out) {
  return {uniform_tensor<T>(rng, Shape{in, out}, 1.0 / std::sqrt(static_cast<double>(in)))};
}

/// One graph convolution: relu(A_hat X W) on explicit features/adjacency.
template <typename T>
Var<T> graph_convolution(const Var<T>& features, const Tensor<T>& adjacency, const GcnVars<T>& p) {
  const auto& x = features.value();
  if (x.rank() != 2 || x.rows() != adjacency.rows()) detail::shape_error("gcn_forward", x.shape(), adjacency.shape());
  if (x.cols() != p.weight.shape()[0]) detail::shape_error("gcn_forward", x.shape(), p.weight.shape());
  auto& tape = features.mutable_tape();
  const Var<T> a_hat = tape.constant(normalized_adjacency(adjacency));
  return relu(matmul(a_hat, matmul(features, p.weight)));
}

template <typename T>
Var<T> gcn_forward(const GraphView<T>& view, const GcnVars<T>& p) {
  return graph_convolution(view.features, view.adjacency, p);
}

}  // namespace tcgl
