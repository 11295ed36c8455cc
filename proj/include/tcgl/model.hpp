#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcgl/autodiff.hpp"
#include "tcgl/contrast.hpp"
#include "tcgl/encoder.hpp"
#include "tcgl/orderhead.hpp"
#include "tcgl/sampler.hpp"
#include "tcgl/tgraph.hpp"

namespace tcgl {

/// Architecture and loss settings shared by training and evaluation.
struct ModelConfig {
  SnippetLayout layout;
  std::size_t channels = 1;
  std::size_t feature_dim = 32;  ///< encoder output F
  std::size_t gcn_dim = 32;      ///< GCN output F_out, also the order-head channel width
  std::size_t proj_dim = 0;      ///< projection width; 0 means gcn_dim
  double tau = 0.5;
  double alpha = 1.0;
  double beta = 1.0;
  double lambda_g = 1.0;
  double lambda_o = 1.0;
  double p_r = 0.2;   ///< view 1 edge removal
  double p_m = 0.1;   ///< view 1 feature masking
  double p_r2 = 0.0;  ///< view 2 edge removal
  double p_m2 = 0.0;  ///< view 2 feature masking
  GateActivation gate = GateActivation::relu;
  bool directed = false;
  bool random_offset = false;

  std::size_t projection_width() const { return proj_dim == 0 ? gcn_dim : proj_dim; }
  std::size_t classes() const { return factorial(layout.count); }

  void validate() const {
    const auto& L = layout;
    if (L.count < 2 || L.count > kMaxSnippets) throw std::invalid_argument("config: n must be in [2, 10]");
    if (L.length == 0) throw std::invalid_argument("config: l must be positive");
    if (L.framesets == 0 || L.length % L.framesets != 0) {
      throw std::invalid_argument("config: m=" + std::to_string(L.framesets) + " must divide l=" + std::to_string(L.length));
    }
    if (channels == 0 || feature_dim == 0 || gcn_dim == 0) throw std::invalid_argument("config: dimensions must be positive");
    if (gcn_dim % 2 != 0) throw std::invalid_argument("config: gcn_dim must be even (fused width is gcn_dim / 2)");
    if (!(tau > 0.0)) throw std::invalid_argument("config: tau must be positive");
    for (double p : {p_r, p_m, p_r2, p_m2}) {
      if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("config: view probabilities must lie in [0, 1]");
    }
  }
};

template <typename Slot>
struct ModelT {
  EncoderParamsT<Slot> encoder;
  GcnParamsT<Slot> gcn_inter;
  GcnParamsT<Slot> gcn_intra;
  ProjectionParamsT<Slot> proj_inter;
  ProjectionParamsT<Slot> proj_intra;
  OrderHeadParamsT<Slot> order;

  // Same traversal order as each().
  template <typename F>
  auto map(F&& f) const {
    using R = std::decay_t<decltype(f(gcn_inter.weight))>;
    ModelT<R> out;
    out.encoder = encoder.map(f);
    out.gcn_inter = gcn_inter.map(f);
    out.gcn_intra = gcn_intra.map(f);
    out.proj_inter = proj_inter.map(f);
    out.proj_intra = proj_intra.map(f);
    out.order = order.map(f);
    return out;
  }

  template <typename Self, typename F>
  static void each(Self& self, F&& f) {
    EncoderParamsT<Slot>::each(self.encoder, "encoder", f);
    GcnParamsT<Slot>::each(self.gcn_inter, "gcn.inter", f);
    GcnParamsT<Slot>::each(self.gcn_intra, "gcn.intra", f);
    ProjectionParamsT<Slot>::each(self.proj_inter, "proj.inter", f);
    ProjectionParamsT<Slot>::each(self.proj_intra, "proj.intra", f);
    OrderHeadParamsT<Slot>::each(self.order, "order", f);
  }
};

template <typename T>
using Model = ModelT<Param<T>>;
template <typename T>
using ModelVars = ModelT<Var<T>>;

template <typename T>
Model<T> init_model(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto& L = cfg.layout;
  Model<T> m;
  m.encoder = init_encoder<T>(rng, L.length, L.length / L.framesets, cfg.channels, cfg.feature_dim);
  m.gcn_inter = init_gcn<T>(rng, cfg.feature_dim, cfg.gcn_dim);
  m.gcn_intra = init_gcn<T>(rng, cfg.feature_dim, cfg.gcn_dim);
  m.proj_inter = init_projection<T>(rng, cfg.gcn_dim, cfg.projection_width());
  m.proj_intra = init_projection<T>(rng, cfg.gcn_dim, cfg.projection_width());
  m.order = init_order_head<T>(rng, L.count, cfg.gcn_dim);
  return m;
}

/// Records every parameter on `tape`, as gradient leaves when `trainable`.
template <typename T>
ModelVars<T> bind(Tape<T>& tape, const Model<T>& m, bool trainable = true) {
  return m.map([&](const Tensor<T>& t) { return trainable ? bind_leaf(tape, t) : tape.constant(t); });
}

template <typename T>
Model<T> gradients_of(const Gradients<T>& grads, const ModelVars<T>& vars) {
  return vars.map([&](const Var<T>& v) { return grads.grad(v); });
}

template <typename T>
Model<T> zeros_like(const Model<T>& m) {
  return m.map([](const Tensor<T>& t) { return Tensor<T>(t.shape()); });
}

/// Flat list of parameter tensors in traversal order.
template <typename T>
std::vector<Tensor<T>*> parameter_list(Model<T>& m) {
  std::vector<Tensor<T>*> out;
  Model<T>::each(m, [&](const std::string&, Tensor<T>& t) { out.push_back(&t); });
  return out;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> named_parameters(const Model<T>& m) {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  Model<T>::each(m, [&](const std::string& name, const Tensor<T>& t) { out.emplace_back(name, &t); });
  return out;
}

template <typename T>
std::size_t parameter_count(const Model<T>& m) {
  std::size_t n = 0;
  Model<T>::each(m, [&](const std::string&, const Tensor<T>& t) { n += t.size(); });
  return n;
}

/// Losses and prediction of one snippet tuple.
template <typename T>
struct SampleForward {
  Var<T> total;
  Var<T> graph;
  Var<T> order;
  Var<T> inter;
  std::vector<Var<T>> intra;
  Var<T> logits;
};

/// Full objective for one tuple. Graph views draw from `view_rng` in a fixed
/// order: inter view 1, inter view 2, then views 1 and 2 of each intra graph
/// in chronological order.
template <typename T>
SampleForward<T> forward_sample(const ModelVars<T>& vars, const ModelConfig& cfg, const SnippetTuple& tuple, Rng& view_rng) {
  const std::size_t n = tuple.size();
  const std::size_t m = cfg.layout.framesets;
  if (n != cfg.layout.count || tuple.frame_sets.size() != n) throw std::invalid_argument("forward: tuple does not match the configured n and m");
  const T tau = static_cast<T>(cfg.tau);

  // position of each chronological snippet inside the tuple
  std::vector<std::size_t> position(n);
  for (std::size_t j = 0; j < n; ++j) position[tuple.order[j]] = j;

  const Var<T> tuple_features = encode_batch(std::span<const VideoTensor>(tuple.snippets), vars.encoder);
  const Var<T> inter_x = gather_rows(tuple_features, position);
  const TemporalGraph<T> inter = build_chain_graph(inter_x, GraphKind::inter, 0, cfg.directed);
  const GraphView<T> inter_v1 = generate_view(inter, cfg.p_r, cfg.p_m, view_rng, 1);
  const GraphView<T> inter_v2 = generate_view(inter, cfg.p_r2, cfg.p_m2, view_rng, 2);
  const Var<T> u = gcn_forward(inter_v1, vars.gcn_inter);
  const Var<T> v = gcn_forward(inter_v2, vars.gcn_inter);

  SampleForward<T> out;
  out.inter = graph_loss(u, v, tau, vars.proj_inter);

  std::vector<VideoTensor> sets;
  sets.reserve(n * m);
  for (std::size_t k = 0; k < n; ++k) {
    const auto& fs = tuple.frame_sets[position[k]];
    if (fs.size() != m) throw std::invalid_argument("forward: snippet split into " + std::to_string(fs.size()) + " frame-sets, expected " + std::to_string(m));
    sets.insert(sets.end(), fs.begin(), fs.end());
  }
  const Var<T> set_features = encode_batch(std::span<const VideoTensor>(sets), vars.encoder);
  for (std::size_t k = 0; k < n; ++k) {
    std::vector<std::size_t> rows(m);
    for (std::size_t j = 0; j < m; ++j) rows[j] = k * m + j;
    const TemporalGraph<T> intra = build_chain_graph(gather_rows(set_features, rows), GraphKind::intra, k, cfg.directed);
    const GraphView<T> v1 = generate_view(intra, cfg.p_r, cfg.p_m, view_rng, 1);
    const GraphView<T> v2 = generate_view(intra, cfg.p_r2, cfg.p_m2, view_rng, 2);
    out.intra.push_back(graph_loss(gcn_forward(v1, vars.gcn_intra), gcn_forward(v2, vars.gcn_intra), tau, vars.proj_intra));
  }
  out.graph = total_graph_loss(std::span<const Var<T>>(out.intra), out.inter, static_cast<T>(cfg.alpha), static_cast<T>(cfg.beta));

  // Order head sees the clean-view inter embeddings in shuffled order.
  std::vector<Var<T>> shuffled;
  shuffled.reserve(n);
  for (std::size_t j = 0; j < n; ++j) shuffled.push_back(row(v, tuple.order[j]));
  out.logits = order_head_logits(std::span<const Var<T>>(shuffled), vars.order, cfg.gate);
  out.order = order_loss(out.logits, tuple.permutation_id);
  out.total = total_loss(out.graph, out.order, static_cast<T>(cfg.lambda_g), static_cast<T>(cfg.lambda_o));
  return out;
}

/// Draws the tuple for one video from `rng` (offset if enabled, then the
/// permutation).
inline SnippetTuple draw_tuple(const VideoTensor& video, const ModelConfig& cfg, Rng& rng) {
  const std::size_t offset = cfg.random_offset ? random_offset(rng, video.frames, cfg.layout) : 0;
  return tcgl::make_tuple(video, cfg.layout, std::nullopt, rng, offset);
}

/// Retrieval representation of a video: its chronologically middle snippet
/// through the encoder, then (unless backbone_only) through the inter-snippet
/// GCN as a single self-looped node.
template <typename T>
Tensor<T> video_embedding(const Model<T>& model, const ModelConfig& cfg, const VideoTensor& video, bool backbone_only = false) {
  const auto& L = cfg.layout;
  const auto starts = snippet_starts(video.frames, L.length, L.interval, L.count);
  const VideoTensor middle = video.clip(starts[L.count / 2], L.length);
  Tape<T> tape;
  const ModelVars<T> vars = bind(tape, model, false);
  const Var<T> stats = tape.constant(pooled_statistics<T>(middle));
  const Var<T> feature = encode_rows(stats, vars.encoder);
  if (backbone_only) return reshape(feature, Shape{feature.shape()[1]}).value();
  const Var<T> node = graph_convolution(feature, Tensor<T>(Shape{1, 1}), vars.gcn_inter);
  return reshape(node, Shape{node.shape()[1]}).value();
}

}  // namespace tcgl
