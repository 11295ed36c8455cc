#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tcgl/contrast.hpp"
#include "tcgl/gradcheck.hpp"
#include "tcgl/model.hpp"
#include "tcgl/tgraph.hpp"
#include "tcgl/trainer.hpp"

namespace tcgl {

struct VerifyCheck {
  std::string module;
  std::string operation;
  std::string measure;
  double value = 0;
  double limit = 0;
  bool passed = false;
  std::size_t skipped = 0;  ///< finite-difference coordinates not scored (relu kink inside the step)
  std::size_t scored = 0;
};

struct VerifyReport {
  std::vector<VerifyCheck> checks;
  double seconds = 0;

  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed) return false;
    return !checks.empty();
  }

  std::vector<VerifyCheck> failures() const {
    std::vector<VerifyCheck> out;
    for (const auto& c : checks)
      if (!c.passed) out.push_back(c);
    return out;
  }

  /// Worst value among checks of one module whose operation starts with `prefix`.
  double worst(const std::string& module, const std::string& prefix = "") const {
    double w = 0;
    for (const auto& c : checks)
      if (c.module == module && c.operation.rfind(prefix, 0) == 0) w = std::max(w, c.value);
    return w;
  }

  std::string text() const {
    std::ostringstream os;
    for (const auto& c : checks) {
      os << (c.passed ? "PASS " : "FAIL ") << c.module << '/' << c.operation << ' ' << c.measure << '=' << c.value
         << " (limit " << c.limit << ')';
      if (c.skipped > 0) os << " [" << c.skipped << " of " << c.skipped + c.scored << " coordinates straddle a relu kink]";
      os << '\n';
    }
    os << (passed() ? "all checks passed" : std::to_string(failures().size()) + " check(s) failed") << '\n';
    return os.str();
  }

  std::string csv() const {
    std::ostringstream os;
    os.precision(17);
    os << "module,operation,measure,value,limit,passed\n";
    for (const auto& c : checks) {
      os << c.module << ',' << c.operation << ',' << c.measure << ',' << c.value << ',' << c.limit << ',' << (c.passed ? 1 : 0) << '\n';
    }
    return os.str();
  }
};

/// Replaceable pieces, so a deliberately broken rule can be shown to fail.
struct VerifyHooks {
  std::function<Var<double>(const Var<double>&)> relu64 = [](const Var<double>& x) { return relu(x); };
  std::function<Var<float>(const Var<float>&)> relu32 = [](const Var<float>& x) { return relu(x); };
  std::function<GraphView<double>(const TemporalGraph<double>&, double, double, Rng&, int)> view =
      [](const TemporalGraph<double>& g, double p_r, double p_m, Rng& rng, int index) { return generate_view(g, p_r, p_m, rng, index); };
};

struct VerifyOptions {
  bool gradients = true;
  bool oracle = true;
  bool views = true;
  bool determinism = true;
  std::size_t oracle_cases = 100;
  std::size_t view_draws = 10000;
  std::uint64_t seed = 7;
};

inline constexpr double kGradTolerance64 = 1e-4;
inline constexpr double kGradTolerance32 = 5e-2;
inline constexpr double kOracleTolerance = 1e-10;
inline constexpr double kViewRateTolerance = 0.02;

namespace verify_detail {

template <typename T>
Tensor<T> random_tensor(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(s));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

/// <w, y> with fixed random w, so every output coordinate matters.
template <typename T>
Var<T> probe(const Var<T>& y, std::uint64_t seed) {
  Rng rng(seed);
  const Shape s = y.shape().empty() ? Shape{} : y.shape();
  if (s.empty()) return y;
  Tensor<T> w = random_tensor<T>(rng, s);
  return sum(hadamard(y, y.mutable_tape().constant(std::move(w))));
}

template <typename T>
struct OpCase {
  std::string name;
  std::vector<Tensor<T>> inputs;
  TapeFunction<T> fn;
};

/// Small configuration used for the composite gradient check.
inline ModelConfig tiny_model_config() {
  ModelConfig c;
  c.layout = SnippetLayout{4, 2, 3, 2};
  c.feature_dim = 6;
  c.gcn_dim = 6;
  return c;
}

template <typename T>
std::vector<OpCase<T>> op_cases(Rng& rng, const std::function<Var<T>(const Var<T>&)>& relu_op) {
  std::vector<OpCase<T>> cases;
  auto push = [&](std::string name, std::vector<Tensor<T>> in, TapeFunction<T> fn) {
    cases.push_back({std::move(name), std::move(in), std::move(fn)});
  };
  auto mat = [&](std::size_t r, std::size_t c) { return random_tensor<T>(rng, Shape{r, c}); };
  auto vec = [&](std::size_t n) { return random_tensor<T>(rng, Shape{n}); };
  // Keeps relu/abs-like kinks away from the perturbation window.
  auto away_from_zero = [&](Tensor<T> t) {
    for (auto& v : t.data()) v = v >= T(0) ? v + T(0.2) : v - T(0.2);
    return t;
  };
  using S = std::span<const Var<T>>;
  push("matmul", {mat(3, 4), mat(4, 2)}, [](Tape<T>&, S x) { return probe(matmul(x[0], x[1]), 1); });
  push("transpose", {mat(3, 4)}, [](Tape<T>&, S x) { return probe(transpose(x[0]), 2); });
  push("add", {mat(2, 3), mat(2, 3)}, [](Tape<T>&, S x) { return probe(add(x[0], x[1]), 3); });
  push("sub", {mat(2, 3), mat(2, 3)}, [](Tape<T>&, S x) { return probe(sub(x[0], x[1]), 4); });
  push("hadamard", {mat(2, 3), mat(2, 3)}, [](Tape<T>&, S x) { return probe(hadamard(x[0], x[1]), 5); });
  push("add_rowwise", {mat(3, 4), vec(4)}, [](Tape<T>&, S x) { return probe(add_rowwise(x[0], x[1]), 6); });
  push("mul_rowwise", {mat(3, 4), vec(4)}, [](Tape<T>&, S x) { return probe(mul_rowwise(x[0], x[1]), 7); });
  push("scale", {mat(2, 3)}, [](Tape<T>&, S x) { return probe(scale(x[0], T(-1.7)), 8); });
  push("add_scalar", {vec(5)}, [](Tape<T>&, S x) { return probe(add_scalar(x[0], T(0.3)), 9); });
  push("relu", {away_from_zero(mat(3, 4))}, [relu_op](Tape<T>&, S x) { return probe(relu_op(x[0]), 10); });
  push("sigmoid", {mat(3, 4)}, [](Tape<T>&, S x) { return probe(sigmoid(x[0]), 11); });
  push("exp", {mat(2, 3)}, [](Tape<T>&, S x) { return probe(exp(x[0]), 12); });
  push("log", {random_tensor<T>(rng, Shape{2, 3}, 0.5, 2.0)}, [](Tape<T>&, S x) { return probe(log(x[0]), 13); });
  push("l2_normalize", {mat(3, 4)}, [](Tape<T>&, S x) { return probe(l2_normalize(x[0]), 14); });
  push("softmax", {mat(3, 4)}, [](Tape<T>&, S x) { return probe(softmax(x[0]), 15); });
  push("log_softmax", {vec(6)}, [](Tape<T>&, S x) { return probe(log_softmax(x[0]), 16); });
  push("logsumexp", {mat(3, 5)}, [](Tape<T>&, S x) { return probe(logsumexp(x[0]), 17); });
  push("sum", {mat(2, 3)}, [](Tape<T>&, S x) { return sum(x[0]); });
  push("mean", {mat(2, 3)}, [](Tape<T>&, S x) { return mean(x[0]); });
  push("concat", {vec(3), vec(2)}, [](Tape<T>&, S x) { return probe(concat(x), 18); });
  push("stack", {vec(3), vec(3)}, [](Tape<T>&, S x) { return probe(stack(x), 19); });
  push("reshape", {mat(2, 3)}, [](Tape<T>&, S x) { return probe(reshape(x[0], Shape{6}), 20); });
  push("gather", {vec(5)}, [](Tape<T>&, S x) { return probe(gather(x[0], {4, 0, 4, 2}), 21); });
  push("gather_rows", {mat(4, 3)}, [](Tape<T>&, S x) { return probe(gather_rows(x[0], {3, 1, 1}), 22); });
  push("row", {mat(4, 3)}, [](Tape<T>&, S x) { return probe(row(x[0], 2), 23); });

  // Composite layers of the model.
  push("gcn_forward", {mat(4, 5), away_from_zero(mat(5, 6))}, [](Tape<T>&, S x) {
    return probe(graph_convolution(x[0], chain_adjacency<T>(4), GcnVars<T>{x[1]}), 24);
  });
  push("graph_loss", {mat(4, 6), mat(4, 6), mat(6, 5), mat(5, 5)}, [](Tape<T>&, S x) {
    return graph_loss(x[0], x[1], T(0.5), ProjectionVars<T>{x[2], x[3]});
  });
  push("order_head", {vec(6), vec(6), vec(6), mat(18, 3), vec(3), mat(3, 6), vec(6), mat(18, 9), vec(9), mat(9, 6), vec(6)},
      [](Tape<T>&, S x) {
        OrderHeadVars<T> p{{x[3], x[4]}, {x[5], x[6]}, {x[7], x[8]}, {x[9], x[10]}};
        return order_loss(order_head_logits(x.subspan(0, 3), p), 4);
      });
  return cases;
}

template <typename T>
VerifyCheck composite_check(std::uint64_t seed) {
  const ModelConfig cfg = tiny_model_config();
  Rng rng(seed);
  const Model<T> model = init_model<T>(cfg, rng);
  const VideoTensor video = gen_synthetic_video(seed, synthetic_label(1), cfg.layout.required_frames(), 1, 4, 4);
  const SnippetTuple tuple = tcgl::make_tuple(video, cfg.layout, 3, rng, 0);
  std::vector<Tensor<T>> inputs;
  Model<T>::each(model, [&](const std::string&, const Tensor<T>& t) { inputs.push_back(t); });
  const std::uint64_t view_seed = derive_seed(seed, 99);
  TapeFunction<T> fn = [&](Tape<T>&, std::span<const Var<T>> x) {
    std::size_t i = 0;
    const ModelVars<T> vars = model.map([&](const Tensor<T>&) { return x[i++]; });
    Rng view_rng(view_seed);
    return forward_sample(vars, cfg, tuple, view_rng).total;
  };
  const auto eps = default_epsilons<T>();
  const GradCheckReport r = finite_diff_check<T>(fn, inputs, std::span<const T>(eps));
  const double limit = sizeof(T) == 8 ? kGradTolerance64 : kGradTolerance32;
  return {"model", std::string("total_objective_") + (sizeof(T) == 8 ? "f64" : "f32"), "max_rel_error", r.max_rel_error, limit,
          r.max_rel_error < limit && r.coordinates_checked > 0 && r.coordinates_skipped * 20 <= r.coordinates_checked,
          r.coordinates_skipped, r.coordinates_checked};
}

template <typename T>
void gradient_suite(VerifyReport& rep, std::uint64_t seed, const std::function<Var<T>(const Var<T>&)>& relu_op) {
  Rng rng(seed);
  const auto eps = default_epsilons<T>();
  const double limit = sizeof(T) == 8 ? kGradTolerance64 : kGradTolerance32;
  const std::string suffix = sizeof(T) == 8 ? "_f64" : "_f32";
  for (const auto& c : op_cases<T>(rng, relu_op)) {
    GradCheckReport r;
    try {
      r = finite_diff_check<T>(c.fn, c.inputs, std::span<const T>(eps));
    } catch (const std::exception&) {
      r.max_rel_error = std::numeric_limits<double>::infinity();
    }
    // A check that scored nothing proves nothing.
    const bool ok = r.max_rel_error < limit && r.coordinates_checked > 0 && r.coordinates_skipped * 20 <= r.coordinates_checked;
    rep.checks.push_back({"diffcore", c.name + suffix, "max_rel_error", r.max_rel_error, limit, ok, r.coordinates_skipped,
                          r.coordinates_checked});
  }
  rep.checks.push_back(composite_check<T>(seed));
}

/// Independent double-loop evaluation of the contrastive objective.
struct ContrastOracle {
  std::vector<std::vector<double>> w1, w2;
  double tau;

  std::vector<double> g(const std::vector<double>& x) const {
    std::vector<double> h(w1[0].size(), 0.0), out(w2[0].size(), 0.0);
    for (std::size_t j = 0; j < h.size(); ++j) {
      for (std::size_t i = 0; i < x.size(); ++i) h[j] += x[i] * w1[i][j];
      h[j] = std::max(h[j], 0.0);
    }
    for (std::size_t j = 0; j < out.size(); ++j)
      for (std::size_t i = 0; i < h.size(); ++i) out[j] += h[i] * w2[i][j];
    return out;
  }

  double phi(const std::vector<double>& a, const std::vector<double>& b) const {
    const auto ga = g(a), gb = g(b);
    double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < ga.size(); ++i) {
      dot += ga[i] * gb[i];
      na += ga[i] * ga[i];
      nb += gb[i] * gb[i];
    }
    return dot / (std::sqrt(na + kNormGuard) * std::sqrt(nb + kNormGuard));
  }

  double pair(const std::vector<std::vector<double>>& u, const std::vector<std::vector<double>>& v, std::size_t i) const {
    const double pos = std::exp(phi(u[i], v[i]) / tau);
    double denom = 0;
    for (std::size_t k = 0; k < u.size(); ++k) denom += std::exp(phi(u[i], v[k]) / tau);
    for (std::size_t k = 0; k < u.size(); ++k)
      if (k != i) denom += std::exp(phi(u[i], u[k]) / tau);
    return -std::log(pos / denom);
  }

  double graph(const std::vector<std::vector<double>>& u, const std::vector<std::vector<double>>& v) const {
    double s = 0;
    for (std::size_t i = 0; i < u.size(); ++i) s += pair(u, v, i) + pair(v, u, i);
    return s / (2.0 * static_cast<double>(u.size()));
  }
};

inline std::vector<std::vector<double>> rows_of(const Tensor<double>& t) {
  std::vector<std::vector<double>> out(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = 0; c < t.cols(); ++c) out[r][c] = t(r, c);
  return out;
}

inline void oracle_suite(VerifyReport& rep, std::uint64_t seed, std::size_t cases) {
  Rng rng(derive_seed(seed, 0x0AC1E));
  double worst_pair = 0, worst_graph = 0, worst_phi = 0;
  for (std::size_t c = 0; c < cases; ++c) {
    const std::size_t n = 2 + static_cast<std::size_t>(rng.below(7));
    const std::size_t f = 3 + static_cast<std::size_t>(rng.below(6));
    const std::size_t fp = 2 + static_cast<std::size_t>(rng.below(6));
    const double tau = rng.uniform(0.1, 1.0);
    const Tensor<double> U = random_tensor<double>(rng, Shape{n, f}), V = random_tensor<double>(rng, Shape{n, f});
    const Tensor<double> W1 = random_tensor<double>(rng, Shape{f, fp}), W2 = random_tensor<double>(rng, Shape{fp, fp});
    const ContrastOracle oracle{rows_of(W1), rows_of(W2), tau};
    const auto u = rows_of(U), v = rows_of(V);

    Tape<double> tape;
    const Var<double> uv = tape.constant(U), vv = tape.constant(V);
    const ProjectionVars<double> p{tape.constant(W1), tape.constant(W2)};
    auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
    worst_graph = std::max(worst_graph, rel(graph_loss(uv, vv, tau, p).value().item(), oracle.graph(u, v)));
    for (std::size_t i = 0; i < n; ++i) {
      worst_pair = std::max(worst_pair, rel(pairwise_loss(uv, vv, i, tau, p).value().item(), oracle.pair(u, v, i)));
      worst_pair = std::max(worst_pair, rel(pairwise_loss(vv, uv, i, tau, p).value().item(), oracle.pair(v, u, i)));
      worst_phi = std::max(worst_phi, rel(relation(row(uv, i), row(vv, i), p).value().item(), oracle.phi(u[i], v[i])));
    }
  }
  rep.checks.push_back({"contrast", "relation", "max_deviation", worst_phi, kOracleTolerance, worst_phi < kOracleTolerance});
  rep.checks.push_back({"contrast", "pairwise_loss", "max_deviation", worst_pair, kOracleTolerance, worst_pair < kOracleTolerance});
  rep.checks.push_back({"contrast", "graph_loss", "max_deviation", worst_graph, kOracleTolerance, worst_graph < kOracleTolerance});
}

inline void view_suite(VerifyReport& rep, std::uint64_t seed, std::size_t draws, const VerifyHooks& hooks) {
  const double p_r = 0.2, p_m = 0.1;
  Rng rng(derive_seed(seed, 0x71E5));
  Tape<double> tape;
  const auto x = tape.constant(random_tensor<double>(rng, Shape{8, 16}));
  const TemporalGraph<double> g = build_chain_graph(x, GraphKind::inter);
  std::size_t edges = 0, removed = 0, dims = 0, masked = 0;
  for (std::size_t d = 0; d < draws; ++d) {
    const GraphView<double> v = hooks.view(g, p_r, p_m, rng, 1);
    const Tensor<double>& a = v.adjacency;
    for (std::size_t i = 0; i < g.nodes(); ++i)
      for (std::size_t j = i + 1; j < g.nodes(); ++j) {
        if (g.adjacency(i, j) == 0.0) continue;
        ++edges;
        removed += a(i, j) == 0.0 ? 1 : 0;
      }
    const Tensor<double>& f = v.features.value();
    for (std::size_t c = 0; c < f.cols(); ++c) {
      ++dims;
      bool zero = true;
      for (std::size_t r = 0; r < f.rows(); ++r) zero = zero && f(r, c) == 0.0;
      masked += zero ? 1 : 0;
    }
  }
  const double er = std::abs(static_cast<double>(removed) / static_cast<double>(edges) - p_r);
  const double mr = std::abs(static_cast<double>(masked) / static_cast<double>(dims) - p_m);
  rep.checks.push_back({"tgraph", "edge_removal_rate", "abs_deviation", er, kViewRateTolerance, er <= kViewRateTolerance});
  rep.checks.push_back({"tgraph", "feature_mask_rate", "abs_deviation", mr, kViewRateTolerance, mr <= kViewRateTolerance});

  std::size_t mismatches = 0;
  for (std::size_t d = 0; d < 100; ++d) {
    const GraphView<double> v2 = hooks.view(g, 0.0, 0.0, rng, 2);
    const bool same = v2.adjacency == g.adjacency && v2.features.value() == g.features.value();
    mismatches += same ? 0 : 1;
  }
  rep.checks.push_back({"tgraph", "clean_view_identity", "mismatches", static_cast<double>(mismatches), 0.0, mismatches == 0});
}

inline void determinism_suite(VerifyReport& rep, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.model = tiny_model_config();
  cfg.epochs = 2;
  cfg.batch_size = 3;
  cfg.lr = 0.01;
  cfg.seed = seed;
  cfg.val_fraction = 0.25;
  const Dataset data = generate_dataset(8, 4, seed, VideoDims{cfg.model.layout.required_frames(), 1, 4, 4});
  const auto a = train<double>(cfg, data);
  const auto b = train<double>(cfg, data);
  cfg.threads = 3;
  const auto c = train<double>(cfg, data);
  auto same = [](const TrainResult<double>& x, const TrainResult<double>& y) {
    bool eq = x.history == y.history;
    const auto px = named_parameters(x.last.params), py = named_parameters(y.last.params);
    for (std::size_t i = 0; i < px.size(); ++i) eq = eq && *px[i].second == *py[i].second;
    return eq;
  };
  rep.checks.push_back({"trainer", "repeat_run", "differs", same(a, b) ? 0.0 : 1.0, 0.0, same(a, b)});
  rep.checks.push_back({"trainer", "thread_count", "differs", same(a, c) ? 0.0 : 1.0, 0.0, same(a, c)});
}

}  // namespace verify_detail

/// Gradient, oracle, view-statistics and determinism checks in one report.
inline VerifyReport verify_all(const VerifyOptions& opt = {}, const VerifyHooks& hooks = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  VerifyReport rep;
  if (opt.gradients) {
    verify_detail::gradient_suite<double>(rep, opt.seed, hooks.relu64);
    verify_detail::gradient_suite<float>(rep, opt.seed, hooks.relu32);
  }
  if (opt.oracle) verify_detail::oracle_suite(rep, opt.seed, opt.oracle_cases);
  if (opt.views) verify_detail::view_suite(rep, opt.seed, opt.view_draws, hooks);
  if (opt.determinism) verify_detail::determinism_suite(rep, opt.seed);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return rep;
}

}  // namespace tcgl
