#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tcgl/tensor.hpp"

namespace tcgl {

template <typename T>
class Tape;
template <typename T>
class Gradients;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(const Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tape<T>& tape() const {
    if (!tape_) throw std::logic_error("var: not bound to a tape");
    return *tape_;
  }
  Tape<T>& mutable_tape() const { return const_cast<Tape<T>&>(tape()); }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape().value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape().requires_grad(id_); }

 private:
  const Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

struct TapeDiagnostics {
  /// l2_normalize calls whose input norm fell under the 1e-12 guard.
  std::size_t guarded_normalizations = 0;
  /// Running hash of which relu inputs were positive. Two evaluations with the
  /// same hash lie on the same linear piece of every relu.
  std::uint64_t relu_pattern = 0xCBF29CE484222325ULL;
};

/// Define-by-run record of operations. Node ids are assigned in creation
/// order, so inputs always precede their consumers and the backward sweep is a
/// plain reverse walk.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(const Tape&, std::span<const T>, Gradients<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value) {
    const bool rg = value.requires_grad();
    nodes_.push_back(Node{std::move(value), {}, {}, rg});
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) {
    value.set_requires_grad(false);
    return leaf(std::move(value));
  }

  /// Appends an op output. The backward rule is kept only if some input
  /// requires a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    return record(std::move(value), std::span<const Var<T>>(inputs.begin(), inputs.size()), std::move(fn));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> inputs, BackwardFn fn) {
    bool rg = false;
    std::vector<std::size_t> ids;
    ids.reserve(inputs.size());
    for (const auto& in : inputs) {
      if (&in.tape() != this) throw std::invalid_argument("tape: input recorded on a different tape");
      ids.push_back(in.id());
      rg = rg || nodes_[in.id()].requires_grad;
    }
    value.set_requires_grad(rg);
    nodes_.push_back(Node{std::move(value), std::move(ids), rg ? std::move(fn) : BackwardFn{}, rg});
    return Var<T>(this, nodes_.size() - 1);
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  const BackwardFn& backward_fn(std::size_t id) const { return nodes_.at(id).backward; }
  std::size_t size() const { return nodes_.size(); }

  TapeDiagnostics& diagnostics() const { return diagnostics_; }

 private:
  struct Node {
    Tensor<T> value;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::deque<Node> nodes_;
  mutable TapeDiagnostics diagnostics_;
};

/// Gradient buffers indexed by tape node, allocated on first touch.
template <typename T>
class Gradients {
 public:
  explicit Gradients(const Tape<T>& tape) : tape_(&tape), grads_(tape.size()) {}

  bool wants(std::size_t id) const { return tape_->requires_grad(id); }
  bool has(std::size_t id) const { return id < grads_.size() && !grads_[id].empty(); }

  std::span<T> slot(std::size_t id) {
    auto& g = grads_.at(id);
    if (g.empty()) g.assign(tape_->value(id).size(), T(0));
    return g;
  }

  /// Accumulated gradient for `v`; zeros when `v` did not reach the loss.
  Tensor<T> grad(const Var<T>& v) const {
    const auto& shape = tape_->value(v.id()).shape();
    if (!has(v.id())) return Tensor<T>(shape);
    return Tensor<T>(shape, grads_[v.id()]);
  }

  Tensor<T> operator[](const Var<T>& v) const { return grad(v); }

 private:
  const Tape<T>* tape_;
  std::vector<std::vector<T>> grads_;
};

template <typename T>
Gradients<T> backward(const Var<T>& loss) {
  const Tape<T>& tape = loss.tape();
  if (loss.value().size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  Gradients<T> grads(tape);
  if (!tape.requires_grad(loss.id())) return grads;
  grads.slot(loss.id())[0] = T(1);
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const auto& fn = tape.backward_fn(id);
    if (!fn || !grads.has(id)) continue;
    // Inputs have smaller ids, so this span stays untouched while fn runs.
    std::span<const T> out_grad = grads.slot(id);
    fn(tape, out_grad, grads);
  }
  return grads;
}

namespace detail {

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a) {
  throw std::invalid_argument(std::string(op) + ": unsupported shape " + to_string(a));
}

[[noreturn]] inline void shape_error(std::string_view op, const Shape& a, const Shape& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
}

template <typename T>
Tape<T>& tape_of(const Var<T>& a, const Var<T>& b) {
  if (&a.tape() != &b.tape()) throw std::invalid_argument("ops: operands live on different tapes");
  return a.mutable_tape();
}

template <typename T, typename Fwd, typename Bwd>
Var<T> unary_elementwise(const Var<T>& x, Fwd fwd, Bwd dydx) {
  const Tensor<T>& in = x.value();
  Tensor<T> out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();
  return x.mutable_tape().record(std::move(out), {x},
                                 [ix, iy, dydx](const Tape<T>& t, std::span<const T> g, Gradients<T>& grads) {
                                   const auto& xv = t.value(ix);
                                   const auto& yv = t.value(iy);
                                   auto gx = grads.slot(ix);
                                   for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * dydx(xv[i], yv[i]);
                                 });
}

/// Rows of a rank<=2 tensor; a vector or scalar is one row.
inline std::pair<std::size_t, std::size_t> row_layout(const Shape& s) {
  if (s.size() == 2) return {s[0], s[1]};
  if (s.size() == 1) return {1, s[0]};
  return {1, 1};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b);
  const auto& A = a.value();
  const auto& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0]) detail::shape_error("matmul", A.shape(), B.shape());
  const std::size_t r = A.shape()[0], k = A.shape()[1], c = B.shape()[1];
  Tensor<T> out(Shape{r, c});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = A[i * k + p];
      for (std::size_t j = 0; j < c; ++j) out[i * c + j] += aip * B[p * c + j];
    }
  }
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [=](const Tape<T>& t, std::span<const T> g, Gradients<T>& grads) {
    const auto& Av = t.value(ia);
    const auto& Bv = t.value(ib);
    if (grads.wants(ia)) {
      auto ga = grads.slot(ia);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          T acc = 0;
          for (std::size_t j = 0; j < c; ++j) acc += g[i * c + j] * Bv[p * c + j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (grads.wants(ib)) {
      auto gb = grads.slot(ib);
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          const T aip = Av[i * k + p];
          for (std::size_t j = 0; j < c; ++j) gb[p * c + j] += aip * g[i * c + j];
        }
      }
    }
  });
}

template <typename T>
Var<T> transpose(const Var<T>& x) {
  const auto& X = x.value();
  if (X.rank() != 2) detail::shape_error("transpose", X.shape());
  const std::size_t r = X.shape()[0], c = X.shape()[1];
  Tensor<T> out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = X[i * c + j];
  const std::size_t ix = x.id();
  return x.mutable_tape().record(std::move(out), {x}, [=](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
    auto gx = grads.slot(ix);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
  });
}

// ---------------------------------------------------------------------------
// Elementwise binary

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b);
  if (a.shape() != b.shape()) detail::shape_error("add", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [=](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
    if (grads.wants(ia)) {
      auto ga = grads.slot(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (grads.wants(ib)) {
      auto gb = grads.slot(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b);
  if (a.shape() != b.shape()) detail::shape_error("sub", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [=](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
    if (grads.wants(ia)) {
      auto ga = grads.slot(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    }
    if (grads.wants(ib)) {
      auto gb = grads.slot(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> hadamard(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b);
  if (a.shape() != b.shape()) detail::shape_error("hadamard", a.shape(), b.shape());
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {a, b}, [=](const Tape<T>& t, std::span<const T> g, Gradients<T>& grads) {
    const auto& av = t.value(ia);
    const auto& bv = t.value(ib);
    if (grads.wants(ia)) {
      auto ga = grads.slot(ia);
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (grads.wants(ib)) {
      auto gb = grads.slot(ib);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

/// m[r, c] + v[c] for every row r.
template <typename T>
Var<T> add_rowwise(const Var<T>& m, const Var<T>& v) {
  auto& tape = detail::tape_of(m, v);
  const auto [rows, cols] = detail::row_layout(m.shape());
  if (m.value().rank() == 0 || v.value().rank() != 1 || v.shape()[0] != cols) detail::shape_error("add_rowwise", m.shape(), v.shape());
  Tensor<T> out(m.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = m.value()[r * cols + c] + v.value()[c];
  const std::size_t im = m.id(), iv = v.id();
  return tape.record(std::move(out), {m, v}, [=, rows = rows, cols = cols](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
    if (grads.wants(im)) {
      auto gm = grads.slot(im);
      for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
    }
    if (grads.wants(iv)) {
      auto gv = grads.slot(iv);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
    }
  });
}

/// m[r, c] * v[c] for every row r.
template <typename T>
Var<T> mul_rowwise(const Var<T>& m, const Var<T>& v) {
  auto& tape = detail::tape_of(m, v);
  const auto [rows, cols] = detail::row_layout(m.shape());
  if (m.value().rank() == 0 || v.value().rank() != 1 || v.shape()[0] != cols) detail::shape_error("mul_rowwise", m.shape(), v.shape());
  Tensor<T> out(m.shape());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = m.value()[r * cols + c] * v.value()[c];
  const std::size_t im = m.id(), iv = v.id();
  return tape.record(std::move(out), {m, v}, [=, rows = rows, cols = cols](const Tape<T>& t, std::span<const T> g, Gradients<T>& grads) {
    const auto& mv = t.value(im);
    const auto& vv = t.value(iv);
    if (grads.wants(im)) {
      auto gm = grads.slot(im);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gm[r * cols + c] += g[r * cols + c] * vv[c];
    }
    if (grads.wants(iv)) {
      auto gv = grads.slot(iv);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c] * mv[r * cols + c];
    }
  });
}

// ---------------------------------------------------------------------------
// Scalar ops

template <typename T>
Var<T> scale(const Var<T>& x, T s) {
  return detail::unary_elementwise(x, [s](T v) { return v * s; }, [s](T, T) { return s; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, T s) {
  return detail::unary_elementwise(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

// ---------------------------------------------------------------------------
// Elementwise unary

/// Subgradient at 0 is 0.
template <typename T>
Var<T> relu(const Var<T>& x) {
  auto& h = x.tape().diagnostics().relu_pattern;
  for (T v : x.value().data()) h = (h ^ (v > T(0) ? 1U : 2U)) * 0x100000001B3ULL;
  return detail::unary_elementwise(x, [](T v) { return v > T(0) ? v : T(0); },
                                   [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return detail::unary_elementwise(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
                                   [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(const Var<T>& x) {
  return detail::unary_elementwise(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(const Var<T>& x) {
  return detail::unary_elementwise(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// ---------------------------------------------------------------------------
// Row-wise normalizations. A rank-2 tensor is treated row by row, a vector as
// a single row.

inline constexpr double kNormGuard = 1e-12;

/// x / sqrt(|x|^2 + 1e-12), per row.
template <typename T>
Var<T> l2_normalize(const Var<T>& x) {
  const auto& X = x.value();
  if (X.rank() == 0) detail::shape_error("l2_normalize", X.shape());
  const auto [rows, cols] = detail::row_layout(X.shape());
  Tensor<T> out(X.shape());
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T ss = 0;
    for (std::size_t c = 0; c < cols; ++c) ss += X[r * cols + c] * X[r * cols + c];
    if (ss < T(kNormGuard * kNormGuard)) ++x.tape().diagnostics().guarded_normalizations;
    norms[r] = std::sqrt(ss + T(kNormGuard));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = X[r * cols + c] / norms[r];
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();
  return x.mutable_tape().record(
      std::move(out), {x},
      [=, rows = rows, cols = cols, norms = std::move(norms)](const Tape<T>& t, std::span<const T> g, Gradients<T>& grads) {
        const auto& Y = t.value(iy);
        auto gx = grads.slot(ix);
        for (std::size_t r = 0; r < rows; ++r) {
          T gy = 0;
          for (std::size_t c = 0; c < cols; ++c) gy += g[r * cols + c] * Y[r * cols + c];
          for (std::size_t c = 0; c < cols; ++c) gx[r * cols + c] += (g[r * cols + c] - Y[r * cols + c] * gy) / norms[r];
        }
      });
}

template <typename T>
Var<T> softmax(const Var<T>& x) {
  const auto& X = x.value();
  if (X.rank() == 0) detail::shape_error("softmax", X.shape());
  const auto [rows, cols] = detail::row_layout(X.shape());
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = X.data().data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += (out[r * cols + c] = std::exp(row[c] - mx));
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] /= s;
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();
  return x.mutable_tape().record(std::move(out), {x},
                                 [=, rows = rows, cols = cols](const Tape<T>& t, std::span<const T> g, Gradients<T>& grads) {
                                   const auto& Y = t.value(iy);
                                   auto gx = grads.slot(ix);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                     T gy = 0;
                                     for (std::size_t c = 0; c < cols; ++c) gy += g[r * cols + c] * Y[r * cols + c];
                                     for (std::size_t c = 0; c < cols; ++c)
                                       gx[r * cols + c] += Y[r * cols + c] * (g[r * cols + c] - gy);
                                   }
                                 });
}

template <typename T>
Var<T> log_softmax(const Var<T>& x) {
  const auto& X = x.value();
  if (X.rank() == 0) detail::shape_error("log_softmax", X.shape());
  const auto [rows, cols] = detail::row_layout(X.shape());
  Tensor<T> out(X.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = X.data().data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    const T lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = row[c] - lse;
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();
  return x.mutable_tape().record(std::move(out), {x},
                                 [=, rows = rows, cols = cols](const Tape<T>& t, std::span<const T> g, Gradients<T>& grads) {
                                   const auto& Y = t.value(iy);
                                   auto gx = grads.slot(ix);
                                   for (std::size_t r = 0; r < rows; ++r) {
                                     T gs = 0;
                                     for (std::size_t c = 0; c < cols; ++c) gs += g[r * cols + c];
                                     for (std::size_t c = 0; c < cols; ++c)
                                       gx[r * cols + c] += g[r * cols + c] - std::exp(Y[r * cols + c]) * gs;
                                   }
                                 });
}

/// log(sum(exp(row))) with max subtraction. Matrix -> vector of rows,
/// vector -> scalar.
template <typename T>
Var<T> logsumexp(const Var<T>& x) {
  const auto& X = x.value();
  if (X.rank() == 0) detail::shape_error("logsumexp", X.shape());
  const auto [rows, cols] = detail::row_layout(X.shape());
  Tensor<T> out = X.rank() == 2 ? Tensor<T>(Shape{rows}) : Tensor<T>();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = X.data().data() + r * cols;
    const T mx = *std::max_element(row, row + cols);
    T s = 0;
    for (std::size_t c = 0; c < cols; ++c) s += std::exp(row[c] - mx);
    out[r] = mx + std::log(s);
  }
  const std::size_t ix = x.id();
  const std::size_t iy = x.tape().size();
  return x.mutable_tape().record(std::move(out), {x},
                                 [=, rows = rows, cols = cols](const Tape<T>& t, std::span<const T> g, Gradients<T>& grads) {
                                   const auto& Xv = t.value(ix);
                                   const auto& Y = t.value(iy);
                                   auto gx = grads.slot(ix);
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t c = 0; c < cols; ++c)
                                       gx[r * cols + c] += g[r] * std::exp(Xv[r * cols + c] - Y[r]);
                                 });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Var<T> sum(const Var<T>& x) {
  T s = 0;
  for (T v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.mutable_tape().record(Tensor<T>::scalar(s), {x}, [=](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
    auto gx = grads.slot(ix);
    for (auto& v : gx) v += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const T n = static_cast<T>(x.value().size());
  T s = 0;
  for (T v : x.value().data()) s += v;
  const std::size_t ix = x.id();
  return x.mutable_tape().record(Tensor<T>::scalar(s / n), {x}, [=](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
    auto gx = grads.slot(ix);
    for (auto& v : gx) v += g[0] / n;
  });
}

// ---------------------------------------------------------------------------
// Structural ops

/// Vectors concatenate end to end; matrices with equal column counts stack
/// their rows.
template <typename T>
Var<T> concat(std::span<const Var<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  auto& tape = xs.front().mutable_tape();
  const std::size_t rank = xs.front().value().rank();
  if (rank == 0) detail::shape_error("concat", xs.front().shape());
  std::size_t total = 0;
  std::size_t rows = 0;
  const std::size_t cols = xs.front().value().cols();
  for (const auto& x : xs) {
    if (&x.tape() != &tape) throw std::invalid_argument("concat: operands live on different tapes");
    if (x.value().rank() != rank || (rank == 2 && x.value().cols() != cols))
      detail::shape_error("concat", xs.front().shape(), x.shape());
    total += x.value().size();
    rows += x.value().rows();
  }
  Tensor<T> out(rank == 1 ? Shape{total} : Shape{rows, cols});
  std::vector<std::size_t> ids, offsets;
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.value().data().begin(), x.value().data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(off));
    ids.push_back(x.id());
    offsets.push_back(off);
    off += x.value().size();
  }
  return tape.record(std::move(out), xs, [ids, offsets](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!grads.wants(ids[k])) continue;
      auto gx = grads.slot(ids[k]);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[offsets[k] + i];
    }
  });
}

template <typename T>
Var<T> concat(std::initializer_list<Var<T>> xs) {
  return concat(std::span<const Var<T>>(xs.begin(), xs.size()));
}

/// Equal-length vectors become the rows of a matrix.
template <typename T>
Var<T> stack(std::span<const Var<T>> xs) {
  if (xs.empty()) throw std::invalid_argument("stack: no inputs");
  for (const auto& x : xs) {
    if (x.value().rank() != 1 || x.shape() != xs.front().shape()) detail::shape_error("stack", xs.front().shape(), x.shape());
  }
  Var<T> flat = concat(xs);
  return reshape(flat, Shape{xs.size(), xs.front().shape()[0]});
}

template <typename T>
Var<T> reshape(const Var<T>& x, Shape shape) {
  if (element_count(shape) != x.value().size()) detail::shape_error("reshape", x.shape(), shape);
  Tensor<T> out(std::move(shape), x.value().values());
  const std::size_t ix = x.id();
  return x.mutable_tape().record(std::move(out), {x}, [=](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
    auto gx = grads.slot(ix);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
  });
}

/// Picks flat elements by index; the result is a vector.
template <typename T>
Var<T> gather(const Var<T>& x, std::vector<std::size_t> index) {
  const auto& X = x.value();
  if (index.empty()) throw std::invalid_argument("gather: empty index");
  Tensor<T> out(Shape{index.size()});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= X.size()) {
      throw std::invalid_argument("gather: index " + std::to_string(index[i]) + " out of range for shape " + to_string(X.shape()));
    }
    out[i] = X[index[i]];
  }
  const std::size_t ix = x.id();
  return x.mutable_tape().record(std::move(out), {x},
                                 [ix, index = std::move(index)](const Tape<T>&, std::span<const T> g, Gradients<T>& grads) {
                                   auto gx = grads.slot(ix);
                                   for (std::size_t i = 0; i < index.size(); ++i) gx[index[i]] += g[i];
                                 });
}

/// Rows of a matrix in the given order.
template <typename T>
Var<T> gather_rows(const Var<T>& m, const std::vector<std::size_t>& rows) {
  if (m.value().rank() != 2) detail::shape_error("gather_rows", m.shape());
  const std::size_t cols = m.value().cols();
  std::vector<std::size_t> index;
  index.reserve(rows.size() * cols);
  for (std::size_t r : rows) {
    if (r >= m.value().rows()) throw std::invalid_argument("gather_rows: row " + std::to_string(r) + " out of range for " + to_string(m.shape()));
    for (std::size_t c = 0; c < cols; ++c) index.push_back(r * cols + c);
  }
  return reshape(gather(m, std::move(index)), Shape{rows.size(), cols});
}

template <typename T>
Var<T> row(const Var<T>& m, std::size_t r) {
  if (m.value().rank() != 2) detail::shape_error("row", m.shape());
  if (r >= m.value().rows()) throw std::invalid_argument("row: index " + std::to_string(r) + " out of range for " + to_string(m.shape()));
  const std::size_t cols = m.value().cols();
  std::vector<std::size_t> index(cols);
  for (std::size_t c = 0; c < cols; ++c) index[c] = r * cols + c;
  return gather(m, std::move(index));
}

// ---------------------------------------------------------------------------
// Operators

template <typename T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <typename T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, const Var<T>& b) { return hadamard(a, b); }
template <typename T>
Var<T> operator*(const Var<T>& a, T s) { return scale(a, s); }
template <typename T>
Var<T> operator*(T s, const Var<T>& a) { return scale(a, s); }
template <typename T>
Var<T> operator-(const Var<T>& a) { return scale(a, T(-1)); }

// ---------------------------------------------------------------------------
// Name-based entry point. Scalar-parameterised ops (scale, add_scalar) and
// index ops (gather, row) take extra arguments and are only available through
// their typed functions.

template <typename T>
Var<T> forward(std::string_view op, std::span<const Var<T>> in) {
  auto arity = [&](std::size_t n) {
    if (in.size() != n) {
      throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(n) + " inputs, got " + std::to_string(in.size()));
    }
  };
  if (op == "matmul") return arity(2), matmul(in[0], in[1]);
  if (op == "add") return arity(2), add(in[0], in[1]);
  if (op == "sub") return arity(2), sub(in[0], in[1]);
  if (op == "hadamard") return arity(2), hadamard(in[0], in[1]);
  if (op == "add_rowwise") return arity(2), add_rowwise(in[0], in[1]);
  if (op == "mul_rowwise") return arity(2), mul_rowwise(in[0], in[1]);
  if (op == "concat") return concat(in);
  if (op == "stack") return stack(in);
  if (op == "transpose") return arity(1), transpose(in[0]);
  if (op == "relu") return arity(1), relu(in[0]);
  if (op == "sigmoid") return arity(1), sigmoid(in[0]);
  if (op == "exp") return arity(1), exp(in[0]);
  if (op == "log") return arity(1), log(in[0]);
  if (op == "l2_normalize") return arity(1), l2_normalize(in[0]);
  if (op == "softmax") return arity(1), softmax(in[0]);
  if (op == "log_softmax") return arity(1), log_softmax(in[0]);
  if (op == "logsumexp") return arity(1), logsumexp(in[0]);
  if (op == "sum") return arity(1), sum(in[0]);
  if (op == "mean") return arity(1), mean(in[0]);
  throw std::invalid_argument("forward: unsupported op '" + std::string(op) + "'");
}

template <typename T>
Var<T> forward(std::string_view op, std::initializer_list<Var<T>> in) {
  return forward<T>(op, std::span<const Var<T>>(in.begin(), in.size()));
}

}  // namespace tcgl
