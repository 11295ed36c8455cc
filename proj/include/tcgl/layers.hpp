#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "tcgl/autodiff.hpp"
#include "tcgl/rng.hpp"

namespace tcgl {

// Parameter structs are templated on their slot type: Tensor<T> for stored
// parameters, Var<T> once bound to a tape. `map` converts between the two and
// `each` walks the slots with stable names.

template <typename T>
using Param = Tensor<T>;

inline std::string join_name(const std::string& prefix, const char* leaf) {
  return prefix.empty() ? std::string(leaf) : prefix + "." + leaf;
}

/// Fully connected layer y = x W + b with W of shape (in, out).
template <typename Slot>
struct LinearT {
  Slot weight;
  Slot bias;

  template <typename F>
  auto map(F&& f) const {
    using R = std::decay_t<decltype(f(weight))>;
    return LinearT<R>{f(weight), f(bias)};
  }

  template <typename Self, typename F>
  static void each(Self& self, const std::string& prefix, F&& f) {
    f(join_name(prefix, "weight"), self.weight);
    f(join_name(prefix, "bias"), self.bias);
  }
};

/// Entries uniform in [-bound, bound].
template <typename T>
Tensor<T> uniform_tensor(Rng& rng, Shape shape, double bound) {
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

/// Fan-in scaled initialisation: weight and bias uniform in +-1/sqrt(in).
template <typename T>
LinearT<Param<T>> init_linear(Rng& rng, std::size_t in, std::size_t out) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  auto w = uniform_tensor<T>(rng, Shape{in, out}, bound);
  auto b = uniform_tensor<T>(rng, Shape{out}, bound);
  return {std::move(w), std::move(b)};
}

/// Applies a bound linear layer to a row-matrix batch or a single vector.
template <typename T>
Var<T> affine(const Var<T>& x, const LinearT<Var<T>>& layer) {
  if (x.value().rank() == 1) {
    const std::size_t out = layer.weight.shape()[1];
    return reshape(affine(reshape(x, Shape{1, x.shape()[0]}), layer), Shape{out});
  }
  return add_rowwise(matmul(x, layer.weight), layer.bias);
}

template <typename T>
Var<T> bind_leaf(Tape<T>& tape, const Tensor<T>& t) {
  Tensor<T> copy = t;
  copy.set_requires_grad(true);
  return tape.leaf(std::move(copy));
}

}  // namespace tcgl
