#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcgl/autodiff.hpp"
#include "tcgl/layers.hpp"
#include "tcgl/sampler.hpp"

namespace tcgl {

/// Length of the pooled statistics vector for a clip: one spatial mean and
/// one spatial standard deviation per frame and channel.
inline std::size_t pooled_dim(std::size_t frames, std::size_t channels) { return frames * channels * 2; }

/// Row vector (1, frames * channels * 2). For frame t the entries are
/// [mean_0 .. mean_{c-1}, std_0 .. std_{c-1}].
template <typename T>
Tensor<T> pooled_statistics(const VideoTensor& clip) {
  if (clip.frames == 0 || clip.data.empty()) throw std::invalid_argument("encode: empty clip");
  const std::size_t c = clip.channels;
  const std::size_t plane = clip.plane_size();
  Tensor<T> out(Shape{1, pooled_dim(clip.frames, c)});
  for (std::size_t t = 0; t < clip.frames; ++t) {
    const auto frame = clip.frame(t);
    for (std::size_t ch = 0; ch < c; ++ch) {
      const float* px = frame.data() + ch * plane;
      double s = 0.0;
      for (std::size_t i = 0; i < plane; ++i) s += px[i];
      const double mu = s / static_cast<double>(plane);
      double ss = 0.0;
      for (std::size_t i = 0; i < plane; ++i) ss += (px[i] - mu) * (px[i] - mu);
      out[t * 2 * c + ch] = static_cast<T>(mu);
      out[t * 2 * c + c + ch] = static_cast<T>(std::sqrt(ss / static_cast<double>(plane)));
    }
  }
  return out;
}

/// Linear projection of pooled statistics for each clip kind. When snippets
/// and frame-sets pool to the same dimension only the snippet block exists
/// and both kinds share it.
template <typename Slot>
struct EncoderParamsT {
  LinearT<Slot> snippet;
  std::optional<LinearT<Slot>> frameset;

  template <typename F>
  auto map(F&& f) const {
    using R = std::decay_t<decltype(f(snippet.weight))>;
    EncoderParamsT<R> out{snippet.map(f), std::nullopt};
    if (frameset) out.frameset = frameset->map(f);
    return out;
  }

  template <typename Self, typename F>
  static void each(Self& self, const std::string& prefix, F&& f) {
    LinearT<Slot>::each(self.snippet, join_name(prefix, "snippet"), f);
    if (self.frameset) LinearT<Slot>::each(*self.frameset, join_name(prefix, "frameset"), f);
  }
};

template <typename T>
using EncoderParams = EncoderParamsT<Param<T>>;
template <typename T>
using EncoderVars = EncoderParamsT<Var<T>>;

namespace detail {
template <typename T>
std::size_t in_dim(const Tensor<T>& w) { return w.shape()[0]; }
template <typename T>
std::size_t in_dim(const Var<T>& w) { return w.shape()[0]; }
}  // namespace detail

/// Block whose input dimension matches `dim`.
template <typename Slot>
const LinearT<Slot>& encoder_block(const EncoderParamsT<Slot>& p, std::size_t dim) {
  if (detail::in_dim(p.snippet.weight) == dim) return p.snippet;
  if (p.frameset && detail::in_dim(p.frameset->weight) == dim) return *p.frameset;
  std::string msg = "encode: pooled dimension " + std::to_string(dim) + " matches no encoder block (configured " +
                    std::to_string(detail::in_dim(p.snippet.weight));
  if (p.frameset) msg += ", " + std::to_string(detail::in_dim(p.frameset->weight));
  throw std::invalid_argument(msg + ")");
}

template <typename T>
EncoderParams<T> init_encoder(Rng& rng, std::size_t snippet_frames, std::size_t frameset_frames, std::size_t channels,
                              std::size_t features) {
  const std::size_t ds = pooled_dim(snippet_frames, channels);
  const std::size_t df = pooled_dim(frameset_frames, channels);
  EncoderParams<T> p{init_linear<T>(rng, ds, features), std::nullopt};
  if (df != ds) p.frameset = init_linear<T>(rng, df, features);
  return p;
}

/// relu(stats W + b) for a batch of pooled statistics rows (N, D) -> (N, F).
template <typename T>
Var<T> encode_rows(const Var<T>& stats, const EncoderVars<T>& p) {
  if (stats.value().rank() != 2) detail::shape_error("encode", stats.shape());
  return relu(affine(stats, encoder_block(p, stats.shape()[1])));
}

/// Feature vector (F) of one clip.
template <typename T>
Var<T> encode(const VideoTensor& clip, const EncoderVars<T>& p) {
  auto& tape = p.snippet.weight.mutable_tape();
  const Var<T> stats = tape.constant(pooled_statistics<T>(clip));
  const Var<T> out = encode_rows(stats, p);
  return reshape(out, Shape{out.shape()[1]});
}

/// Encodes clips of one kind together; row i is the feature of clips[i].
template <typename T>
Var<T> encode_batch(std::span<const VideoTensor> clips, const EncoderVars<T>& p) {
  if (clips.empty()) throw std::invalid_argument("encode: no clips");
  Tensor<T> first = pooled_statistics<T>(clips[0]);
  const std::size_t d = first.cols();
  std::vector<T> rows(first.values());
  rows.reserve(d * clips.size());
  for (std::size_t i = 1; i < clips.size(); ++i) {
    Tensor<T> s = pooled_statistics<T>(clips[i]);
    if (s.cols() != d) throw std::invalid_argument("encode: clips in one batch must share their length");
    rows.insert(rows.end(), s.data().begin(), s.data().end());
  }
  auto& tape = p.snippet.weight.mutable_tape();
  return encode_rows(tape.constant(Tensor<T>(Shape{clips.size(), d}, std::move(rows))), p);
}

/// Value-only convenience: feature of one clip without keeping a tape.
template <typename T>
Tensor<T> encode(const VideoTensor& clip, const EncoderParams<T>& params) {
  Tape<T> tape;
  const auto vars = params.map([&](const Tensor<T>& t) { return tape.constant(t); });
  return encode(clip, vars).value();
}

}  // namespace tcgl
