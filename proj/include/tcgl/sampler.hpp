#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcgl/binary_io.hpp"
#include "tcgl/rng.hpp"

namespace tcgl {

/// Frames x channels x height x width, stored frame-major as 32-bit floats.
struct VideoTensor {
  std::size_t frames = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> data;

  static VideoTensor zeros(std::size_t frames, std::size_t channels, std::size_t height, std::size_t width) {
    if (frames == 0 || channels == 0 || height == 0 || width == 0) {
      throw std::invalid_argument("video: dimensions must be positive");
    }
    return VideoTensor{frames, channels, height, width, std::vector<float>(frames * channels * height * width, 0.0f)};
  }

  std::size_t frame_size() const { return channels * height * width; }
  std::size_t plane_size() const { return height * width; }

  std::span<const float> frame(std::size_t t) const { return {data.data() + t * frame_size(), frame_size()}; }
  std::span<float> frame(std::size_t t) { return {data.data() + t * frame_size(), frame_size()}; }

  float& at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) {
    return data[((t * channels + c) * height + y) * width + x];
  }
  float at(std::size_t t, std::size_t c, std::size_t y, std::size_t x) const {
    return data[((t * channels + c) * height + y) * width + x];
  }

  /// Frames [start, start + count).
  VideoTensor clip(std::size_t start, std::size_t count) const {
    if (count == 0 || start + count > frames) {
      throw std::invalid_argument("video: clip [" + std::to_string(start) + ", " + std::to_string(start + count) +
                                  ") outside " + std::to_string(frames) + " frames");
    }
    VideoTensor out{count, channels, height, width, {}};
    const auto first = data.begin() + static_cast<std::ptrdiff_t>(start * frame_size());
    out.data.assign(first, first + static_cast<std::ptrdiff_t>(count * frame_size()));
    return out;
  }

  friend bool operator==(const VideoTensor&, const VideoTensor&) = default;
};

// ---------------------------------------------------------------------------
// Snippet sampling

struct SnippetLayout {
  std::size_t length = 16;    ///< l
  std::size_t interval = 8;   ///< p
  std::size_t count = 3;      ///< n
  std::size_t framesets = 4;  ///< m

  std::size_t required_frames() const { return count * length + (count - 1) * interval; }
};

/// First frame of snippet k: k * (l + p), shifted by `offset`.
inline std::vector<std::size_t> snippet_starts(std::size_t frames, std::size_t l, std::size_t p, std::size_t n,
                                               std::size_t offset = 0) {
  if (l == 0 || n == 0) throw std::invalid_argument("sample_snippets: l and n must be positive");
  const std::size_t need = n * l + (n - 1) * p;
  if (frames < offset + need) {
    throw std::invalid_argument("sample_snippets: video has " + std::to_string(frames) + " frames, n=" + std::to_string(n) +
                                " snippets of l=" + std::to_string(l) + " with interval p=" + std::to_string(p) +
                                " need at least " + std::to_string(offset + need));
  }
  std::vector<std::size_t> starts(n);
  for (std::size_t k = 0; k < n; ++k) starts[k] = offset + k * (l + p);
  return starts;
}

/// Chronologically ordered, non-overlapping snippets.
inline std::vector<VideoTensor> sample_snippets(const VideoTensor& video, std::size_t l, std::size_t p, std::size_t n,
                                                std::size_t offset = 0) {
  std::vector<VideoTensor> out;
  for (std::size_t s : snippet_starts(video.frames, l, p, n, offset)) out.push_back(video.clip(s, l));
  return out;
}

/// Uniform start offset so the whole tuple still fits; 0 when it fits exactly.
inline std::size_t random_offset(Rng& rng, std::size_t frames, const SnippetLayout& layout) {
  const std::size_t need = layout.required_frames();
  if (frames < need) return 0;
  return static_cast<std::size_t>(rng.below(frames - need + 1));
}

// ---------------------------------------------------------------------------
// Permutations, indexed lexicographically: id 0 is the identity and id n!-1
// the full reversal.

inline constexpr std::size_t kMaxSnippets = 10;

inline std::size_t factorial(std::size_t n) {
  if (n > 20) throw std::invalid_argument("factorial: n too large");
  std::size_t f = 1;
  for (std::size_t i = 2; i <= n; ++i) f *= i;
  return f;
}

inline std::vector<std::size_t> permutation_from_index(std::size_t id, std::size_t n) {
  if (id >= factorial(n)) {
    throw std::invalid_argument("permutation id " + std::to_string(id) + " out of range [0, " + std::to_string(factorial(n)) + ")");
  }
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  std::vector<std::size_t> perm;
  perm.reserve(n);
  for (std::size_t k = n; k > 0; --k) {
    const std::size_t f = factorial(k - 1);
    const std::size_t pick = id / f;
    id %= f;
    perm.push_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  return perm;
}

inline std::size_t permutation_index(std::span<const std::size_t> perm) {
  const std::size_t n = perm.size();
  std::size_t id = 0;
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t smaller = 0;
    for (std::size_t j = i + 1; j < n; ++j) smaller += perm[j] < perm[i] ? 1 : 0;
    id += smaller * factorial(n - 1 - i);
  }
  return id;
}

/// Snippets in shuffled order. `order[j]` is the chronological index of the
/// snippet at tuple position j; frame_sets[j] splits snippets[j].
struct SnippetTuple {
  std::vector<VideoTensor> snippets;
  std::size_t permutation_id = 0;
  std::vector<std::size_t> order;
  std::vector<std::vector<VideoTensor>> frame_sets;

  std::size_t size() const { return snippets.size(); }
};

/// Reorders chronological snippets by permutation `permutation_id`, or by a
/// uniformly drawn one when absent.
inline SnippetTuple shuffle_tuple(std::vector<VideoTensor> chronological, std::optional<std::size_t> permutation_id,
                                  Rng& rng) {
  const std::size_t n = chronological.size();
  if (n == 0 || n > kMaxSnippets) throw std::invalid_argument("shuffle_tuple: snippet count must be in [1, 10]");
  const std::size_t classes = factorial(n);
  const std::size_t id = permutation_id ? *permutation_id : static_cast<std::size_t>(rng.below(classes));
  SnippetTuple t;
  t.order = permutation_from_index(id, n);
  t.permutation_id = id;
  t.snippets.reserve(n);
  for (std::size_t j = 0; j < n; ++j) t.snippets.push_back(std::move(chronological[t.order[j]]));
  return t;
}

/// Restores chronological order from the stored label.
inline std::vector<VideoTensor> unshuffle(const SnippetTuple& t) {
  std::vector<VideoTensor> out(t.size());
  for (std::size_t j = 0; j < t.size(); ++j) out[t.order[j]] = t.snippets[j];
  return out;
}

/// m equal, consecutive sub-clips.
inline std::vector<VideoTensor> split_framesets(const VideoTensor& snippet, std::size_t m) {
  if (m == 0 || snippet.frames % m != 0) {
    throw std::invalid_argument("split_framesets: m=" + std::to_string(m) + " does not divide snippet length " +
                                std::to_string(snippet.frames));
  }
  const std::size_t len = snippet.frames / m;
  std::vector<VideoTensor> out;
  out.reserve(m);
  for (std::size_t j = 0; j < m; ++j) out.push_back(snippet.clip(j * len, len));
  return out;
}

inline void attach_framesets(SnippetTuple& t, std::size_t m) {
  t.frame_sets.clear();
  for (const auto& s : t.snippets) t.frame_sets.push_back(split_framesets(s, m));
}

/// Sample, shuffle and split in one go.
inline SnippetTuple make_tuple(const VideoTensor& video, const SnippetLayout& layout, std::optional<std::size_t> permutation_id,
                               Rng& rng, std::size_t offset = 0) {
  if (layout.framesets == 0 || layout.length % layout.framesets != 0) {
    throw std::invalid_argument("layout: m=" + std::to_string(layout.framesets) + " does not divide l=" + std::to_string(layout.length));
  }
  SnippetTuple t = shuffle_tuple(sample_snippets(video, layout.length, layout.interval, layout.count, offset), permutation_id, rng);
  attach_framesets(t, layout.framesets);
  return t;
}

// ---------------------------------------------------------------------------
// Synthetic videos

/// Class identity of a synthetic video: how strongly its brightness
/// accelerates and how quickly its texture contrast oscillates.
struct SyntheticLabel {
  int class_id = 0;
  double drift = 1.0;   ///< brightness gain over the whole video
  double period = 8.0;  ///< contrast oscillation period in frames
};

inline SyntheticLabel synthetic_label(int class_id) {
  if (class_id < 0) throw std::invalid_argument("synthetic_label: negative class id");
  const int slot = class_id % 10;
  const int band = class_id / 5;
  return SyntheticLabel{class_id, 0.5 + 0.12 * slot, 5.0 + 4.0 * band};
}

/// Deterministic in (seed, label). Each frame is a translating sinusoidal
/// grating whose contrast oscillates with the class period, on top of a
/// brightness level that rises as drift * (t/frames)^2 from a random
/// per-video offset. The offset swamps absolute brightness, so only the
/// within-clip rise tells classes apart.
inline VideoTensor gen_synthetic_video(std::uint64_t seed, const SyntheticLabel& label, std::size_t frames, std::size_t channels,
                                       std::size_t height, std::size_t width) {
  if (frames == 0 || channels == 0 || height == 0 || width == 0) {
    throw std::invalid_argument("gen_synthetic_video: dimensions must be positive");
  }
  if (!(label.period > 0.0)) throw std::invalid_argument("gen_synthetic_video: period must be positive");
  constexpr double two_pi = 2.0 * std::numbers::pi;
  Rng rng(derive_seed(seed, static_cast<std::uint64_t>(label.class_id)));
  const double offset = rng.uniform(-1.5, 1.5);
  const double contrast_phase = rng.uniform(0.0, two_pi);
  const double amplitude = rng.uniform(0.2, 0.4);
  const double kx = 1.0 + static_cast<double>(rng.below(2));
  const double ky = static_cast<double>(rng.below(2));
  const double speed = rng.uniform(0.02, 0.08);

  VideoTensor v = VideoTensor::zeros(frames, channels, height, width);
  for (std::size_t t = 0; t < frames; ++t) {
    const double time = static_cast<double>(t);
    const double u = time / static_cast<double>(frames);
    const double level = offset + label.drift * u * u;
    const double contrast = amplitude * (1.0 + 0.5 * std::sin(two_pi * time / label.period + contrast_phase));
    for (std::size_t c = 0; c < channels; ++c) {
      const double gain = 1.0 + 0.5 * static_cast<double>(c);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) {
          const double arg = two_pi * (kx * static_cast<double>(x) / static_cast<double>(width) +
                                       ky * static_cast<double>(y) / static_cast<double>(height) - speed * time);
          const double noise = rng.normal(0.0, 0.02);
          v.at(t, c, y, x) = static_cast<float>(gain * level + contrast * std::sin(arg) + noise);
        }
      }
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Datasets

struct VideoDims {
  std::size_t frames = 64;
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
};

struct Dataset {
  std::uint64_t seed = 0;
  std::vector<VideoTensor> videos;
  std::vector<int> labels;
  std::vector<std::string> files;

  std::size_t size() const { return videos.size(); }
};

/// Video i has class i % classes and its own seed derived from `seed`.
inline Dataset generate_dataset(std::size_t count, int classes, std::uint64_t seed, const VideoDims& dims = {}) {
  if (classes <= 0) throw std::invalid_argument("generate_dataset: classes must be positive");
  Dataset ds;
  ds.seed = seed;
  for (std::size_t i = 0; i < count; ++i) {
    const int cls = static_cast<int>(i % static_cast<std::size_t>(classes));
    ds.videos.push_back(gen_synthetic_video(derive_seed(seed, i), synthetic_label(cls), dims.frames, dims.channels, dims.height, dims.width));
    ds.labels.push_back(cls);
    std::ostringstream name;
    name << "video_" << std::setw(5) << std::setfill('0') << i << ".bin";
    ds.files.push_back(name.str());
  }
  return ds;
}

inline constexpr std::size_t kVideoHeaderInts = 5;

/// Header of five little-endian int32 (frames, channels, height, width,
/// class_id) followed by float32 frame data.
inline void write_video(const std::filesystem::path& path, const VideoTensor& v, int class_id) {
  std::vector<unsigned char> buf;
  buf.reserve(kVideoHeaderInts * 4 + v.data.size() * 4);
  for (std::size_t d : {v.frames, v.channels, v.height, v.width}) io::put(buf, static_cast<std::int32_t>(d));
  io::put(buf, static_cast<std::int32_t>(class_id));
  for (float f : v.data) io::put(buf, f);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  io::write_all(os, buf, path.string());
}

inline VideoTensor read_video(const std::filesystem::path& path, int* class_id = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open video file " + path.string());
  const auto buf = io::read_all(is);
  if (buf.size() < kVideoHeaderInts * 4) throw std::runtime_error(path.string() + ": truncated header");
  std::int32_t h[kVideoHeaderInts];
  for (std::size_t i = 0; i < kVideoHeaderInts; ++i) h[i] = io::get<std::int32_t>(buf.data() + 4 * i);
  for (std::size_t i = 0; i < 4; ++i) {
    if (h[i] <= 0) throw std::runtime_error(path.string() + ": non-positive dimension in header");
  }
  VideoTensor v = VideoTensor::zeros(static_cast<std::size_t>(h[0]), static_cast<std::size_t>(h[1]), static_cast<std::size_t>(h[2]),
                                     static_cast<std::size_t>(h[3]));
  if (buf.size() != kVideoHeaderInts * 4 + v.data.size() * 4) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(v.data.size()) + " floats of frame data");
  }
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = io::get<float>(buf.data() + kVideoHeaderInts * 4 + 4 * i);
  if (class_id) *class_id = h[4];
  return v;
}

inline const char* kDatasetManifest = "manifest.txt";

/// One file per video plus manifest.txt: a `seed <s>` line, then one
/// `<file> <class_id>` line per video.
inline void write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / kDatasetManifest);
  if (!manifest) throw std::runtime_error("cannot write dataset manifest in " + dir.string());
  manifest << "seed " << ds.seed << "\n";
  for (std::size_t i = 0; i < ds.size(); ++i) {
    write_video(dir / ds.files[i], ds.videos[i], ds.labels[i]);
    manifest << ds.files[i] << ' ' << ds.labels[i] << "\n";
  }
  if (!manifest) throw std::runtime_error("failed writing dataset manifest in " + dir.string());
}

inline Dataset read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / kDatasetManifest);
  if (!manifest) throw std::invalid_argument("dataset: no " + std::string(kDatasetManifest) + " in " + dir.string());
  Dataset ds;
  std::string key;
  if (!(manifest >> key >> ds.seed) || key != "seed") throw std::invalid_argument("dataset: manifest must start with 'seed <value>'");
  std::string file;
  int cls = 0;
  while (manifest >> file >> cls) {
    int header_cls = 0;
    ds.videos.push_back(read_video(dir / file, &header_cls));
    if (header_cls != cls) throw std::runtime_error("dataset: class mismatch between manifest and " + file);
    ds.files.push_back(file);
    ds.labels.push_back(cls);
  }
  if (!manifest.eof()) throw std::invalid_argument("dataset: malformed manifest line in " + dir.string());
  if (ds.videos.empty()) throw std::invalid_argument("dataset: manifest lists no videos");
  return ds;
}

}  // namespace tcgl
