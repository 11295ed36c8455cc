#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcgl/archive.hpp"
#include "tcgl/model.hpp"
#include "tcgl/trainer.hpp"

namespace tcgl {

/// One embedding row per video with its class label.
template <typename T>
struct EmbeddingGallery {
  Tensor<T> embeddings;  ///< (N, D)
  std::vector<int> labels;
  std::string split = "train";

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return embeddings.cols(); }

  void validate() const {
    if (embeddings.rank() != 2 || embeddings.rows() != labels.size()) {
      throw std::invalid_argument("gallery: " + std::to_string(labels.size()) + " labels for embeddings of shape " +
                                  to_string(embeddings.shape()));
    }
    for (T x : embeddings.data())
      if (!std::isfinite(x)) throw std::invalid_argument("gallery: non-finite embedding entry");
  }

  friend bool operator==(const EmbeddingGallery&, const EmbeddingGallery&) = default;
};

namespace detail {
template <typename T>
double norm_of(std::span<const T> v) {
  double s = 0;
  for (T x : v) s += static_cast<double>(x) * static_cast<double>(x);
  return std::sqrt(s);
}
}  // namespace detail

/// 1 - <q/|q|, g/|g|> against every gallery row. Zero-norm gallery rows are
/// at distance 1.
template <typename T>
std::vector<double> cosine_distances(std::span<const T> query, const EmbeddingGallery<T>& gallery) {
  if (query.size() != gallery.dim()) {
    throw std::invalid_argument("retrieve: query has " + std::to_string(query.size()) + " dims, gallery has " +
                                std::to_string(gallery.dim()));
  }
  const double qn = detail::norm_of(query);
  if (!(qn > 0.0)) throw std::invalid_argument("retrieve: zero-norm query");
  std::vector<double> dist(gallery.size());
  const auto data = gallery.embeddings.data();
  for (std::size_t r = 0; r < gallery.size(); ++r) {
    const auto row = data.subspan(r * gallery.dim(), gallery.dim());
    const double gn = detail::norm_of(row);
    double dot = 0;
    for (std::size_t j = 0; j < row.size(); ++j) dot += static_cast<double>(query[j]) * static_cast<double>(row[j]);
    dist[r] = gn > 0.0 ? 1.0 - dot / (qn * gn) : 1.0;
  }
  return dist;
}

/// Indices of the k nearest rows, by ascending distance then ascending index.
template <typename T>
std::vector<std::size_t> retrieve(std::span<const T> query, const EmbeddingGallery<T>& gallery, std::size_t k) {
  if (k == 0 || k > gallery.size()) {
    throw std::invalid_argument("retrieve: k=" + std::to_string(k) + " outside [1, " + std::to_string(gallery.size()) + "]");
  }
  const auto dist = cosine_distances(query, gallery);
  std::vector<std::size_t> idx(gallery.size());
  std::iota(idx.begin(), idx.end(), 0);
  auto before = [&](std::size_t a, std::size_t b) { return dist[a] < dist[b] || (dist[a] == dist[b] && a < b); };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), before);
  idx.resize(k);
  return idx;
}

inline const std::vector<std::size_t> kRetrievalKs = {1, 5, 10, 20, 50};

/// Fraction of queries whose k nearest gallery rows contain the query class,
/// for each requested k (clamped to the gallery size).
template <typename T>
std::vector<double> topk_accuracy(const EmbeddingGallery<T>& queries, const EmbeddingGallery<T>& gallery,
                                  std::span<const std::size_t> ks, int threads = 1) {
  if (queries.size() == 0) throw std::invalid_argument("topk_accuracy: empty query set");
  if (ks.empty()) throw std::invalid_argument("topk_accuracy: no k values");
  queries.validate();
  gallery.validate();
  const std::size_t kmax = std::min(*std::max_element(ks.begin(), ks.end()), gallery.size());
  std::vector<std::vector<int>> hits(queries.size(), std::vector<int>(ks.size(), 0));
  const auto qdata = queries.embeddings.data();
  parallel_for(queries.size(), threads, [&](std::size_t q) {
    const auto nn = retrieve(qdata.subspan(q * queries.dim(), queries.dim()), gallery, kmax);
    for (std::size_t j = 0; j < ks.size(); ++j) {
      const std::size_t k = std::min(ks[j], gallery.size());
      for (std::size_t r = 0; r < k; ++r) {
        if (gallery.labels[nn[r]] == queries.labels[q]) {
          hits[q][j] = 1;
          break;
        }
      }
    }
  });
  std::vector<double> acc(ks.size(), 0.0);
  for (const auto& h : hits)
    for (std::size_t j = 0; j < ks.size(); ++j) acc[j] += h[j];
  for (auto& a : acc) a /= static_cast<double>(queries.size());
  return acc;
}

template <typename T>
double topk_accuracy(const EmbeddingGallery<T>& queries, const EmbeddingGallery<T>& gallery, std::size_t k) {
  const std::size_t ks[] = {k};
  return topk_accuracy(queries, gallery, std::span<const std::size_t>(ks))[0];
}

/// Embeds every listed video with the retrieval representation.
template <typename T>
EmbeddingGallery<T> build_gallery(const Model<T>& model, const ModelConfig& cfg, const Dataset& data,
                                  std::span<const std::size_t> indices, const std::string& split, bool backbone_only = false,
                                  int threads = 1) {
  if (indices.empty()) throw std::invalid_argument("build_gallery: no videos");
  std::vector<Tensor<T>> rows(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t i) {
    rows[i] = video_embedding(model, cfg, data.videos.at(indices[i]), backbone_only);
  });
  const std::size_t d = rows.front().size();
  std::vector<T> flat;
  flat.reserve(indices.size() * d);
  for (const auto& r : rows) flat.insert(flat.end(), r.data().begin(), r.data().end());
  EmbeddingGallery<T> g;
  g.embeddings = Tensor<T>(Shape{indices.size(), d}, std::move(flat));
  for (auto i : indices) g.labels.push_back(data.labels.at(i));
  g.split = split;
  return g;
}

/// One `split,label,e0,...` row per embedding, for plotting.
template <typename T>
void write_plot_csv(const std::filesystem::path& path, std::span<const EmbeddingGallery<T>* const> galleries) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("plot data: cannot write " + path.string());
  if (galleries.empty()) throw std::invalid_argument("plot data: nothing to write");
  out << "split,label";
  for (std::size_t j = 0; j < galleries.front()->dim(); ++j) out << ",e" << j;
  out << '\n';
  for (const auto* g : galleries) {
    for (std::size_t r = 0; r < g->size(); ++r) {
      out << g->split << ',' << g->labels[r];
      for (std::size_t j = 0; j < g->dim(); ++j) out << ',' << detail::format_double(static_cast<double>(g->embeddings(r, j)));
      out << '\n';
    }
  }
  if (!out) throw std::runtime_error("plot data: write failed for " + path.string());
}

template <typename T>
void save_gallery(const EmbeddingGallery<T>& g, const std::filesystem::path& dir) {
  g.validate();
  Archive<T> a;
  a.kind = "gallery";
  a.meta["split"] = g.split;
  std::string labels;
  for (int l : g.labels) labels += (labels.empty() ? "" : ",") + std::to_string(l);
  a.meta["labels"] = labels;
  a.add("embeddings", g.embeddings);
  save_archive(a, dir);
}

template <typename T>
EmbeddingGallery<T> load_gallery(const std::filesystem::path& dir) {
  const Archive<T> a = load_archive<T>(dir);
  if (a.kind != "gallery") throw std::runtime_error("gallery: " + dir.string() + " holds a '" + a.kind + "' archive");
  EmbeddingGallery<T> g;
  g.split = a.get("split");
  g.embeddings = a.tensor("embeddings");
  std::istringstream ls(a.get("labels"));
  std::string tok;
  while (std::getline(ls, tok, ',')) g.labels.push_back(detail::parse_number<int>("labels", tok));
  g.validate();
  return g;
}

}  // namespace tcgl
