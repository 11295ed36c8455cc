#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "tcgl/archive.hpp"
#include "tcgl/config.hpp"
#include "tcgl/model.hpp"

namespace tcgl {

/// Thrown before any parameter is touched when a gradient is NaN or infinite.
struct NonFiniteGradient : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// v <- momentum v + g + wd p (wd on weight matrices only); p <- p - lr v.
/// The whole step is skipped if any gradient entry is non-finite.
template <typename T>
void sgd_step(Model<T>& params, const Model<T>& grads, Model<T>& velocity, double lr, double momentum, double weight_decay) {
  auto p = parameter_list(params);
  auto v = parameter_list(velocity);
  auto g = named_parameters(grads);
  if (p.size() != g.size() || p.size() != v.size()) throw std::invalid_argument("sgd_step: parameter lists differ");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i]->shape() != g[i].second->shape() || p[i]->shape() != v[i]->shape()) {
      detail::shape_error("sgd_step", p[i]->shape(), g[i].second->shape());
    }
    for (T x : g[i].second->data()) {
      if (!std::isfinite(x)) throw NonFiniteGradient("sgd_step: non-finite gradient in " + g[i].first + "; step aborted");
    }
  }
  const T mu = static_cast<T>(momentum), eta = static_cast<T>(lr);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T wd = p[i]->rank() == 2 ? static_cast<T>(weight_decay) : T(0);
    auto pv = p[i]->data();
    auto vv = v[i]->data();
    auto gv = g[i].second->data();
    for (std::size_t j = 0; j < pv.size(); ++j) {
      vv[j] = mu * vv[j] + gv[j] + wd * pv[j];
      pv[j] -= eta * vv[j];
    }
  }
}

struct EpochMetrics {
  int epoch = 0;
  double total_loss = 0, graph_loss = 0, order_loss = 0;
  double train_acc = 0, val_acc = 0, val_loss = 0;

  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

inline const char* kMetricsHeader = "epoch,total_loss,graph_loss,order_loss,train_acc,val_acc";

inline std::string metrics_row(const EpochMetrics& m) {
  using detail::format_double;
  return std::to_string(m.epoch) + ',' + format_double(m.total_loss) + ',' + format_double(m.graph_loss) + ',' +
         format_double(m.order_loss) + ',' + format_double(m.train_acc) + ',' + format_double(m.val_acc);
}

template <typename T>
struct Checkpoint {
  Model<T> params;
  Model<T> velocity;
  int epoch = 0;  ///< completed epochs
  std::string rng_state;
  double best_val_loss = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<EpochMetrics> history;
  TrainConfig config;
};

namespace detail {

inline std::string encode_history(const std::vector<EpochMetrics>& h) {
  std::string s;
  for (const auto& m : h) {
    if (!s.empty()) s += ';';
    s += std::to_string(m.epoch) + ',' + format_double(m.total_loss) + ',' + format_double(m.graph_loss) + ',' +
         format_double(m.order_loss) + ',' + format_double(m.train_acc) + ',' + format_double(m.val_acc) + ',' +
         format_double(m.val_loss);
  }
  return s;
}

inline std::vector<EpochMetrics> decode_history(const std::string& s) {
  std::vector<EpochMetrics> out;
  std::istringstream rows(s);
  std::string row;
  while (std::getline(rows, row, ';')) {
    if (row.empty()) continue;
    std::istringstream fields(row);
    std::string f[7];
    for (auto& x : f)
      if (!std::getline(fields, x, ',')) throw std::runtime_error("checkpoint: malformed history row '" + row + "'");
    EpochMetrics m;
    m.epoch = parse_number<int>("history", f[0]);
    double* dst[] = {&m.total_loss, &m.graph_loss, &m.order_loss, &m.train_acc, &m.val_acc, &m.val_loss};
    for (int i = 0; i < 6; ++i) *dst[i] = parse_number<double>("history", f[i + 1]);
    out.push_back(m);
  }
  return out;
}

template <typename T>
void load_named(Model<T>& m, const Archive<T>& a, const std::string& prefix) {
  Model<T>::each(m, [&](const std::string& name, Tensor<T>& t) {
    const Tensor<T>& src = a.tensor(prefix + name);
    if (src.shape() != t.shape()) {
      throw std::runtime_error("checkpoint: tensor '" + prefix + name + "' has shape " + to_string(src.shape()) +
                               ", model expects " + to_string(t.shape()));
    }
    t = src;
  });
}

}  // namespace detail

inline const char* kConfigFile = "config.cfg";

template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, const std::filesystem::path& dir) {
  Archive<T> a;
  a.kind = "checkpoint";
  Model<T>::each(ck.params, [&](const std::string& name, const Tensor<T>& t) { a.add("param/" + name, t); });
  Model<T>::each(ck.velocity, [&](const std::string& name, const Tensor<T>& t) { a.add("velocity/" + name, t); });
  const std::string cfg = config_to_text(ck.config);
  a.meta["epoch"] = std::to_string(ck.epoch);
  a.meta["rng"] = ck.rng_state;
  a.meta["best_val_loss"] = detail::format_double(ck.best_val_loss);
  a.meta["best_epoch"] = std::to_string(ck.best_epoch);
  a.meta["history"] = detail::encode_history(ck.history);
  a.meta["config_crc"] = std::to_string(io::crc32(reinterpret_cast<const unsigned char*>(cfg.data()), cfg.size()));
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / kConfigFile, std::ios::trunc);
    out << cfg;
    if (!out) throw std::runtime_error("checkpoint: cannot write " + (dir / kConfigFile).string());
  }
  save_archive(a, dir);
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& dir) {
  const Archive<T> a = load_archive<T>(dir);
  if (a.kind != "checkpoint") throw std::runtime_error("checkpoint: " + dir.string() + " holds a '" + a.kind + "' archive");
  std::ifstream in(dir / kConfigFile);
  if (!in) throw std::runtime_error("checkpoint: missing " + (dir / kConfigFile).string());
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string cfg = ss.str();
  if (std::to_string(io::crc32(reinterpret_cast<const unsigned char*>(cfg.data()), cfg.size())) != a.get("config_crc")) {
    throw std::runtime_error("checkpoint: config snapshot checksum mismatch in " + dir.string());
  }
  Checkpoint<T> ck;
  ck.config = config_from_text(cfg);
  Rng shape_rng(0);
  ck.params = init_model<T>(ck.config.model, shape_rng);
  ck.velocity = zeros_like(ck.params);
  detail::load_named(ck.params, a, "param/");
  detail::load_named(ck.velocity, a, "velocity/");
  ck.epoch = detail::parse_number<int>("epoch", a.get("epoch"));
  ck.rng_state = a.get("rng");
  ck.best_val_loss = a.get("best_val_loss") == "inf" ? std::numeric_limits<double>::infinity()
                                                      : detail::parse_number<double>("best_val_loss", a.get("best_val_loss"));
  ck.best_epoch = detail::parse_number<int>("best_epoch", a.get("best_epoch"));
  ck.history = detail::decode_history(a.get("history"));
  return ck;
}

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};

/// Held-out videos: the floor(fraction * count) videos with the smallest
/// seeded hash, so the split depends only on the dataset seed and size.
inline Split split_dataset(std::size_t count, double val_fraction, std::uint64_t seed) {
  const auto nval = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(count)));
  std::vector<std::pair<std::uint64_t, std::size_t>> keyed(count);
  for (std::size_t i = 0; i < count; ++i) keyed[i] = {mix64(derive_seed(seed, 0x5117 ^ i)), i};
  std::sort(keyed.begin(), keyed.end());
  Split s;
  for (std::size_t r = 0; r < count; ++r) (r < nval ? s.val : s.train).push_back(keyed[r].second);
  std::sort(s.val.begin(), s.val.end());
  std::sort(s.train.begin(), s.train.end());
  return s;
}

struct OrderEval {
  double accuracy = 0;
  double loss = 0;  ///< mean total J
  std::size_t samples = 0;
};

/// Runs `fn(i)` for i in [0, n) over `threads` workers; results must be
/// written to per-index slots so the outcome does not depend on scheduling.
inline void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline constexpr std::uint64_t kEvalStream = 0xE7A1;

/// Order-prediction accuracy and mean J over `indices`, with the tuple and
/// views of each video drawn from a stream fixed by (seed, video index).
template <typename T>
OrderEval eval_order(const Model<T>& model, const ModelConfig& cfg, const Dataset& data, std::span<const std::size_t> indices,
                     std::uint64_t seed, int threads = 1) {
  if (indices.empty()) throw std::invalid_argument("eval_order: empty evaluation split");
  std::vector<double> loss(indices.size());
  std::vector<int> hit(indices.size());
  parallel_for(indices.size(), threads, [&](std::size_t s) {
    const std::size_t idx = indices[s];
    const VideoTensor& video = data.videos.at(idx);
    if (video.channels != cfg.channels) {
      throw std::invalid_argument("eval_order: video has " + std::to_string(video.channels) + " channels, model expects " +
                                  std::to_string(cfg.channels));
    }
    Rng rng(derive_seed(derive_seed(seed, kEvalStream), idx));
    const SnippetTuple tuple = draw_tuple(video, cfg, rng);
    Tape<T> tape;
    const ModelVars<T> vars = bind(tape, model, false);
    const SampleForward<T> f = forward_sample(vars, cfg, tuple, rng);
    loss[s] = static_cast<double>(f.total.value().item());
    hit[s] = predict_order(f.logits.value()).permutation_id == tuple.permutation_id ? 1 : 0;
  });
  OrderEval out;
  out.samples = indices.size();
  for (std::size_t s = 0; s < indices.size(); ++s) {
    out.loss += loss[s];
    out.accuracy += hit[s];
  }
  out.loss /= static_cast<double>(indices.size());
  out.accuracy /= static_cast<double>(indices.size());
  return out;
}

struct TrainOptions {
  std::filesystem::path out;                  ///< run directory; empty = keep in memory only
  std::optional<std::filesystem::path> resume; ///< checkpoint directory to continue from
  int stop_after = 0;                          ///< stop once this many epochs are complete (0 = run all)
  std::ostream* log = nullptr;
};

template <typename T>
struct TrainResult {
  Checkpoint<T> last;
  Checkpoint<T> best;
  std::vector<EpochMetrics> history;
  Split split;
};

inline void check_dataset(const TrainConfig& cfg, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("train: dataset is empty");
  const std::size_t need = cfg.model.layout.required_frames();
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& v = data.videos[i];
    if (v.channels != cfg.model.channels) {
      throw std::invalid_argument("train: video " + std::to_string(i) + " has " + std::to_string(v.channels) +
                                  " channels, config expects " + std::to_string(cfg.model.channels));
    }
    if (v.frames < need) {
      throw std::invalid_argument("train: video " + std::to_string(i) + " has " + std::to_string(v.frames) +
                                  " frames, the snippet layout needs " + std::to_string(need));
    }
  }
}

inline void write_metrics_csv(const std::filesystem::path& path, const std::vector<EpochMetrics>& h) {
  std::ofstream out(path, std::ios::trunc);
  out << kMetricsHeader << '\n';
  for (const auto& m : h) out << metrics_row(m) << '\n';
  if (!out) throw std::runtime_error("train: cannot write " + path.string());
}

/// SGD over one freshly drawn tuple per training video per epoch. The master
/// stream shuffles the visiting order and hands every sample its own seed, so
/// results do not depend on the thread count.
template <typename T>
TrainResult<T> train(const TrainConfig& cfg, const Dataset& data, const TrainOptions& opt = {}) {
  cfg.validate();
  check_dataset(cfg, data);
  TrainResult<T> res;
  res.split = split_dataset(data.size(), cfg.val_fraction, data.seed);
  if (res.split.train.empty()) throw std::invalid_argument("train: no training videos after the validation split");
  const std::vector<std::size_t>& eval_idx = res.split.val.empty() ? res.split.train : res.split.val;

  Checkpoint<T> ck;
  Rng master(cfg.seed);
  if (opt.resume) {
    ck = load_checkpoint<T>(*opt.resume);
    if (config_to_text(ck.config) != config_to_text(cfg)) {
      throw std::invalid_argument("train: resume checkpoint was written with a different configuration");
    }
    master.set_state(ck.rng_state);
  } else {
    ck.config = cfg;
    Rng init_rng(derive_seed(cfg.seed, 0x1417));
    ck.params = init_model<T>(cfg.model, init_rng);
    ck.velocity = zeros_like(ck.params);
  }
  if (!opt.out.empty()) {
    std::filesystem::create_directories(opt.out);
    std::ofstream(opt.out / kConfigFile, std::ios::trunc) << config_to_text(cfg);
  }
  if (opt.resume && !opt.out.empty() && std::filesystem::exists(opt.out / "best" / kArchiveManifest)) {
    res.best = load_checkpoint<T>(opt.out / "best");
  } else {
    res.best = ck;
  }

  const int last_epoch = opt.stop_after > 0 ? std::min(cfg.epochs, opt.stop_after) : cfg.epochs;
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  for (int e = ck.epoch; e < last_epoch; ++e) {
    std::vector<std::size_t> order = res.split.train;
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[master.below(i)]);
    std::vector<std::uint64_t> seeds(order.size());
    for (auto& s : seeds) s = master.next_u64();

    EpochMetrics m;
    m.epoch = e + 1;
    std::size_t correct = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += bs) {
      const std::size_t nb = std::min(bs, order.size() - b0);
      std::vector<Model<T>> grads(nb);
      std::vector<double> lt(nb), lg(nb), lo(nb);
      std::vector<int> hit(nb);
      parallel_for(nb, cfg.threads, [&](std::size_t s) {
        Rng rng(seeds[b0 + s]);
        const SnippetTuple tuple = draw_tuple(data.videos[order[b0 + s]], cfg.model, rng);
        Tape<T> tape;
        const ModelVars<T> vars = bind(tape, ck.params);
        const SampleForward<T> f = forward_sample(vars, cfg.model, tuple, rng);
        grads[s] = gradients_of(backward(f.total), vars);
        lt[s] = static_cast<double>(f.total.value().item());
        lg[s] = static_cast<double>(f.graph.value().item());
        lo[s] = static_cast<double>(f.order.value().item());
        hit[s] = predict_order(f.logits.value()).permutation_id == tuple.permutation_id ? 1 : 0;
      });
      Model<T> mean_grad = zeros_like(ck.params);
      auto acc = parameter_list(mean_grad);
      const T inv = T(1) / static_cast<T>(nb);
      for (std::size_t s = 0; s < nb; ++s) {
        auto src = parameter_list(grads[s]);
        for (std::size_t k = 0; k < acc.size(); ++k) {
          auto d = acc[k]->data();
          auto g = src[k]->data();
          for (std::size_t j = 0; j < d.size(); ++j) d[j] += g[j] * inv;
        }
        m.total_loss += lt[s];
        m.graph_loss += lg[s];
        m.order_loss += lo[s];
        correct += static_cast<std::size_t>(hit[s]);
      }
      sgd_step(ck.params, mean_grad, ck.velocity, cfg.lr_at(e), cfg.momentum, cfg.weight_decay);
    }
    const double count = static_cast<double>(order.size());
    m.total_loss /= count;
    m.graph_loss /= count;
    m.order_loss /= count;
    m.train_acc = static_cast<double>(correct) / count;
    const OrderEval ev = eval_order(ck.params, cfg.model, data, eval_idx, cfg.seed, cfg.threads);
    m.val_acc = ev.accuracy;
    m.val_loss = ev.loss;
    if (!std::isfinite(m.total_loss)) throw std::runtime_error("train: loss became non-finite at epoch " + std::to_string(e + 1));

    ck.epoch = e + 1;
    ck.history.push_back(m);
    ck.rng_state = master.state();
    const bool improved = m.val_loss < ck.best_val_loss;
    if (improved) {
      ck.best_val_loss = m.val_loss;
      ck.best_epoch = ck.epoch;
    }
    if (improved) res.best = ck;
    if (!opt.out.empty()) {
      write_metrics_csv(opt.out / "metrics.csv", ck.history);
      if (improved) save_checkpoint(ck, opt.out / "best");
      save_checkpoint(ck, opt.out / "last");
    }
    if (opt.log) {
      *opt.log << "epoch " << m.epoch << " J=" << m.total_loss << " Jg=" << m.graph_loss << " Jo=" << m.order_loss
               << " train_acc=" << m.train_acc << " val_acc=" << m.val_acc << (improved ? " *" : "") << '\n';
    }
  }
  res.last = ck;
  res.history = ck.history;
  return res;
}

}  // namespace tcgl
