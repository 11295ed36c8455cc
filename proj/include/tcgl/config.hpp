#pragma once

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tcgl/model.hpp"

namespace tcgl {

/// Everything a training run depends on. Batch 16, momentum 0.9, weight decay
/// 5e-4 and a single 10x learning-rate drop halfway follow the reference
/// recipe. The base rate is 1e-2 rather than 1e-3 because a 200-video epoch
/// is a dozen steps, not several hundred.
struct TrainConfig {
  int epochs = 200;
  int batch_size = 16;
  double lr = 0.01;
  int lr_decay_epoch = 0;  ///< 0 means epochs / 2
  double momentum = 0.9;
  double weight_decay = 0.0005;
  std::uint64_t seed = 7;
  double val_fraction = 0.1;
  int threads = 1;
  int precision = 64;
  std::string dataset;
  ModelConfig model;

  int decay_epoch() const { return lr_decay_epoch > 0 ? lr_decay_epoch : epochs / 2; }

  /// Learning rate used during (0-based) epoch `e`.
  double lr_at(int e) const { return e < decay_epoch() ? lr : lr * 0.1; }

  void validate() const {
    if (epochs <= 0) throw std::invalid_argument("config: epochs must be positive");
    if (batch_size <= 0) throw std::invalid_argument("config: batch_size must be positive");
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
    if (lr_decay_epoch < 0) throw std::invalid_argument("config: lr_decay_epoch must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("config: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0)) throw std::invalid_argument("config: weight_decay must be non-negative");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw std::invalid_argument("config: val_fraction must lie in [0, 1)");
    if (threads <= 0) throw std::invalid_argument("config: threads must be positive");
    if (precision != 32 && precision != 64) throw std::invalid_argument("config: precision must be 32 or 64");
    model.validate();
  }
};

namespace detail {

template <typename V>
V parse_number(std::string_view key, std::string_view text) {
  V v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) {
    throw std::invalid_argument("config: key '" + std::string(key) + "' expects a number, got '" + std::string(text) + "'");
  }
  return v;
}

inline bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "1" || text == "true" || text == "on") return true;
  if (text == "0" || text == "false" || text == "off") return false;
  throw std::invalid_argument("config: key '" + std::string(key) + "' expects true/false, got '" + std::string(text) + "'");
}

/// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(TrainConfig&, std::string_view)> set;
  std::function<std::string(const TrainConfig&)> get;
};

/// Every recognised key, in the order they are echoed.
inline const std::vector<ConfigKey>& config_schema() {
  using detail::format_double;
  using detail::parse_bool;
  using detail::parse_number;
  auto int_key = [](std::string name, std::string help, auto member) {
    return ConfigKey{name, std::move(help),
                     [member, name](TrainConfig& c, std::string_view v) { member(c) = parse_number<int>(name, v); },
                     [member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); }};
  };
  auto size_key = [](std::string name, std::string help, auto member) {
    return ConfigKey{name, std::move(help),
                     [member, name](TrainConfig& c, std::string_view v) { member(c) = parse_number<std::size_t>(name, v); },
                     [member](const TrainConfig& c) { return std::to_string(member(const_cast<TrainConfig&>(c))); }};
  };
  auto real_key = [](std::string name, std::string help, auto member) {
    return ConfigKey{name, std::move(help),
                     [member, name](TrainConfig& c, std::string_view v) { member(c) = parse_number<double>(name, v); },
                     [member](const TrainConfig& c) { return format_double(member(const_cast<TrainConfig&>(c))); }};
  };
  auto bool_key = [](std::string name, std::string help, auto member) {
    return ConfigKey{name, std::move(help),
                     [member, name](TrainConfig& c, std::string_view v) { member(c) = parse_bool(name, v); },
                     [member](const TrainConfig& c) { return std::string(member(const_cast<TrainConfig&>(c)) ? "true" : "false"); }};
  };
  static const std::vector<ConfigKey> schema = {
      int_key("epochs", "training epochs", [](TrainConfig& c) -> int& { return c.epochs; }),
      int_key("batch_size", "tuples per SGD step", [](TrainConfig& c) -> int& { return c.batch_size; }),
      real_key("lr", "initial learning rate", [](TrainConfig& c) -> double& { return c.lr; }),
      int_key("lr_decay_epoch", "epoch of the 10x learning-rate drop (0 = epochs/2)", [](TrainConfig& c) -> int& { return c.lr_decay_epoch; }),
      real_key("momentum", "SGD momentum", [](TrainConfig& c) -> double& { return c.momentum; }),
      real_key("weight_decay", "L2 weight decay on weight matrices", [](TrainConfig& c) -> double& { return c.weight_decay; }),
      ConfigKey{"seed", "global random seed",
                [](TrainConfig& c, std::string_view v) { c.seed = parse_number<std::uint64_t>("seed", v); },
                [](const TrainConfig& c) { return std::to_string(c.seed); }},
      size_key("n", "snippets per tuple", [](TrainConfig& c) -> std::size_t& { return c.model.layout.count; }),
      size_key("m", "frame-sets per snippet", [](TrainConfig& c) -> std::size_t& { return c.model.layout.framesets; }),
      size_key("l", "frames per snippet", [](TrainConfig& c) -> std::size_t& { return c.model.layout.length; }),
      size_key("p", "frames between snippets", [](TrainConfig& c) -> std::size_t& { return c.model.layout.interval; }),
      real_key("tau", "contrastive temperature", [](TrainConfig& c) -> double& { return c.model.tau; }),
      real_key("alpha", "weight of intra-snippet graph losses", [](TrainConfig& c) -> double& { return c.model.alpha; }),
      real_key("beta", "weight of the inter-snippet graph loss", [](TrainConfig& c) -> double& { return c.model.beta; }),
      real_key("lambda_g", "weight of the graph loss", [](TrainConfig& c) -> double& { return c.model.lambda_g; }),
      real_key("lambda_o", "weight of the order loss", [](TrainConfig& c) -> double& { return c.model.lambda_o; }),
      real_key("p_r", "view 1 edge removal probability", [](TrainConfig& c) -> double& { return c.model.p_r; }),
      real_key("p_m", "view 1 feature masking probability", [](TrainConfig& c) -> double& { return c.model.p_m; }),
      real_key("p_r2", "view 2 edge removal probability", [](TrainConfig& c) -> double& { return c.model.p_r2; }),
      real_key("p_m2", "view 2 feature masking probability", [](TrainConfig& c) -> double& { return c.model.p_m2; }),
      size_key("feature_dim", "encoder output width F", [](TrainConfig& c) -> std::size_t& { return c.model.feature_dim; }),
      size_key("gcn_dim", "GCN output width F_out (even)", [](TrainConfig& c) -> std::size_t& { return c.model.gcn_dim; }),
      size_key("proj_dim", "projection width (0 = gcn_dim)", [](TrainConfig& c) -> std::size_t& { return c.model.proj_dim; }),
      size_key("channels", "video channels", [](TrainConfig& c) -> std::size_t& { return c.model.channels; }),
      ConfigKey{"gate", "order-head gate activation: relu or sigmoid",
                [](TrainConfig& c, std::string_view v) {
                  if (v == "relu") c.model.gate = GateActivation::relu;
                  else if (v == "sigmoid") c.model.gate = GateActivation::sigmoid;
                  else throw std::invalid_argument("config: gate must be relu or sigmoid");
                },
                [](const TrainConfig& c) { return std::string(c.model.gate == GateActivation::relu ? "relu" : "sigmoid"); }},
      bool_key("directed", "directed chain edges", [](TrainConfig& c) -> bool& { return c.model.directed; }),
      bool_key("random_offset", "random snippet start offset", [](TrainConfig& c) -> bool& { return c.model.random_offset; }),
      real_key("val_fraction", "held-out fraction of videos", [](TrainConfig& c) -> double& { return c.val_fraction; }),
      int_key("threads", "worker threads per batch", [](TrainConfig& c) -> int& { return c.threads; }),
      int_key("precision", "floating point bits: 32 or 64", [](TrainConfig& c) -> int& { return c.precision; }),
      ConfigKey{"dataset", "dataset directory",
                [](TrainConfig& c, std::string_view v) { c.dataset = std::string(v); },
                [](const TrainConfig& c) { return c.dataset; }},
  };
  return schema;
}

inline const ConfigKey& config_key(std::string_view name) {
  for (const auto& k : config_schema())
    if (k.name == name) return k;
  throw std::invalid_argument("config: unknown key '" + std::string(name) + "'");
}

inline void set_config_value(TrainConfig& c, std::string_view key, std::string_view value) {
  config_key(key).set(c, detail::trim(value));
}

/// Applies `key=value` lines; blank lines and `#` comments are skipped.
inline void apply_config_text(TrainConfig& c, std::istream& in, const std::string& source = "config") {
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": expected key=value");
    }
    try {
      set_config_value(c, detail::trim(std::string_view(t).substr(0, eq)), std::string_view(t).substr(eq + 1));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(source + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

inline void apply_config_file(TrainConfig& c, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot read " + path.string());
  apply_config_text(c, in, path.string());
}

inline std::string config_to_text(const TrainConfig& c) {
  std::ostringstream os;
  for (const auto& k : config_schema()) os << k.name << '=' << k.get(c) << '\n';
  return os.str();
}

inline TrainConfig config_from_text(const std::string& text) {
  TrainConfig c;
  std::istringstream in(text);
  apply_config_text(c, in);
  return c;
}

}  // namespace tcgl
