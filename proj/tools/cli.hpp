#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tcgl/tcgl.hpp"

namespace tcgl::cli {

enum ExitCode { kOk = 0, kInvalid = 1, kRuntime = 2 };

namespace fs = std::filesystem;

struct ConfigFlags {
  std::optional<std::string> file;
  std::map<std::string, std::string> values;
};

/// Registers `--<key>` for every config key plus `--config`.
inline void add_config_flags(CLI::App& app, ConfigFlags& flags) {
  app.add_option_function<std::string>("--config", [&flags](const std::string& p) { flags.file = p; }, "key=value config file");
  for (const auto& key : config_schema()) {
    const std::string name = key.name;
    app.add_option_function<std::string>("--" + name, [&flags, name](const std::string& v) { flags.values[name] = v; }, key.help);
  }
}

/// flag > file > TCGL_SEED > default.
inline TrainConfig resolve_config(const ConfigFlags& flags) {
  TrainConfig cfg;
  if (const char* env = std::getenv("TCGL_SEED"); env && *env) set_config_value(cfg, "seed", env);
  if (flags.file) apply_config_file(cfg, *flags.file);
  for (const auto& [k, v] : flags.values) set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

inline std::vector<std::size_t> parse_ks(const std::string& text) {
  std::vector<std::size_t> ks;
  std::istringstream is(text);
  std::string tok;
  while (std::getline(is, tok, ',')) {
    const std::size_t k = detail::parse_number<std::size_t>("k", detail::trim(tok));
    if (k == 0) throw std::invalid_argument("retrieve: k must be positive");
    ks.push_back(k);
  }
  if (ks.empty()) throw std::invalid_argument("retrieve: --k needs at least one value");
  return ks;
}

inline std::vector<std::size_t> all_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = i;
  return v;
}

template <typename T>
int train_with(const TrainConfig& cfg, const Dataset& data, const fs::path& out, std::optional<fs::path> resume, int stop_after,
               std::ostream& os) {
  TrainOptions opt;
  opt.out = out;
  opt.resume = std::move(resume);
  opt.stop_after = stop_after;
  opt.log = &os;
  const auto res = train<T>(cfg, data, opt);
  os << "best epoch " << res.best.best_epoch << " (val loss " << res.best.best_val_loss << "), checkpoints in " << out.string() << '\n';
  return kOk;
}

template <typename T>
int eval_with(const fs::path& ckpt, const Dataset& data, const std::string& split, std::optional<std::uint64_t> seed,
              std::ostream& os) {
  const Checkpoint<T> ck = load_checkpoint<T>(ckpt);
  check_dataset(ck.config, data);
  const Split s = split_dataset(data.size(), ck.config.val_fraction, data.seed);
  std::vector<std::size_t> idx;
  if (split == "val") idx = s.val.empty() ? s.train : s.val;
  else if (split == "train") idx = s.train;
  else if (split == "all") idx = all_indices(data.size());
  else throw std::invalid_argument("eval-order: --split must be val, train or all");
  const OrderEval ev = eval_order(ck.params, ck.config.model, data, idx, seed.value_or(ck.config.seed), ck.config.threads);
  os << "split=" << split << " videos=" << ev.samples << " accuracy=" << detail::format_double(ev.accuracy)
     << " loss=" << detail::format_double(ev.loss) << '\n';
  return kOk;
}

struct RetrieveArgs {
  fs::path ckpt;
  fs::path dataset;
  std::optional<fs::path> queries;
  std::string ks = "1,5,10,20,50";
  fs::path out;
  std::optional<fs::path> gallery_out;
  std::optional<fs::path> plot_out;
  bool backbone_only = false;
  bool random_init = false;
};

template <typename T>
int retrieve_with(const RetrieveArgs& a, std::ostream& os) {
  const auto ks = parse_ks(a.ks);
  const Checkpoint<T> ck = load_checkpoint<T>(a.ckpt);
  const Dataset data = read_dataset(a.dataset);
  check_dataset(ck.config, data);
  Model<T> model = ck.params;
  if (a.random_init) {
    Rng init_rng(derive_seed(ck.config.seed, 0x1417));
    model = init_model<T>(ck.config.model, init_rng);
  }
  const Split s = split_dataset(data.size(), ck.config.val_fraction, data.seed);
  const int threads = ck.config.threads;
  const auto gallery = build_gallery(model, ck.config.model, data, s.train, "train", a.backbone_only, threads);
  EmbeddingGallery<T> queries;
  if (a.queries) {
    const Dataset q = read_dataset(*a.queries);
    check_dataset(ck.config, q);
    queries = build_gallery(model, ck.config.model, q, all_indices(q.size()), "test", a.backbone_only, threads);
  } else {
    if (s.val.empty()) throw std::invalid_argument("retrieve: no validation split to query with; pass --queries");
    queries = build_gallery(model, ck.config.model, data, s.val, "test", a.backbone_only, threads);
  }
  const auto acc = topk_accuracy(queries, gallery, std::span<const std::size_t>(ks), threads);
  std::ostringstream csv;
  for (std::size_t j = 0; j < ks.size(); ++j) csv << (j ? "," : "") << "top" << ks[j];
  csv << '\n';
  for (std::size_t j = 0; j < ks.size(); ++j) csv << (j ? "," : "") << detail::format_double(acc[j]);
  csv << '\n';
  if (!a.out.empty()) {
    if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
    std::ofstream f(a.out, std::ios::trunc);
    f << csv.str();
    if (!f) throw std::runtime_error("retrieve: cannot write " + a.out.string());
  }
  if (a.gallery_out) {
    save_gallery(gallery, *a.gallery_out / "gallery");
    save_gallery(queries, *a.gallery_out / "queries");
  }
  if (a.plot_out) {
    const EmbeddingGallery<T>* both[] = {&gallery, &queries};
    write_plot_csv<T>(*a.plot_out, both);
  }
  os << csv.str();
  return kOk;
}

/// Entry point shared by the binary and the tests.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Temporal contrastive graph learning on synthetic video"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "write a synthetic video dataset");
  std::string gen_out;
  std::size_t gen_count = 200, gen_frames = 64, gen_channels = 1, gen_h = 16, gen_w = 16;
  int gen_classes = 10;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--count", gen_count, "number of videos");
  gen->add_option("--classes", gen_classes, "number of synthetic classes");
  gen->add_option("--frames", gen_frames, "frames per video");
  gen->add_option("--channels", gen_channels, "channels per frame");
  gen->add_option("--height", gen_h, "frame height");
  gen->add_option("--width", gen_w, "frame width");
  gen->add_option("--seed", gen_seed, "random seed (default TCGL_SEED or 7)");

  // train
  auto* tr = app.add_subcommand("train", "train the model");
  ConfigFlags tr_flags;
  std::string tr_out;
  std::optional<std::string> tr_resume;
  int tr_stop = 0;
  add_config_flags(*tr, tr_flags);
  tr->add_option("--out", tr_out, "run directory (metrics.csv, best/, last/)")->required();
  tr->add_option("--resume", tr_resume, "checkpoint directory to continue from");
  tr->add_option("--stop-after", tr_stop, "stop once this many epochs are complete");

  // eval-order
  auto* ev = app.add_subcommand("eval-order", "order-prediction accuracy of a checkpoint");
  std::string ev_ckpt, ev_data, ev_split = "val";
  std::optional<std::uint64_t> ev_seed;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  ev->add_option("--dataset", ev_data, "dataset directory (default: the checkpoint's)");
  ev->add_option("--split", ev_split, "val, train or all");
  ev->add_option("--seed", ev_seed, "evaluation seed (default: the checkpoint's)");

  // retrieve
  auto* rt = app.add_subcommand("retrieve", "nearest-neighbour retrieval accuracy");
  RetrieveArgs ra;
  std::string rt_ckpt, rt_data, rt_queries, rt_out, rt_gallery, rt_plot;
  rt->add_option("--ckpt", rt_ckpt, "checkpoint directory")->required();
  rt->add_option("--dataset", rt_data, "gallery dataset (default: the checkpoint's); its training split is the gallery");
  rt->add_option("--queries", rt_queries, "query dataset (default: the validation split)");
  rt->add_option("--k", ra.ks, "comma-separated k values");
  rt->add_option("--out", rt_out, "CSV output file");
  rt->add_option("--save-gallery", rt_gallery, "directory for the gallery and query embeddings");
  rt->add_option("--plot-data", rt_plot, "CSV of every gallery and query embedding with its label");
  rt->add_flag("--backbone-only", ra.backbone_only, "embed with the encoder alone");
  rt->add_flag("--random-init", ra.random_init, "use the run's initial weights instead of the trained ones");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "gradient, oracle, view-statistics and determinism checks");
  std::string gc_out;
  std::optional<std::uint64_t> gc_seed;
  gc->add_option("--out", gc_out, "directory for report.txt and report.csv");
  gc->add_option("--seed", gc_seed, "random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return kInvalid;
  }

  auto env_seed = []() -> std::optional<std::uint64_t> {
    const char* env = std::getenv("TCGL_SEED");
    if (!env || !*env) return std::nullopt;
    return detail::parse_number<std::uint64_t>("TCGL_SEED", env);
  };

  try {
    if (gen->parsed()) {
      const std::uint64_t seed = gen_seed ? *gen_seed : env_seed().value_or(7);
      if (gen_classes <= 0) throw std::invalid_argument("gen-data: --classes must be positive");
      const Dataset ds = generate_dataset(gen_count, gen_classes, seed, VideoDims{gen_frames, gen_channels, gen_h, gen_w});
      write_dataset(ds, gen_out);
      out << "wrote " << ds.size() << " videos (" << gen_classes << " classes, seed " << seed << ") to " << gen_out << '\n';
      return kOk;
    }
    if (tr->parsed()) {
      TrainConfig cfg = resolve_config(tr_flags);
      if (cfg.dataset.empty()) throw std::invalid_argument("train: no dataset (use --dataset or a config file)");
      const Dataset data = read_dataset(cfg.dataset);
      check_dataset(cfg, data);
      out << "# resolved configuration\n" << config_to_text(cfg);
      std::optional<fs::path> resume;
      if (tr_resume) resume = fs::path(*tr_resume);
      return cfg.precision == 32 ? train_with<float>(cfg, data, tr_out, resume, tr_stop, out)
                                 : train_with<double>(cfg, data, tr_out, resume, tr_stop, out);
    }
    if (ev->parsed()) {
      const std::string dtype = archive_dtype(ev_ckpt);
      auto cfg_dataset = [&] {
        if (!ev_data.empty()) return ev_data;
        std::ifstream f(fs::path(ev_ckpt) / kConfigFile);
        TrainConfig c;
        apply_config_text(c, f);
        return c.dataset;
      }();
      const Dataset data = read_dataset(cfg_dataset);
      return dtype == "f32" ? eval_with<float>(ev_ckpt, data, ev_split, ev_seed, out)
                            : eval_with<double>(ev_ckpt, data, ev_split, ev_seed, out);
    }
    if (rt->parsed()) {
      ra.ckpt = rt_ckpt;
      if (rt_data.empty()) {
        std::ifstream f(fs::path(rt_ckpt) / kConfigFile);
        TrainConfig c;
        apply_config_text(c, f);
        rt_data = c.dataset;
      }
      ra.dataset = rt_data;
      if (!rt_queries.empty()) ra.queries = fs::path(rt_queries);
      ra.out = rt_out;
      if (!rt_gallery.empty()) ra.gallery_out = fs::path(rt_gallery);
      if (!rt_plot.empty()) ra.plot_out = fs::path(rt_plot);
      return archive_dtype(rt_ckpt) == "f32" ? retrieve_with<float>(ra, out) : retrieve_with<double>(ra, out);
    }
    if (gc->parsed()) {
      VerifyOptions opt;
      opt.seed = gc_seed ? *gc_seed : env_seed().value_or(7);
      const VerifyReport rep = verify_all(opt);
      out << rep.text() << "elapsed " << rep.seconds << " s\n";
      if (!gc_out.empty()) {
        fs::create_directories(gc_out);
        std::ofstream(fs::path(gc_out) / "report.txt") << rep.text();
        std::ofstream(fs::path(gc_out) / "report.csv") << rep.csv();
      }
      return rep.passed() ? kOk : kRuntime;
    }
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kInvalid;
}

}  // namespace tcgl::cli
