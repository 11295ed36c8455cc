// Nearest-neighbour retrieval with trained and untrained embeddings.
#include <iostream>

#include "tcgl/tcgl.hpp"

int main(int argc, char** argv) {
  using namespace tcgl;
  TrainConfig cfg;
  cfg.epochs = argc > 1 ? std::atoi(argv[1]) : 60;
  const Dataset data = generate_dataset(100, 10, cfg.seed);
  const Dataset queries = generate_dataset(30, 10, cfg.seed + 1000);

  const TrainResult<double> run = train<double>(cfg, data);
  Rng init_rng(derive_seed(cfg.seed, 0x1417));
  const Model<double> untrained = init_model<double>(cfg.model, init_rng);

  std::vector<std::size_t> all(queries.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;

  for (const auto& [name, model] : {std::pair{"trained", &run.best.params}, std::pair{"untrained", &untrained}}) {
    const auto gallery = build_gallery(*model, cfg.model, data, run.split.train, "train");
    const auto q = build_gallery(*model, cfg.model, queries, all, "test");
    const auto acc = topk_accuracy(q, gallery, kRetrievalKs);
    std::cout << name << ":";
    for (std::size_t j = 0; j < acc.size(); ++j) std::cout << " top" << kRetrievalKs[j] << '=' << acc[j];
    std::cout << '\n';
    const auto nn = retrieve(std::span<const double>(q.embeddings.data().subspan(0, q.dim())), gallery, 5);
    std::cout << "  query 0 (class " << q.labels[0] << ") neighbours:";
    for (auto r : nn) std::cout << ' ' << gallery.labels[r];
    std::cout << '\n';
  }
  return 0;
}
