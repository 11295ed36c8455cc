// Trains the order-prediction model on a small synthetic set and prints a
// few held-out predictions.
#include <iostream>

#include "tcgl/tcgl.hpp"

int main(int argc, char** argv) {
  using namespace tcgl;
  TrainConfig cfg;
  cfg.epochs = argc > 1 ? std::atoi(argv[1]) : 40;
  cfg.val_fraction = 0.2;
  const Dataset data = generate_dataset(60, 10, cfg.seed);

  TrainOptions opt;
  opt.log = &std::cout;
  const TrainResult<double> run = train<double>(cfg, data, opt);

  std::cout << "\nheld-out tuples (best epoch " << run.best.best_epoch << ")\n";
  for (std::size_t idx : run.split.val) {
    Rng rng(derive_seed(idx, 0x70F));
    const SnippetTuple tuple = draw_tuple(data.videos[idx], cfg.model, rng);
    Tape<double> tape;
    const ModelVars<double> vars = bind(tape, run.best.params, false);
    const auto f = forward_sample(vars, cfg.model, tuple, rng);
    const OrderPrediction pred = predict_order(f.logits.value());
    std::cout << "video " << idx << "  shuffled as";
    for (auto k : tuple.order) std::cout << ' ' << k;
    std::cout << "  predicted";
    for (auto k : permutation_from_index(pred.permutation_id, tuple.size())) std::cout << ' ' << k;
    std::cout << "  p=" << pred.probabilities[pred.permutation_id] << '\n';
  }
  return 0;
}
