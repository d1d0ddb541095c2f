// End-to-end run at toy scale: generate, train, compare the two map modes.
#include <cstdio>

#include "msloc/pipeline.hpp"
#include "msloc/trainer.hpp"

using namespace msloc;

int main() {
  const std::vector<ClassSpec> specs{
      {"small", ShapeKind::disk, 3, 6, 0.6, 1.0, 0.5},
      {"large", ShapeKind::ellipse, 12, 24, 0.3, 0.6, 0.5},
  };
  const Dataset ds = generate(specs, 300, 32, 32, 0.1, 3);
  const SplitDatasets parts = split(ds, {}, 3);

  ModelConfig mc;
  mc.input_height = mc.input_width = 32;
  mc.layers_per_block = 2;
  mc.growth_rate = 8;
  TrainConfig tc;
  tc.max_epochs = 8;
  tc.seed = 3;
  auto [model, history] = train(init_model(mc, 3), parts.train, parts.val, tc, [](const EpochRecord& e) {
    std::printf("epoch %zu  train %.4f  val %.4f\n", e.epoch, e.train_loss, e.val_loss);
  });

  const LocalizationParams lp;
  for (MapMode mode : {MapMode::multiscale, MapMode::final_block}) {
    const EvalReport r = evaluate_dataset(model, parts.test, mode, lp);
    for (const auto& row : r.rows)
      std::printf("%-11s %-5s IOU>%.1f  acc %.3f  afp %.3f\n", to_string(mode), row.class_name.c_str(),
                  row.iou_threshold, row.accuracy, row.afp);
  }
  const auto w = relevance_weights(model);
  for (std::size_t c = 0; c < w.size(); ++c) {
    std::printf("w[%s] =", ds.class_names[c].c_str());
    for (double v : w[c]) std::printf(" %.3f", v);
    std::printf("\n");
  }
}
