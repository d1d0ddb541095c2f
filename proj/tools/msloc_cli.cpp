#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "msloc/checkpoint.hpp"
#include "msloc/config.hpp"
#include "msloc/pipeline.hpp"
#include "msloc/trainer.hpp"

using namespace msloc;
namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool force = false;
  bool print_config = false;
};

RunConfig resolve(const Globals& g) {
  RunConfig c = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed) c.seed = *g.seed;
  if (!g.out.empty()) c.out = g.out;
  c.train.seed = c.seed;
  return c;
}

fs::path or_default(const std::string& given, const fs::path& fallback) { return given.empty() ? fallback : fs::path(given); }

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write '" + p.string() + "'");
  os << text;
  if (!os) throw std::runtime_error("failed writing '" + p.string() + "'");
}

std::string history_csv(const TrainHistory& h) {
  std::ostringstream os;
  write_history_csv(os, h);
  return os.str();
}

nlohmann::ordered_json weights_json(const Model& m, const std::vector<std::string>& names) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  const auto w = relevance_weights(m);
  for (std::size_t c = 0; c < w.size(); ++c) j[c < names.size() ? names[c] : std::to_string(c)] = w[c];
  return j;
}

std::size_t class_index(const std::string& s, const std::vector<std::string>& names) {
  for (std::size_t i = 0; i < names.size(); ++i)
    if (names[i] == s) return i;
  std::size_t pos = 0;
  std::size_t idx = 0;
  try {
    idx = std::stoul(s, &pos);
  } catch (const std::logic_error&) {
    pos = 0;
  }
  if (pos != s.size() || idx >= names.size()) {
    std::string known;
    for (const auto& n : names) known += (known.empty() ? "" : ", ") + n;
    throw std::invalid_argument("unknown class '" + s + "' (classes: " + known + ")");
  }
  return idx;
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const RunConfig& c, const fs::path& dir, bool force) {
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) {
      std::cerr << "error: '" << dir.string() << "' is not empty (use --force to overwrite)\n";
      return 1;
    }
    fs::remove_all(dir);
  }
  const Dataset ds = generate(c.data.classes, c.data.num_samples, c.data.height, c.data.width, c.data.noise_sigma, c.seed);
  const auto tags = assign_splits(ds.size(), c.data.split, c.seed);
  write_dataset(ds, tags, c.data.classes, dir);

  std::size_t counts[4] = {0, 0, 0, 0};
  for (Split t : tags) ++counts[static_cast<int>(t)];
  std::printf("wrote %zu samples (%zux%zu) to %s\n", ds.size(), ds.height, ds.width, dir.string().c_str());
  std::printf("split  train %zu  val %zu  test %zu\n", counts[1], counts[2], counts[3]);
  for (std::size_t k = 0; k < ds.num_classes(); ++k) {
    std::size_t pos = 0;
    for (const auto& s : ds.samples) pos += static_cast<std::size_t>(s.labels[k]);
    std::printf("class %-8s %-9s prevalence %.3f\n", ds.class_names[k].c_str(), to_string(c.data.classes[k].shape),
                static_cast<double>(pos) / static_cast<double>(ds.size()));
  }
  return 0;
}

int cmd_train(RunConfig c, const fs::path& data_dir, const fs::path& out_dir, const std::string& resume,
              std::optional<std::size_t> max_epochs) {
  if (max_epochs) c.train.max_epochs = *max_epochs;
  c.validate();
  const Dataset train_set = load_split(data_dir, Split::train), val_set = load_split(data_dir, Split::val);
  if (train_set.size() == 0 || val_set.size() == 0)
    throw std::runtime_error("dataset in '" + data_dir.string() + "' has an empty train or val split");
  fs::create_directories(out_dir);

  std::optional<Trainer> trainer;
  if (resume.empty()) {
    trainer.emplace(init_model(c.model_config(), derive_seed(c.seed, 1)), train_set, val_set, c.train);
  } else {
    const ModelConfig expect = c.model_config();
    TrainState st = load_train_state(resume);
    check_config_matches(expect, st.model.config);
    trainer.emplace(std::move(st), train_set, val_set, c.train);
    std::printf("resumed from %s after %zu epochs\n", resume.c_str(), trainer->state().epochs_done);
  }
  write_text(out_dir / "config.json", to_json(c).dump(2) + "\n");

  while (!trainer->finished()) {
    const EpochRecord& r = trainer->run_epoch();
    std::printf("epoch %3zu  train %.6f  val %.6f  lr %g\n", r.epoch, r.train_loss, r.val_loss, r.lr);
    std::fflush(stdout);
    save_train_state(trainer->state(), (out_dir / "last_state.bin").string());
    write_text(out_dir / "history.csv", history_csv(trainer->state().history));
  }
  const Model& best = trainer->state().best_model;
  save_checkpoint(best, (out_dir / "best.ckpt").string());
  save_train_state(trainer->state(), (out_dir / "last_state.bin").string());
  write_text(out_dir / "history.csv", history_csv(trainer->state().history));
  write_text(out_dir / "relevance_weights.json", weights_json(best, c.class_names()).dump(2) + "\n");
  std::printf("best val loss %.6f; wrote %s\n", trainer->state().best_val, (out_dir / "best.ckpt").string().c_str());
  return 0;
}

int cmd_eval(const RunConfig& c, const fs::path& ckpt, const fs::path& data_dir, const fs::path& out_dir,
             const std::string& mode_name, std::optional<double> tau, const std::vector<double>& thresholds) {
  LocalizationParams lp = c.localization;
  if (tau) lp.tau = *tau;
  if (!thresholds.empty()) lp.iou_thresholds = thresholds;
  std::vector<MapMode> modes;
  if (mode_name == "both")
    modes = {MapMode::multiscale, MapMode::final_block};
  else
    modes = {map_mode_from_string(mode_name)};
  const Model model = load_checkpoint(ckpt.string());
  const Dataset test = load_split(data_dir, Split::test);
  if (test.size() == 0) throw std::runtime_error("dataset in '" + data_dir.string() + "' has no test split");
  fs::create_directories(out_dir);
  for (MapMode m : modes) {
    const EvalReport r = evaluate_dataset(model, test, m, lp);
    std::ostringstream csv;
    write_report_csv(csv, r);
    const std::string stem = std::string("report_") + to_string(m);
    write_text(out_dir / (stem + ".csv"), csv.str());
    write_text(out_dir / (stem + ".json"), report_json(r).dump(2) + "\n");
    std::printf("# %s (tau %.2f)\n%s", to_string(m), lp.tau, csv.str().c_str());
  }
  return 0;
}

int cmd_localize(const RunConfig& c, const fs::path& ckpt, const fs::path& image_path, const std::string& cls,
                 const fs::path& out_dir) {
  const Model model = load_checkpoint(ckpt.string());
  const auto& mc = model.config;
  const GrayImage g = read_pgm(image_path.string());
  if (g.height != mc.input_height || g.width != mc.input_width)
    throw ShapeError("image is " + std::to_string(g.height) + "x" + std::to_string(g.width) + ", model expects " +
                     std::to_string(mc.input_height) + "x" + std::to_string(mc.input_width));
  std::vector<std::string> names = c.class_names();
  names.resize(mc.num_classes);
  for (std::size_t k = c.data.classes.size(); k < mc.num_classes; ++k) names[k] = std::to_string(k);
  const std::size_t k = class_index(cls, names);

  const std::vector<double> pixels = from_gray(g);
  const ForwardOutput fwd = forward(model, stack_images({&pixels}, g.height, g.width));
  fs::create_directories(out_dir);
  const auto blocks = resized_block_cams(model, fwd, 0, k, false);
  for (std::size_t b = 0; b < blocks.size(); ++b)
    write_pgm((out_dir / ("block_" + std::to_string(b + 1) + ".pgm")).string(), grid_to_gray(blocks[b]));
  const AttentionMap ms = multiscale_map(model, fwd, 0, k, c.localization.normalize);
  write_pgm((out_dir / "multiscale.pgm").string(), grid_to_gray(ms.grid));
  const auto dets = boxes_from_map(ms, c.localization.tau, c.localization.min_area);
  std::vector<BBox> boxes;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& d : dets) {
    boxes.push_back(d.bbox);
    arr.push_back({{"x", d.bbox.x}, {"y", d.bbox.y}, {"w", d.bbox.w}, {"h", d.bbox.h}, {"score", d.score}});
  }
  write_png((out_dir / "overlay.png").string(), render_overlay(Grid(g.height, g.width, pixels), ms.grid, boxes));
  write_text(out_dir / "boxes.json", arr.dump(2) + "\n");
  std::ostringstream w;
  const auto weights = relevance_weights(model);
  for (std::size_t b = 0; b < weights[k].size(); ++b) w << "block_" << b + 1 << ' ' << format_real(weights[k][b]) << '\n';
  write_text(out_dir / "weights.txt", w.str());
  std::printf("class %s  p %.4f  %zu box(es)  -> %s\n", names[k].c_str(), fwd.fused_probs[k], dets.size(),
              out_dir.string().c_str());
  return 0;
}

int cmd_inspect(const RunConfig& c, const fs::path& ckpt) {
  const Model model = load_checkpoint(ckpt.string());
  const auto w = relevance_weights(model);
  const auto names = c.class_names();
  std::printf("%-10s", "class");
  for (std::size_t b = 0; b < model.config.num_blocks; ++b) std::printf("  block_%zu ", b + 1);
  std::printf("  shallow\n");
  for (std::size_t k = 0; k < w.size(); ++k) {
    std::printf("%-10s", k < names.size() ? names[k].c_str() : std::to_string(k).c_str());
    double shallow = 0.0;
    for (std::size_t b = 0; b < w[k].size(); ++b) {
      std::printf("  %.6f", w[k][b]);
      if (b + 1 < w[k].size()) shallow += w[k][b];
    }
    std::printf("  %.6f\n", shallow);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multiscale class-activation localization on synthetic images"};
  app.require_subcommand(0, 1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Override the run seed");
  app.add_option("--out", g.out, "Run directory (default from config: run)");
  app.add_flag("--force", g.force, "Overwrite a non-empty data directory");
  app.add_flag("--print-config", g.print_config, "Print the effective configuration and exit");

  std::string data_dir, ckpt, resume, mode = "both", image, cls, sub_out;
  std::optional<std::size_t> max_epochs;
  std::optional<double> tau;
  std::vector<double> thresholds;

  auto* gen = app.add_subcommand("gen-data", "Generate and split a synthetic dataset");
  gen->add_option("--data-dir", data_dir, "Output directory (default <out>/data)");

  auto* tr = app.add_subcommand("train", "Train a model on a generated dataset");
  tr->add_option("--data-dir", data_dir, "Dataset directory (default <out>/data)");
  tr->add_option("--resume", resume, "Continue from a last_state.bin")->check(CLI::ExistingFile);
  tr->add_option("--max-epochs", max_epochs, "Total epoch budget");

  auto* ev = app.add_subcommand("eval", "Localize the test split and score the boxes");
  ev->add_option("--checkpoint", ckpt, "Model checkpoint (default <out>/train/best.ckpt)");
  ev->add_option("--data-dir", data_dir, "Dataset directory (default <out>/data)");
  ev->add_option("--mode", mode, "multiscale, final_block or both")->capture_default_str();
  ev->add_option("--tau", tau, "Binarization threshold");
  ev->add_option("--thresholds", thresholds, "IOU thresholds")->delimiter(',');
  ev->add_option("--report-dir", sub_out, "Output directory (default <out>/eval)");

  auto* lo = app.add_subcommand("localize", "Attention maps and boxes for one image");
  lo->add_option("--checkpoint", ckpt, "Model checkpoint (default <out>/train/best.ckpt)");
  lo->add_option("--image", image, "Input PGM")->required();
  lo->add_option("--class", cls, "Class name or index")->required();
  lo->add_option("--map-dir", sub_out, "Output directory (default <out>/localize/<image>_<class>)");

  auto* in = app.add_subcommand("inspect-weights", "Print the relevance weights of a checkpoint");
  in->add_option("--checkpoint", ckpt, "Model checkpoint (default <out>/train/best.ckpt)");

  CLI11_PARSE(app, argc, argv);

  try {
    const RunConfig c = resolve(g);
    if (g.print_config) {
      std::cout << to_json(c).dump(2) << '\n';
      return 0;
    }
    if (app.get_subcommands().empty()) {
      std::cout << app.help();
      return 1;
    }
    c.validate();
    const fs::path run = c.out;
    const fs::path data = or_default(data_dir, run / "data");
    const fs::path model_path = or_default(ckpt, run / "train" / "best.ckpt");
    if (*gen) return cmd_gen_data(c, data, g.force);
    if (*tr) return cmd_train(c, data, run / "train", resume, max_epochs);
    if (*ev) return cmd_eval(c, model_path, data, or_default(sub_out, run / "eval"), mode, tau, thresholds);
    if (*lo) {
      const std::string stem = fs::path(image).stem().string() + "_" + cls;
      return cmd_localize(c, model_path, image, cls, or_default(sub_out, run / "localize" / stem));
    }
    if (*in) return cmd_inspect(c, model_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
