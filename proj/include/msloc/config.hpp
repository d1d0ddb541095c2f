// Run configuration: one JSON document covering data generation, model,
// training and localization. Unknown keys are rejected at every level.
#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msloc/model.hpp"
#include "msloc/pipeline.hpp"
#include "msloc/synthdata.hpp"
#include "msloc/trainer.hpp"

namespace msloc {

struct DataConfig {
  std::size_t num_samples = 2400;
  std::size_t height = 64;
  std::size_t width = 64;
  double noise_sigma = 0.1;
  SplitFractions split;
  std::vector<ClassSpec> classes = default_class_specs();
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "run";
  DataConfig data;
  ModelConfig model;  // input extents and class count follow `data`
  TrainConfig train;
  LocalizationParams localization;

  /// Model configuration with the data-derived fields filled in.
  ModelConfig model_config() const {
    ModelConfig m = model;
    m.input_height = data.height;
    m.input_width = data.width;
    m.num_classes = data.classes.size();
    return m;
  }

  std::vector<std::string> class_names() const {
    std::vector<std::string> n;
    for (const auto& c : data.classes) n.push_back(c.name);
    return n;
  }

  void validate() const {
    model_config().validate();
    train.validate();
    validate_specs(data.classes, data.height, data.width);
    if (!(localization.tau > 0.0 && localization.tau < 1.0))
      throw std::invalid_argument("localization.tau must lie in (0,1)");
    for (double t : localization.iou_thresholds)
      if (!(t >= 0.0 && t < 1.0)) throw std::invalid_argument("localization.iou_thresholds must lie in [0,1)");
    assign_splits(data.num_samples, data.split, seed);
  }
};

namespace detail {

using json = nlohmann::ordered_json;

inline void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw std::invalid_argument("config: unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  using json = nlohmann::ordered_json;
  json classes = json::array();
  for (const auto& s : c.data.classes)
    classes.push_back({{"name", s.name},
                       {"shape", to_string(s.shape)},
                       {"size_range", {s.size_min, s.size_max}},
                       {"intensity_range", {s.intensity_lo, s.intensity_hi}},
                       {"prevalence", s.prevalence}});
  json j;
  j["seed"] = c.seed;
  j["out"] = c.out;
  j["data"] = {{"num_samples", c.data.num_samples},
               {"height", c.data.height},
               {"width", c.data.width},
               {"noise_sigma", c.data.noise_sigma},
               {"split", {c.data.split.train, c.data.split.val, c.data.split.test}},
               {"classes", classes}};
  j["model"] = {{"num_blocks", c.model.num_blocks},
                {"layers_per_block", c.model.layers_per_block},
                {"growth_rate", c.model.growth_rate},
                {"stem_channels", c.model.stem_channels},
                {"kernel_size", c.model.kernel_size}};
  j["train"] = {{"batch_size", c.train.batch_size},
                {"lr", c.train.lr},
                {"plateau_factor", c.train.plateau_factor},
                {"plateau_patience", c.train.plateau_patience},
                {"plateau_threshold", c.train.plateau_threshold},
                {"max_epochs", c.train.max_epochs},
                {"min_lr", c.train.min_lr},
                {"adam_beta1", c.train.adam.beta1},
                {"adam_beta2", c.train.adam.beta2},
                {"adam_eps", c.train.adam.eps}};
  j["localization"] = {{"tau", c.localization.tau},
                       {"min_area", c.localization.min_area},
                       {"report_threshold", c.localization.report_threshold},
                       {"normalize", c.localization.normalize},
                       {"iou_thresholds", c.localization.iou_thresholds}};
  return j;
}

/// Overlays the keys present in `j` onto `base`.
inline RunConfig run_config_from_json(const nlohmann::ordered_json& j, RunConfig base = {}) {
  using detail::read_opt;
  using detail::reject_unknown;
  RunConfig c = std::move(base);
  try {
    reject_unknown(j, "", {"seed", "out", "data", "model", "train", "localization"});
    read_opt(j, "seed", c.seed);
    read_opt(j, "out", c.out);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      reject_unknown(d, "data", {"num_samples", "height", "width", "noise_sigma", "split", "classes"});
      read_opt(d, "num_samples", c.data.num_samples);
      read_opt(d, "height", c.data.height);
      read_opt(d, "width", c.data.width);
      read_opt(d, "noise_sigma", c.data.noise_sigma);
      if (d.contains("split")) {
        const auto f = d.at("split").get<std::vector<double>>();
        if (f.size() != 3) throw std::invalid_argument("config: data.split needs three fractions");
        c.data.split = {f[0], f[1], f[2]};
      }
      if (d.contains("classes")) {
        c.data.classes.clear();
        for (const auto& cj : d.at("classes")) {
          reject_unknown(cj, "data.classes[]", {"name", "shape", "size_range", "intensity_range", "prevalence"});
          ClassSpec s;
          s.name = cj.at("name").get<std::string>();
          read_opt(cj, "prevalence", s.prevalence);
          if (cj.contains("shape")) s.shape = shape_from_string(cj.at("shape").get<std::string>());
          if (cj.contains("size_range")) {
            const auto r = cj.at("size_range").get<std::vector<int>>();
            if (r.size() != 2) throw std::invalid_argument("config: size_range needs [min, max]");
            s.size_min = r[0];
            s.size_max = r[1];
          }
          if (cj.contains("intensity_range")) {
            const auto r = cj.at("intensity_range").get<std::vector<double>>();
            if (r.size() != 2) throw std::invalid_argument("config: intensity_range needs [lo, hi]");
            s.intensity_lo = r[0];
            s.intensity_hi = r[1];
          }
          c.data.classes.push_back(std::move(s));
        }
      }
    }
    if (j.contains("model")) {
      const auto& m = j.at("model");
      reject_unknown(m, "model", {"num_blocks", "layers_per_block", "growth_rate", "stem_channels", "kernel_size"});
      read_opt(m, "num_blocks", c.model.num_blocks);
      read_opt(m, "layers_per_block", c.model.layers_per_block);
      read_opt(m, "growth_rate", c.model.growth_rate);
      read_opt(m, "stem_channels", c.model.stem_channels);
      read_opt(m, "kernel_size", c.model.kernel_size);
    }
    if (j.contains("train")) {
      const auto& t = j.at("train");
      reject_unknown(t, "train",
                     {"batch_size", "lr", "plateau_factor", "plateau_patience", "plateau_threshold", "max_epochs",
                      "min_lr", "adam_beta1", "adam_beta2", "adam_eps"});
      read_opt(t, "batch_size", c.train.batch_size);
      read_opt(t, "lr", c.train.lr);
      read_opt(t, "plateau_factor", c.train.plateau_factor);
      read_opt(t, "plateau_patience", c.train.plateau_patience);
      read_opt(t, "plateau_threshold", c.train.plateau_threshold);
      read_opt(t, "max_epochs", c.train.max_epochs);
      read_opt(t, "min_lr", c.train.min_lr);
      read_opt(t, "adam_beta1", c.train.adam.beta1);
      read_opt(t, "adam_beta2", c.train.adam.beta2);
      read_opt(t, "adam_eps", c.train.adam.eps);
    }
    if (j.contains("localization")) {
      const auto& l = j.at("localization");
      reject_unknown(l, "localization", {"tau", "min_area", "report_threshold", "normalize", "iou_thresholds"});
      read_opt(l, "tau", c.localization.tau);
      read_opt(l, "min_area", c.localization.min_area);
      read_opt(l, "report_threshold", c.localization.report_threshold);
      read_opt(l, "normalize", c.localization.normalize);
      read_opt(l, "iou_thresholds", c.localization.iou_thresholds);
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config '" + path + "'");
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config '" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace msloc
