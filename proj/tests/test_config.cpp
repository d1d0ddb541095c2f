#include <gtest/gtest.h>

#include "msloc/config.hpp"

using namespace msloc;
using json = nlohmann::ordered_json;

TEST(Config, DefaultsAreValid) {
  const RunConfig c;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.data.num_samples, 2400u);
  EXPECT_EQ(c.model_config().num_classes, 2u);
  EXPECT_EQ(c.localization.tau, 0.5);
  EXPECT_EQ(c.localization.min_area, 4u);
  EXPECT_EQ(c.train.plateau_patience, 5u);
  EXPECT_EQ(c.class_names(), (std::vector<std::string>{"small", "large"}));
}

TEST(Config, JsonRoundTrip) {
  RunConfig c;
  c.seed = 17;
  c.out = "elsewhere";
  c.data.height = c.data.width = 32;
  c.data.classes = {{"dots", ShapeKind::rectangle, 2, 5, 0.2, 0.9, 0.25}};
  c.model.num_blocks = 2;
  c.train.lr = 3e-4;
  c.localization.iou_thresholds = {0.1, 0.7};
  c.localization.normalize = false;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.data.classes, c.data.classes);
  EXPECT_EQ(back.model_config().input_height, 32u);
  EXPECT_EQ(back.model_config().num_classes, 1u);
}

TEST(Config, PartialOverlayKeepsDefaults) {
  const RunConfig c = run_config_from_json(json::parse(R"({"train": {"max_epochs": 3}})"));
  EXPECT_EQ(c.train.max_epochs, 3u);
  EXPECT_EQ(c.train.lr, 1e-3);
  EXPECT_EQ(c.data.classes, default_class_specs());
}

TEST(Config, UnknownKeysNamed) {
  auto message = [](const char* text) {
    try {
      run_config_from_json(json::parse(text));
    } catch (const std::invalid_argument& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(R"({"sede": 1})").find("'sede'"), std::string::npos);
  EXPECT_NE(message(R"({"model": {"blocks": 2}})").find("'model.blocks'"), std::string::npos);
  EXPECT_NE(message(R"({"data": {"classes": [{"name": "a", "color": 1}]}})").find("color"), std::string::npos);
  EXPECT_NE(message(R"({"train": {"lr": "fast"}})").find("config:"), std::string::npos);
  EXPECT_NE(message(R"({"data": {"split": [0.5, 0.5]}})").find("three"), std::string::npos);
}

TEST(Config, ValidateRejects) {
  RunConfig c;
  c.localization.tau = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.data.height = 60;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.model.num_blocks = 6;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.localization.iou_thresholds = {0.5, 1.0};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.data.num_samples = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = RunConfig{};
  c.train.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(Config, MapModeNames) {
  EXPECT_EQ(map_mode_from_string("multiscale"), MapMode::multiscale);
  EXPECT_EQ(map_mode_from_string("final_block"), MapMode::final_block);
  EXPECT_THROW(map_mode_from_string("both"), std::invalid_argument);
}
