#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "evstereo/config.hpp"
#include "evstereo/errors.hpp"

using namespace evstereo;
namespace fs = std::filesystem;

TEST_CASE("defaults validate and survive the round trip") {
  RunConfig cfg;
  validate_config(cfg);

  fs::path dir = fs::temp_directory_path() / "evstereo_config_test";
  fs::create_directories(dir);
  std::string path = (dir / "config.json").string();
  cfg.events_left = "left.evt1";
  cfg.seed = 42;
  cfg.motion_scale = 2;
  cfg.time_slice = 20;
  cfg.detection.voxel_m = 0.4;
  cfg.detection.x_min_m = -3.2;
  cfg.detection.x_max_m = 3.2;
  cfg.detector.ny = cfg.detection.ny();
  save_config(path, cfg);
  RunConfig back = load_config(path);
  CHECK(back.events_left == "left.evt1");
  CHECK(back.seed == 42);
  CHECK(back.motion_scale == 2);
  CHECK(back.time_slice == 20);
  CHECK(back.detection.voxel_m == 0.4);
  CHECK(back.detector.ny == cfg.detector.ny);
  CHECK(back.dtau_us == 10000);

  // Serialization is idempotent: parse then serialize reproduces the text.
  std::string text = config_to_json(cfg);
  CHECK(config_to_json(config_from_json(text)) == text);
  fs::remove_all(dir);
}

TEST_CASE("an empty object yields the defaults") {
  RunConfig cfg = config_from_json("{}");
  CHECK(cfg.dtau_us == 10000);
  CHECK(cfg.motion_scale == 1);
  CHECK(cfg.time_slice == 10);
  CHECK(cfg.backbone.channels == 32);
  CHECK(cfg.max_train_events == 2000000);
}

TEST_CASE("validation rejects out-of-protocol values") {
  auto broken = [](auto mutate) {
    RunConfig c;
    mutate(c);
    return c;
  };
  CHECK_THROWS_AS(validate_config(broken([](RunConfig& c) { c.dtau_us = 0; })),
                  ContractError);
  CHECK_THROWS_AS(validate_config(broken([](RunConfig& c) { c.motion_scale = 3; })),
                  ContractError);
  CHECK_THROWS_AS(validate_config(broken([](RunConfig& c) { c.time_slice = 15; })),
                  ContractError);
  CHECK_THROWS_AS(
      validate_config(broken([](RunConfig& c) { c.t_end_us = c.t_start_us; })),
      ContractError);
  CHECK_THROWS_AS(validate_config(broken([](RunConfig& c) { c.detector.channels = 16; })),
                  ContractError);
  CHECK_THROWS_AS(validate_config(broken([](RunConfig& c) { c.detector.ny = 12; })),
                  ContractError);
  CHECK_THROWS_AS(validate_config(broken([](RunConfig& c) { c.learning_rate = 0.0; })),
                  ContractError);
  CHECK_THROWS_AS(validate_config(broken([](RunConfig& c) { c.nms_iou_threshold = 1.5; })),
                  ContractError);
  CHECK_THROWS_AS(validate_config(broken([](RunConfig& c) { c.max_train_events = 0; })),
                  ContractError);
}

TEST_CASE("config io errors are classified") {
  fs::path dir = fs::temp_directory_path() / "evstereo_config_err";
  fs::create_directories(dir);
  CHECK_THROWS_AS(load_config((dir / "absent.json").string()), IoError);
  std::ofstream((dir / "garbage.json").string()) << "{{{";
  CHECK_THROWS_AS(load_config((dir / "garbage.json").string()), IoError);
  std::ofstream((dir / "mistyped.json").string()) << R"({"dtau_us": "ten"})";
  CHECK_THROWS_AS(load_config((dir / "mistyped.json").string()), ContractError);
  std::ofstream((dir / "badenum.json").string()) << R"({"motion_scale": 8})";
  CHECK_THROWS_AS(load_config((dir / "badenum.json").string()), ContractError);
  fs::remove_all(dir);
}
