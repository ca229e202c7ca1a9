#pragma once

// On-disk dataset format, version "1":
//   maps/map_<id>.ppm        binary PPM (P6, maxval 255), palette colors only
//   scenes_train.jsonl       one scene object per line
//   scenes_val.jsonl
//   scenes_test.jsonl
//   manifest.json            counts, config echo, format version

#include <cstdint>
#include <string>
#include <vector>

#include "pretram/scenegen.hpp"

namespace pretram {

struct DataConfig {
  uint64_t seed = 7;
  int maps = 8;
  int train_scenes = 200;
  int val_scenes = 20;
  int test_scenes = 50;
  MapConfig map;
  SceneConfig scene;
};

struct Dataset {
  std::vector<SemanticMap> maps;
  std::vector<Scene> train, val, test;
  DataConfig config;

  const std::vector<Scene>& split(const std::string& name) const {
    if (name == "train") return train;
    if (name == "val") return val;
    if (name == "test") return test;
    throw ConfigError("unknown split '" + name + "'");
  }
};

Dataset generate_dataset(const DataConfig& cfg);

void save_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

// scenes with a deterministic fraction of the originals (ceil(f*N), maps untouched)
std::vector<Scene> subsample_scenes(const std::vector<Scene>& scenes, double fraction, uint64_t seed);

}  // namespace pretram
