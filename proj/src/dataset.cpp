#include "pretram/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "pretram/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace pretram {

namespace {

std::string map_filename(int id) { return "map_" + std::to_string(id) + ".ppm"; }

void write_ppm(const SemanticMap& map, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << "P6\n" << map.width_px << " " << map.height_px << "\n255\n";
  out.write(reinterpret_cast<const char*>(map.pixels.data()), static_cast<std::streamsize>(map.pixels.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

SemanticMap read_ppm(const fs::path& path, double resolution) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError(path.string() + ": expected P6 magic, got '" + magic + "'");
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  if (!in || w <= 0 || h <= 0) throw IoError(path.string() + ": bad PPM header");
  if (maxval != 255) throw IoError(path.string() + ": maxval must be 255, got " + std::to_string(maxval));
  in.get();  // the single whitespace after the header
  SemanticMap map;
  map.width_px = w;
  map.height_px = h;
  map.resolution = resolution;
  map.pixels.resize(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(map.pixels.data()), static_cast<std::streamsize>(map.pixels.size()));
  if (in.gcount() != static_cast<std::streamsize>(map.pixels.size()))
    throw IoError(path.string() + ": truncated pixel data");
  for (size_t i = 0; i < map.pixels.size(); i += 3) {
    const Rgb c{map.pixels[i], map.pixels[i + 1], map.pixels[i + 2]};
    if (!palette::is_member(c))
      throw IoError(path.string() + ": non-palette pixel at index " + std::to_string(i / 3) + " (" +
                    std::to_string(c.r) + "," + std::to_string(c.g) + "," + std::to_string(c.b) + ")");
  }
  return map;
}

json scene_to_json(const Scene& s) {
  json agents = json::array();
  for (const auto& a : s.agents) {
    json states = json::array();
    for (const auto& st : a.states) states.push_back({st.x, st.y, st.cos_h, st.sin_h, st.speed});
    agents.push_back({{"type", agent_type_name(a.type)}, {"states", std::move(states)}});
  }
  return json{{"map_id", s.map_id}, {"hist_len", s.hist_len}, {"fut_len", s.fut_len}, {"dt", s.dt},
              {"agents", std::move(agents)}};
}

Scene scene_from_json(const json& j, const std::string& where) {
  Scene s;
  try {
    s.map_id = j.at("map_id").get<int>();
    s.hist_len = j.at("hist_len").get<int>();
    s.fut_len = j.at("fut_len").get<int>();
    s.dt = j.at("dt").get<double>();
    for (const auto& ja : j.at("agents")) {
      AgentTrack t;
      const std::string ty = ja.at("type").get<std::string>();
      if (ty == "vehicle")
        t.type = AgentType::vehicle;
      else if (ty == "pedestrian")
        t.type = AgentType::pedestrian;
      else
        throw IoError(where + ": unknown agent type '" + ty + "'");
      const auto& js = ja.at("states");
      const size_t expect = static_cast<size_t>(s.hist_len) + 1 + static_cast<size_t>(s.fut_len);
      if (js.size() != expect)
        throw IoError(where + ": agent has " + std::to_string(js.size()) + " states, expected " +
                      std::to_string(expect));
      for (const auto& row : js) {
        if (row.size() != 5) throw IoError(where + ": state row must have 5 values");
        AgentState st;
        st.x = row[0].get<double>();
        st.y = row[1].get<double>();
        st.cos_h = row[2].get<double>();
        st.sin_h = row[3].get<double>();
        st.speed = row[4].get<double>();
        t.states.push_back(st);
      }
      s.agents.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw IoError(where + ": " + e.what());
  }
  return s;
}

void write_scenes(const std::vector<Scene>& scenes, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  for (const auto& s : scenes) out << scene_to_json(s).dump() << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<Scene> read_scenes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<Scene> scenes;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = path.filename().string() + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError(where + ": " + e.what());
    }
    scenes.push_back(scene_from_json(j, where));
  }
  return scenes;
}

json config_to_json(const DataConfig& c) {
  return json{{"seed", c.seed},
              {"maps", c.maps},
              {"train_scenes", c.train_scenes},
              {"val_scenes", c.val_scenes},
              {"test_scenes", c.test_scenes},
              {"map",
               {{"size_px", c.map.size_px},
                {"resolution", c.map.resolution},
                {"lattice_spacing", c.map.lattice_spacing},
                {"road_halfwidth", c.map.road_halfwidth},
                {"sidewalk_width", c.map.sidewalk_width}}},
              {"scene",
               {{"agents_per_scene", c.scene.agents_per_scene},
                {"v_vehicle", c.scene.v_vehicle},
                {"v_ped", c.scene.v_ped},
                {"noise_sd", c.scene.noise_sd},
                {"turn_prob", c.scene.turn_prob}}}};
}

DataConfig config_from_json(const json& j) {
  DataConfig c;
  c.seed = j.at("seed").get<uint64_t>();
  c.maps = j.at("maps").get<int>();
  c.train_scenes = j.at("train_scenes").get<int>();
  c.val_scenes = j.at("val_scenes").get<int>();
  c.test_scenes = j.at("test_scenes").get<int>();
  const auto& m = j.at("map");
  c.map.size_px = m.at("size_px").get<int>();
  c.map.resolution = m.at("resolution").get<double>();
  c.map.lattice_spacing = m.at("lattice_spacing").get<double>();
  c.map.road_halfwidth = m.at("road_halfwidth").get<double>();
  c.map.sidewalk_width = m.at("sidewalk_width").get<double>();
  const auto& s = j.at("scene");
  c.scene.agents_per_scene = s.at("agents_per_scene").get<int>();
  c.scene.v_vehicle = s.at("v_vehicle").get<double>();
  c.scene.v_ped = s.at("v_ped").get<double>();
  c.scene.noise_sd = s.at("noise_sd").get<double>();
  c.scene.turn_prob = s.at("turn_prob").get<double>();
  return c;
}

}  // namespace

Dataset generate_dataset(const DataConfig& cfg) {
  if (cfg.maps < 1) throw ConfigError("generate_dataset: need at least one map");
  if (cfg.train_scenes < 1 || cfg.val_scenes < 0 || cfg.test_scenes < 0)
    throw ConfigError("generate_dataset: bad scene counts");
  Dataset ds;
  ds.config = cfg;
  ds.maps.reserve(static_cast<size_t>(cfg.maps));
  for (int i = 0; i < cfg.maps; ++i) ds.maps.push_back(generate_map(hash_u64(cfg.seed, 1, static_cast<uint64_t>(i)), cfg.map));
  auto make_split = [&](int count, uint64_t tag) {
    std::vector<Scene> out;
    out.reserve(static_cast<size_t>(count));
    for (int i = 0; i < count; ++i) {
      const int map_id = static_cast<int>(hash_u64(cfg.seed, tag, static_cast<uint64_t>(i)) % static_cast<uint64_t>(cfg.maps));
      out.push_back(generate_scene(ds.maps[static_cast<size_t>(map_id)], map_id,
                                   hash_u64(cfg.seed, tag + 100, static_cast<uint64_t>(i)), cfg.scene));
    }
    return out;
  };
  ds.train = make_split(cfg.train_scenes, 2);
  ds.val = make_split(cfg.val_scenes, 3);
  ds.test = make_split(cfg.test_scenes, 4);
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& dir) {
  const fs::path root(dir);
  std::error_code ec;
  fs::create_directories(root / "maps", ec);
  if (ec) throw IoError("cannot create " + (root / "maps").string() + ": " + ec.message());
  for (size_t i = 0; i < ds.maps.size(); ++i) write_ppm(ds.maps[i], root / "maps" / map_filename(static_cast<int>(i)));
  write_scenes(ds.train, root / "scenes_train.jsonl");
  write_scenes(ds.val, root / "scenes_val.jsonl");
  write_scenes(ds.test, root / "scenes_test.jsonl");

  json manifest{{"format_version", "1"},
                {"counts",
                 {{"maps", ds.maps.size()},
                  {"train_scenes", ds.train.size()},
                  {"val_scenes", ds.val.size()},
                  {"test_scenes", ds.test.size()}}},
                {"config", config_to_json(ds.config)}};
  std::ofstream out(root / "manifest.json", std::ios::binary);
  if (!out) throw IoError("cannot open " + (root / "manifest.json").string() + " for writing");
  out << manifest.dump(2) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream min(root / "manifest.json", std::ios::binary);
  if (!min) throw IoError("cannot open " + (root / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(min);
  } catch (const json::exception& e) {
    throw IoError("manifest.json: " + std::string(e.what()));
  }
  if (manifest.at("format_version").get<std::string>() != "1")
    throw IoError("manifest.json: unsupported format_version");
  Dataset ds;
  ds.config = config_from_json(manifest.at("config"));
  const size_t n_maps = manifest.at("counts").at("maps").get<size_t>();
  ds.maps.reserve(n_maps);
  for (size_t i = 0; i < n_maps; ++i)
    ds.maps.push_back(read_ppm(root / "maps" / map_filename(static_cast<int>(i)), ds.config.map.resolution));
  ds.train = read_scenes(root / "scenes_train.jsonl");
  ds.val = read_scenes(root / "scenes_val.jsonl");
  ds.test = read_scenes(root / "scenes_test.jsonl");
  for (const auto* split : {&ds.train, &ds.val, &ds.test})
    for (const auto& s : *split)
      if (s.map_id < 0 || static_cast<size_t>(s.map_id) >= n_maps)
        throw IoError("scene references unknown map_id " + std::to_string(s.map_id));
  return ds;
}

std::vector<Scene> subsample_scenes(const std::vector<Scene>& scenes, double fraction, uint64_t seed) {
  if (fraction <= 0.0 || fraction > 1.0) throw ConfigError("subsample_scenes: fraction must be in (0,1]");
  const size_t keep = static_cast<size_t>(std::ceil(fraction * static_cast<double>(scenes.size())));
  std::vector<size_t> idx(scenes.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  Rng rng(hash_u64(seed, 0x73756273));  // "subs"
  for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[static_cast<size_t>(rng.uniform_int(static_cast<int>(i)))]);
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  std::vector<Scene> out;
  out.reserve(keep);
  for (size_t i : idx) out.push_back(scenes[i]);
  return out;
}

}  // namespace pretram
