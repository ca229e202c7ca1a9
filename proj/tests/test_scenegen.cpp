#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "pretram/dataset.hpp"
#include "pretram/scenegen.hpp"

using namespace pretram;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

fs::path temp_dir(const char* tag) {
  fs::path p = fs::temp_directory_path() / (std::string("pretram_test_") + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("generate_map is deterministic in the seed") {
  MapConfig cfg;
  SemanticMap a = generate_map(42, cfg);
  SemanticMap b = generate_map(42, cfg);
  CHECK(a.pixels == b.pixels);
  SemanticMap c = generate_map(43, cfg);
  CHECK(a.pixels != c.pixels);
}

TEST_CASE("generate_map drivable fraction within band and palette only") {
  MapConfig cfg;
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    SemanticMap m = generate_map(seed, cfg);
    size_t drivable = 0;
    for (int py = 0; py < m.height_px; ++py)
      for (int px = 0; px < m.width_px; ++px) {
        const Rgb c = m.pixel(px, py);
        CHECK(palette::is_member(c));
        if (c == palette::drivable) ++drivable;
      }
    const double frac = static_cast<double>(drivable) / (static_cast<double>(m.width_px) * m.height_px);
    CHECK(frac > 0.10);
    CHECK(frac < 0.60);
  }
}

TEST_CASE("every road_graph node lies on a drivable pixel") {
  SemanticMap m = generate_map(7, MapConfig{});
  CHECK(!m.road_graph.segments.empty());
  for (const Segment& s : m.road_graph.segments) {
    CHECK(m.color_at(s.ax, s.ay) == palette::drivable);
    CHECK(m.color_at(s.bx, s.by) == palette::drivable);
  }
}

TEST_CASE("generate_map rejects degenerate configs") {
  MapConfig cfg;
  cfg.lattice_spacing = 2.0;  // narrower than the road band
  CHECK_THROWS_AS(generate_map(1, cfg), ConfigError);
}

TEST_CASE("zero noise and zero turn probability gives a straight centerline track") {
  SemanticMap m = generate_map(5, MapConfig{});
  SceneConfig sc;
  sc.noise_sd = 0.0;
  sc.turn_prob = 0.0;
  Scene s = generate_scene(m, 0, 11, sc);
  for (const AgentTrack& t : s.agents) {
    if (t.type != AgentType::vehicle) continue;
    // all points share one axis coordinate equal to a road centerline
    const bool horizontal = std::abs(t.states.front().y - t.states.back().y) < 1e-9;
    for (const AgentState& st : t.states) {
      if (horizontal) {
        CHECK(st.y == doctest::Approx(t.states.front().y).epsilon(1e-12));
      } else {
        CHECK(st.x == doctest::Approx(t.states.front().x).epsilon(1e-12));
      }
    }
    const auto& lines = horizontal ? m.road_graph.horizontal_y : m.road_graph.vertical_x;
    const double coord = horizontal ? t.states.front().y : t.states.front().x;
    double best = 1e30;
    for (double l : lines) best = std::min(best, std::abs(l - coord));
    CHECK(best < 1e-9);
    // and uniform spacing at v*dt
    for (size_t i = 1; i < t.states.size(); ++i) {
      const double dx = t.states[i].x - t.states[i - 1].x;
      const double dy = t.states[i].y - t.states[i - 1].y;
      CHECK(std::sqrt(dx * dx + dy * dy) == doctest::Approx(sc.v_vehicle * kDt).epsilon(1e-9));
    }
  }
}

TEST_CASE("scene invariants: heading unit norm, bounds, displacement cap, track length") {
  SemanticMap m = generate_map(9, MapConfig{});
  SceneConfig sc;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    Scene s = generate_scene(m, 0, seed, sc);
    CHECK(s.agents.size() == static_cast<size_t>(sc.agents_per_scene));
    for (const AgentTrack& t : s.agents) {
      REQUIRE(t.states.size() == static_cast<size_t>(kTrackLen));
      double v_max = 0;
      for (const AgentState& st : t.states) v_max = std::max(v_max, st.speed);
      for (size_t i = 0; i < t.states.size(); ++i) {
        const AgentState& st = t.states[i];
        CHECK(std::abs(std::hypot(st.cos_h, st.sin_h) - 1.0) < 1e-6);
        CHECK(m.contains(st.x, st.y));
        if (i > 0) {
          const double d = std::hypot(st.x - t.states[i - 1].x, st.y - t.states[i - 1].y);
          CHECK(d <= v_max * kDt + 1e-6);
        }
      }
    }
  }
}

TEST_CASE("map-trajectory consistency over 100 seeded scenes") {
  SemanticMap m = generate_map(21, MapConfig{});
  SceneConfig sc;
  size_t veh_total = 0, veh_on_road = 0, ped_total = 0, ped_on_sidewalk = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    Scene s = generate_scene(m, 0, seed, sc);
    for (const AgentTrack& t : s.agents)
      for (const AgentState& st : t.states) {
        const Rgb c = m.color_at(st.x, st.y);
        if (t.type == AgentType::vehicle) {
          ++veh_total;
          if (c == palette::drivable) ++veh_on_road;
        } else {
          ++ped_total;
          if (c == palette::sidewalk) ++ped_on_sidewalk;
        }
      }
  }
  CHECK(static_cast<double>(veh_on_road) / static_cast<double>(veh_total) >= 0.99);
  CHECK(static_cast<double>(ped_on_sidewalk) / static_cast<double>(ped_total) >= 0.95);
}

TEST_CASE("scenes are deterministic in the seed") {
  SemanticMap m = generate_map(3, MapConfig{});
  Scene a = generate_scene(m, 0, 77, SceneConfig{});
  Scene b = generate_scene(m, 0, 77, SceneConfig{});
  REQUIRE(a.agents.size() == b.agents.size());
  for (size_t i = 0; i < a.agents.size(); ++i)
    for (size_t t = 0; t < a.agents[i].states.size(); ++t) {
      CHECK(a.agents[i].states[t].x == b.agents[i].states[t].x);
      CHECK(a.agents[i].states[t].y == b.agents[i].states[t].y);
    }
}

TEST_CASE("dataset save/load round-trip is lossless and idempotent") {
  DataConfig cfg;
  cfg.maps = 2;
  cfg.train_scenes = 4;
  cfg.val_scenes = 1;
  cfg.test_scenes = 2;
  Dataset ds = generate_dataset(cfg);

  const fs::path d1 = temp_dir("ds1");
  const fs::path d2 = temp_dir("ds2");
  save_dataset(ds, d1.string());
  Dataset loaded = load_dataset(d1.string());
  save_dataset(loaded, d2.string());

  for (const char* f : {"maps/map_0.ppm", "maps/map_1.ppm", "scenes_train.jsonl", "scenes_val.jsonl",
                        "scenes_test.jsonl", "manifest.json"})
    CHECK(read_file(d1 / f) == read_file(d2 / f));

  REQUIRE(loaded.train.size() == ds.train.size());
  for (size_t i = 0; i < ds.train.size(); ++i)
    for (size_t a = 0; a < ds.train[i].agents.size(); ++a)
      for (size_t t = 0; t < ds.train[i].agents[a].states.size(); ++t) {
        CHECK(std::abs(loaded.train[i].agents[a].states[t].x - ds.train[i].agents[a].states[t].x) < 1e-9);
        CHECK(std::abs(loaded.train[i].agents[a].states[t].y - ds.train[i].agents[a].states[t].y) < 1e-9);
      }
  CHECK(loaded.maps[0].pixels == ds.maps[0].pixels);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("loader rejects a raster with a non-palette pixel") {
  DataConfig cfg;
  cfg.maps = 1;
  cfg.train_scenes = 1;
  cfg.val_scenes = 0;
  cfg.test_scenes = 0;
  Dataset ds = generate_dataset(cfg);
  const fs::path d = temp_dir("badppm");
  save_dataset(ds, d.string());
  // corrupt one pixel
  auto bytes = read_file(d / "maps/map_0.ppm");
  bytes[bytes.size() - 2] = 13;
  std::ofstream(d / "maps/map_0.ppm", std::ios::binary) << bytes;
  CHECK_THROWS_AS(load_dataset(d.string()), IoError);
  fs::remove_all(d);
}

TEST_CASE("loader rejects a scene with the wrong state count") {
  DataConfig cfg;
  cfg.maps = 1;
  cfg.train_scenes = 1;
  cfg.val_scenes = 0;
  cfg.test_scenes = 0;
  Dataset ds = generate_dataset(cfg);
  ds.train[0].agents[0].states.pop_back();
  const fs::path d = temp_dir("badscene");
  save_dataset(ds, d.string());
  CHECK_THROWS_AS(load_dataset(d.string()), IoError);
  fs::remove_all(d);
}

TEST_CASE("subsample_scenes keeps ceil(f*N) deterministic scenes") {
  DataConfig cfg;
  cfg.maps = 1;
  cfg.train_scenes = 10;
  cfg.val_scenes = 0;
  cfg.test_scenes = 0;
  Dataset ds = generate_dataset(cfg);
  auto a = subsample_scenes(ds.train, 0.35, 5);
  auto b = subsample_scenes(ds.train, 0.35, 5);
  CHECK(a.size() == 4);  // ceil(3.5)
  REQUIRE(a.size() == b.size());
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i].agents[0].states[0].x == b[i].agents[0].states[0].x);
  auto c = subsample_scenes(ds.train, 1.0, 5);
  CHECK(c.size() == 10);
  CHECK_THROWS_AS(subsample_scenes(ds.train, 0.0, 5), ConfigError);
}
