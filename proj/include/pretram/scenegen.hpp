#pragma once

// Procedural semantic maps and map-consistent agent tracks: an axis-aligned
// road lattice with flanking sidewalks, plus vehicles that follow lane
// centerlines and pedestrians that walk block perimeters. Everything is a
// pure function of (seed, config).

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pretram/errors.hpp"

namespace pretram {

struct Rgb {
  uint8_t r = 0, g = 0, b = 0;
  bool operator==(const Rgb&) const = default;
};

// Frozen 4-color palette of the map format.
namespace palette {
inline constexpr Rgb background{255, 255, 255};
inline constexpr Rgb drivable{100, 100, 100};
inline constexpr Rgb sidewalk{0, 180, 0};
inline constexpr Rgb crossing{230, 200, 0};

inline bool is_member(const Rgb& c) {
  return c == background || c == drivable || c == sidewalk || c == crossing;
}
}  // namespace palette

// Axis-aligned centerline segment in world meters.
struct Segment {
  double ax = 0, ay = 0, bx = 0, by = 0;
};

struct RoadGraph {
  std::vector<double> vertical_x;    // x of vertical road centerlines
  std::vector<double> horizontal_y;  // y of horizontal road centerlines
  std::vector<Segment> segments;     // centerline pieces between nodes
};

struct SemanticMap {
  int width_px = 0, height_px = 0;
  double resolution = 0.5;  // meters per pixel
  std::vector<uint8_t> pixels;  // rgb, row-major, row 0 at world y=0
  RoadGraph road_graph;
  // generator geometry, used by trajectory simulation; not part of the
  // serialized raster format
  double road_halfwidth = 0;
  double sidewalk_width = 0;

  double width_m() const { return width_px * resolution; }
  double height_m() const { return height_px * resolution; }

  Rgb pixel(int px, int py) const {
    const size_t i = (static_cast<size_t>(py) * width_px + px) * 3;
    return Rgb{pixels[i], pixels[i + 1], pixels[i + 2]};
  }

  bool contains(double x, double y) const { return x >= 0 && y >= 0 && x < width_m() && y < height_m(); }

  // color under a world point; background for out-of-bounds
  Rgb color_at(double x, double y) const {
    if (!contains(x, y)) return palette::background;
    int px = static_cast<int>(x / resolution);
    int py = static_cast<int>(y / resolution);
    px = std::min(px, width_px - 1);
    py = std::min(py, height_px - 1);
    return pixel(px, py);
  }
};

struct MapConfig {
  int size_px = 256;
  double resolution = 0.5;
  double lattice_spacing = 32.0;
  double road_halfwidth = 3.0;
  double sidewalk_width = 1.5;
};

enum class AgentType { vehicle, pedestrian };

inline const char* agent_type_name(AgentType t) { return t == AgentType::vehicle ? "vehicle" : "pedestrian"; }

struct AgentState {
  double x = 0, y = 0;
  double cos_h = 1, sin_h = 0;
  double speed = 0;
};

// T_hist past + current + T_fut future states at dt seconds.
struct AgentTrack {
  AgentType type = AgentType::vehicle;
  std::vector<AgentState> states;
};

inline constexpr int kHistLen = 4;   // past steps before the current one
inline constexpr int kFutLen = 12;   // prediction horizon steps
inline constexpr double kDt = 0.5;   // seconds per step
inline constexpr int kTrackLen = kHistLen + 1 + kFutLen;

struct Scene {
  int map_id = 0;
  int hist_len = kHistLen;
  int fut_len = kFutLen;
  double dt = kDt;
  std::vector<AgentTrack> agents;
};

struct SceneConfig {
  int agents_per_scene = 6;
  double v_vehicle = 8.0;
  double v_ped = 1.4;
  double noise_sd = 0.3;
  double turn_prob = 0.5;
};

SemanticMap generate_map(uint64_t seed, const MapConfig& cfg);
Scene generate_scene(const SemanticMap& map, int map_id, uint64_t seed, const SceneConfig& cfg);

}  // namespace pretram
