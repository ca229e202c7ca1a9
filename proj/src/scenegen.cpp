#include "pretram/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "pretram/rng.hpp"

namespace pretram {

namespace {

// crossing pads share the sidewalk width
double crossing_extent(const MapConfig& cfg) { return cfg.sidewalk_width; }

std::vector<double> road_positions(double span, double spacing, Rng& rng, double margin) {
  const int n = std::max(1, static_cast<int>((span - 2.0 * margin) / spacing) + 1);
  const double base = 0.5 * (span - (n - 1) * spacing);
  std::vector<double> xs(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double jitter = rng.uniform(-0.15 * spacing, 0.15 * spacing);
    xs[static_cast<size_t>(i)] = std::clamp(base + i * spacing + jitter, margin, span - margin);
  }
  std::sort(xs.begin(), xs.end());
  return xs;
}

double min_dist(const std::vector<double>& centers, double v) {
  double best = 1e30;
  for (double c : centers) best = std::min(best, std::abs(v - c));
  return best;
}

}  // namespace

SemanticMap generate_map(uint64_t seed, const MapConfig& cfg) {
  if (cfg.size_px < 16) throw ConfigError("generate_map: size_px must be >= 16");
  if (cfg.resolution <= 0) throw ConfigError("generate_map: resolution must be positive");
  const double road_width = 2.0 * (cfg.road_halfwidth + cfg.sidewalk_width);
  if (cfg.lattice_spacing < road_width)
    throw ConfigError("generate_map: lattice_spacing " + std::to_string(cfg.lattice_spacing) +
                      " is smaller than the road band " + std::to_string(road_width));
  const double span = cfg.size_px * cfg.resolution;
  const double margin = cfg.road_halfwidth + cfg.sidewalk_width + crossing_extent(cfg) + cfg.resolution;
  if (span <= 2.0 * margin) throw ConfigError("generate_map: road does not fit inside the map");

  Rng rng(hash_u64(seed, 0x6d6170));  // "map"
  SemanticMap map;
  map.width_px = cfg.size_px;
  map.height_px = cfg.size_px;
  map.resolution = cfg.resolution;
  map.road_halfwidth = cfg.road_halfwidth;
  map.sidewalk_width = cfg.sidewalk_width;
  map.road_graph.vertical_x = road_positions(span, cfg.lattice_spacing, rng, margin);
  map.road_graph.horizontal_y = road_positions(span, cfg.lattice_spacing, rng, margin);

  const double hw = cfg.road_halfwidth;
  const double sw = cfg.sidewalk_width;
  const double cw = crossing_extent(cfg);
  map.pixels.resize(static_cast<size_t>(cfg.size_px) * cfg.size_px * 3);
  for (int py = 0; py < cfg.size_px; ++py)
    for (int px = 0; px < cfg.size_px; ++px) {
      const double x = (px + 0.5) * cfg.resolution;
      const double y = (py + 0.5) * cfg.resolution;
      const double dxv = min_dist(map.road_graph.vertical_x, x);
      const double dyh = min_dist(map.road_graph.horizontal_y, y);
      Rgb c = palette::background;
      if (dxv <= hw || dyh <= hw)
        c = palette::drivable;
      else if (dxv <= hw + sw || dyh <= hw + sw)
        c = palette::sidewalk;
      else if (dxv <= hw + sw + cw && dyh <= hw + sw + cw)
        c = palette::crossing;  // corner pads at intersections
      const size_t i = (static_cast<size_t>(py) * cfg.size_px + px) * 3;
      map.pixels[i] = c.r;
      map.pixels[i + 1] = c.g;
      map.pixels[i + 2] = c.b;
    }

  // centerline segments between nodes; terminal nodes inset half a pixel
  const double t0 = 0.5 * cfg.resolution;
  const double t1 = span - 0.5 * cfg.resolution;
  for (double yh : map.road_graph.horizontal_y) {
    std::vector<double> xs = {t0};
    xs.insert(xs.end(), map.road_graph.vertical_x.begin(), map.road_graph.vertical_x.end());
    xs.push_back(t1);
    for (size_t i = 0; i + 1 < xs.size(); ++i) map.road_graph.segments.push_back({xs[i], yh, xs[i + 1], yh});
  }
  for (double xv : map.road_graph.vertical_x) {
    std::vector<double> ys = {t0};
    ys.insert(ys.end(), map.road_graph.horizontal_y.begin(), map.road_graph.horizontal_y.end());
    ys.push_back(t1);
    for (size_t i = 0; i + 1 < ys.size(); ++i) map.road_graph.segments.push_back({xv, ys[i], xv, ys[i + 1]});
  }
  return map;
}

namespace {

constexpr double kEps = 1e-9;

// Arc-coordinate walker on axis-aligned lines. `loff` is the lateral offset
// to the left of travel; positions are line + offset.
struct Walker {
  bool horizontal = true;
  double line = 0;  // fixed coordinate of the current line
  double pos = 0;   // coordinate along the travel axis
  int dir = 1;
  double loff = 0;
  bool forced = false;

  double x() const { return horizontal ? pos : line - dir * loff; }
  double y() const { return horizontal ? line + dir * loff : pos; }
};

struct Lattice {
  const SemanticMap* map = nullptr;
  double t0 = 0, t1 = 0;

  const std::vector<double>& cross_roads(bool horizontal_travel) const {
    return horizontal_travel ? map->road_graph.vertical_x : map->road_graph.horizontal_y;
  }
};

// nearest stop strictly ahead; returns false when it is the border terminal
bool next_stop(const std::vector<double>& stops, double pos, int dir, double t0, double t1, double& out) {
  bool found = false;
  double best = 0;
  for (double s : stops) {
    if (dir > 0 ? s > pos + kEps : s < pos - kEps) {
      if (!found || (dir > 0 ? s < best : s > best)) {
        best = s;
        found = true;
      }
    }
  }
  const double border = dir > 0 ? t1 : t0;
  if (found && (dir > 0 ? best < border : best > border)) {
    out = best;
    return true;
  }
  out = border;
  return false;
}

// Vehicle: travels road centerlines; turns at intersections with
// probability turn_prob, reverses at border terminals.
void advance_vehicle(Walker& w, const Lattice& lat, double dist, Rng& rng, double turn_prob) {
  double remaining = dist;
  int guard = 0;
  while (remaining > kEps && ++guard < 64) {
    double stop = 0;
    const bool interior = next_stop(lat.cross_roads(w.horizontal), w.pos, w.dir, lat.t0, lat.t1, stop);
    const double d = std::abs(stop - w.pos);
    if (remaining < d - kEps) {
      w.pos += w.dir * remaining;
      return;
    }
    w.pos = stop;
    remaining -= d;
    if (!interior) {
      w.dir = -w.dir;
      w.forced = true;
      continue;
    }
    if (rng.bernoulli(turn_prob)) {
      const double old_line = w.line;
      w.horizontal = !w.horizontal;
      w.line = stop;
      w.pos = old_line;
      w.dir = rng.bernoulli(0.5) ? 1 : -1;
    }
  }
}

// Pedestrian: travels sidewalk lines at road +- off; at a corner the only
// continuation that stays off the road is the perpendicular line headed away
// from the crossing road, so turns are structurally determined.
struct PedState {
  Walker w;
  int road_index = 0;  // which road this sidewalk flanks
  int side = 1;        // line = road + side * off
};

void advance_pedestrian(PedState& p, const Lattice& lat, double off, double dist) {
  double remaining = dist;
  int guard = 0;
  while (remaining > kEps && ++guard < 64) {
    const auto& cross = lat.cross_roads(p.w.horizontal);
    std::vector<double> stops;
    stops.reserve(cross.size() * 2);
    for (double c : cross) {
      stops.push_back(c - off);
      stops.push_back(c + off);
    }
    double stop = 0;
    const bool interior = next_stop(stops, p.w.pos, p.w.dir, lat.t0, lat.t1, stop);
    const double d = std::abs(stop - p.w.pos);
    if (remaining < d - kEps) {
      p.w.pos += p.w.dir * remaining;
      return;
    }
    p.w.pos = stop;
    remaining -= d;
    if (!interior) {
      p.w.dir = -p.w.dir;
      p.w.forced = true;
      continue;
    }
    // corner: identify the crossing road and its side
    int ci = 0;
    int cside = 1;
    double best = 1e30;
    for (size_t i = 0; i < cross.size(); ++i) {
      for (int s : {-1, 1}) {
        const double cand = cross[i] + s * off;
        if (std::abs(cand - stop) < best) {
          best = std::abs(cand - stop);
          ci = static_cast<int>(i);
          cside = s;
        }
      }
    }
    const int away_dir = p.side;  // away from the road this line flanks
    const double old_line = p.w.line;
    p.w.horizontal = !p.w.horizontal;
    p.w.line = stop;
    p.w.pos = old_line;
    p.w.dir = away_dir;
    p.road_index = ci;
    p.side = cside;
  }
}

std::vector<std::pair<double, double>> simulate_vehicle(const SemanticMap& map, Rng& rng, const SceneConfig& cfg) {
  const Lattice lat{&map, 0.5 * map.resolution, map.width_m() - 0.5 * map.resolution};
  const bool have_h = !map.road_graph.horizontal_y.empty();
  const bool have_v = !map.road_graph.vertical_x.empty();
  Walker w;
  w.horizontal = have_h && (!have_v || rng.bernoulli(0.5));
  const auto& lines = w.horizontal ? map.road_graph.horizontal_y : map.road_graph.vertical_x;
  w.line = lines[static_cast<size_t>(rng.uniform_int(static_cast<int>(lines.size())))];
  w.dir = rng.bernoulli(0.5) ? 1 : -1;
  w.pos = rng.uniform(lat.t0 + 1.0, lat.t1 - 1.0);
  w.loff = 0;

  const double clamp_l = std::max(0.0, map.road_halfwidth - map.resolution);
  const double step_len = cfg.v_vehicle * kDt;
  std::vector<std::pair<double, double>> pts;
  pts.reserve(kTrackLen);
  pts.emplace_back(w.x(), w.y());
  for (int t = 1; t < kTrackLen; ++t) {
    double target = 0.7 * w.loff + 0.714142842854285 * cfg.noise_sd * rng.normal();
    target = std::clamp(target, -clamp_l, clamp_l);
    double dl = std::clamp(target - w.loff, -0.5 * step_len, 0.5 * step_len);
    w.loff += dl;
    const double adv = std::sqrt(std::max(0.0, step_len * step_len - dl * dl));
    advance_vehicle(w, lat, adv, rng, cfg.turn_prob);
    pts.emplace_back(w.x(), w.y());
  }
  if (cfg.turn_prob == 0.0 && w.forced) return {};  // needs a straight runway
  return pts;
}

std::vector<std::pair<double, double>> simulate_pedestrian(const SemanticMap& map, Rng& rng, const SceneConfig& cfg) {
  const Lattice lat{&map, 0.5 * map.resolution, map.width_m() - 0.5 * map.resolution};
  const double off = map.road_halfwidth + 0.5 * map.sidewalk_width;
  const bool have_h = !map.road_graph.horizontal_y.empty();
  const bool have_v = !map.road_graph.vertical_x.empty();

  PedState p;
  p.w.horizontal = have_h && (!have_v || rng.bernoulli(0.5));
  const auto& roads = p.w.horizontal ? map.road_graph.horizontal_y : map.road_graph.vertical_x;
  p.road_index = rng.uniform_int(static_cast<int>(roads.size()));
  p.side = rng.bernoulli(0.5) ? 1 : -1;
  p.w.line = roads[static_cast<size_t>(p.road_index)] + p.side * off;
  if (p.w.line < lat.t0 + 0.5 || p.w.line > lat.t1 - 0.5) return {};
  p.w.dir = rng.bernoulli(0.5) ? 1 : -1;
  p.w.pos = rng.uniform(lat.t0 + 1.0, lat.t1 - 1.0);
  // spawn on a clean edge, away from road-crossing spans
  for (double c : lat.cross_roads(p.w.horizontal))
    if (std::abs(p.w.pos - c) < off + 0.5) return {};

  const double clamp_l = std::max(0.0, 0.5 * map.sidewalk_width - 0.75 * map.resolution - 0.05);
  const double noise = std::min(cfg.noise_sd, 0.15);
  const double step_len = cfg.v_ped * kDt;
  std::vector<std::pair<double, double>> pts;
  pts.reserve(kTrackLen);
  pts.emplace_back(p.w.x(), p.w.y());
  for (int t = 1; t < kTrackLen; ++t) {
    double target = 0.7 * p.w.loff + 0.714142842854285 * noise * rng.normal();
    target = std::clamp(target, -clamp_l, clamp_l);
    double dl = std::clamp(target - p.w.loff, -0.5 * step_len, 0.5 * step_len);
    p.w.loff += dl;
    const double adv = std::sqrt(std::max(0.0, step_len * step_len - dl * dl));
    advance_pedestrian(p, lat, off, adv);
    pts.emplace_back(p.w.x(), p.w.y());
  }
  return pts;
}

}  // namespace

Scene generate_scene(const SemanticMap& map, int map_id, uint64_t seed, const SceneConfig& cfg) {
  if (map.road_graph.vertical_x.empty() && map.road_graph.horizontal_y.empty())
    throw ConfigError("generate_scene: map has an empty road graph");
  if (cfg.agents_per_scene < 1) throw ConfigError("generate_scene: agents_per_scene must be >= 1");

  Scene scene;
  scene.map_id = map_id;
  Rng rng(hash_u64(seed, 0x7363656e));  // "scen"

  for (int agent_idx = 0; agent_idx < cfg.agents_per_scene; ++agent_idx) {
    const AgentType type = agent_idx % 2 == 0 ? AgentType::vehicle : AgentType::pedestrian;
    AgentTrack track;
    track.type = type;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      std::vector<std::pair<double, double>> points =
          type == AgentType::vehicle ? simulate_vehicle(map, rng, cfg) : simulate_pedestrian(map, rng, cfg);
      if (points.empty()) continue;
      track.states.assign(points.size(), AgentState{});
      for (size_t t = 0; t < points.size(); ++t) {
        track.states[t].x = points[t].first;
        track.states[t].y = points[t].second;
      }
      for (size_t t = 1; t < track.states.size(); ++t) {
        const double dx = track.states[t].x - track.states[t - 1].x;
        const double dy = track.states[t].y - track.states[t - 1].y;
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d > 1e-9) {
          track.states[t].cos_h = dx / d;
          track.states[t].sin_h = dy / d;
          track.states[t].speed = d / kDt;
        } else {
          track.states[t].cos_h = track.states[t - 1].cos_h;
          track.states[t].sin_h = track.states[t - 1].sin_h;
          track.states[t].speed = 0.0;
        }
      }
      track.states[0].cos_h = track.states[1].cos_h;
      track.states[0].sin_h = track.states[1].sin_h;
      track.states[0].speed = track.states[1].speed;
      placed = true;
    }
    if (!placed) throw ConfigError("generate_scene: no feasible spawn location for agent " + std::to_string(agent_idx));
    scene.agents.push_back(std::move(track));
  }
  return scene;
}

}  // namespace pretram
