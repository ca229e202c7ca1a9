#include "pretram/patch.hpp"

#include <algorithm>
#include <cmath>

#include "pretram/rng.hpp"

namespace pretram {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

void put_pixel(std::vector<uint8_t>& px, int c, int x, int y, Rgb v) {
  const size_t i = (static_cast<size_t>(y) * c + x) * 3;
  px[i] = v.r;
  px[i + 1] = v.g;
  px[i + 2] = v.b;
}

}  // namespace

double current_heading(const AgentTrack& track) {
  const AgentState& cur = track.states.at(kHistLen);
  return std::atan2(cur.sin_h, cur.cos_h);
}

MapPatch crop_agent_patch(const SemanticMap& map, double pos_x, double pos_y, double heading, int context_px) {
  if (context_px < 8) throw ConfigError("crop_agent_patch: context_px must be >= 8");
  MapPatch patch;
  patch.context_px = context_px;
  patch.center_x = pos_x;
  patch.center_y = pos_y;
  patch.orientation = heading;
  patch.pixels.resize(static_cast<size_t>(context_px) * context_px * 3);
  const double c = std::cos(heading), s = std::sin(heading);
  const double half = 0.5 * (context_px - 1);
  const double res = map.resolution;
  for (int py = 0; py < context_px; ++py)
    for (int px = 0; px < context_px; ++px) {
      const double f = (px - half) * res;  // along heading
      const double l = (py - half) * res;  // left of heading
      const double wx = pos_x + f * c - l * s;
      const double wy = pos_y + f * s + l * c;
      put_pixel(patch.pixels, context_px, px, py, map.color_at(wx, wy));
    }
  return patch;
}

std::vector<MapPatch> sample_decoupled_patches(const SemanticMap& map, int n, uint64_t seed, int context_px) {
  if (n <= 0) throw ConfigError("sample_decoupled_patches: n must be positive");
  std::vector<int> drivable;
  for (int py = 0; py < map.height_px; ++py)
    for (int px = 0; px < map.width_px; ++px)
      if (map.pixel(px, py) == palette::drivable) drivable.push_back(py * map.width_px + px);
  if (drivable.empty()) throw ConfigError("sample_decoupled_patches: map has no drivable pixels");

  Rng rng(hash_u64(seed, 0x70617463));  // "patc"
  std::vector<MapPatch> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int pix = drivable[static_cast<size_t>(rng.uniform_int(static_cast<int>(drivable.size())))];
    const double cx = (pix % map.width_px + 0.5) * map.resolution;
    const double cy = (pix / map.width_px + 0.5) * map.resolution;
    const double ori = rng.uniform(0.0, kTwoPi);
    out.push_back(crop_agent_patch(map, cx, cy, ori, context_px));
  }
  return out;
}

NormalizedHistory normalize_history(const AgentTrack& track) {
  if (track.states.size() < static_cast<size_t>(kHistLen + 1))
    throw ShapeError("normalize_history: track needs at least " + std::to_string(kHistLen + 1) + " states");
  const AgentState& cur = track.states[kHistLen];
  const double c = cur.cos_h, s = cur.sin_h;
  const double flag = track.type == AgentType::vehicle ? 1.0 : 0.0;
  NormalizedHistory h;
  h.rows.resize(static_cast<size_t>(kHistLen + 1) * NormalizedHistory::kFeatures);
  for (int t = 0; t <= kHistLen; ++t) {
    const AgentState& st = track.states[static_cast<size_t>(t)];
    const double dx = st.x - cur.x, dy = st.y - cur.y;
    double* row = h.rows.data() + static_cast<size_t>(t) * NormalizedHistory::kFeatures;
    row[0] = c * dx + s * dy;
    row[1] = -s * dx + c * dy;
    row[2] = c * st.cos_h + s * st.sin_h;
    row[3] = -s * st.cos_h + c * st.sin_h;
    row[4] = st.speed;
    row[5] = flag;
  }
  return h;
}

RotatedPair joint_rotate(const AgentTrack& track, double patch_heading_offset, double angle) {
  const AgentState& cur = track.states.at(kHistLen);
  const double c = std::cos(angle), s = std::sin(angle);
  RotatedPair out;
  out.track = track;
  for (AgentState& st : out.track.states) {
    const double dx = st.x - cur.x, dy = st.y - cur.y;
    st.x = cur.x + c * dx - s * dy;
    st.y = cur.y + s * dx + c * dy;
    const double ch = st.cos_h, sh = st.sin_h;
    st.cos_h = c * ch - s * sh;
    st.sin_h = s * ch + c * sh;
  }
  out.patch_heading_offset = patch_heading_offset - angle;
  return out;
}

MclAugMode parse_aug_mode(const std::string& name) {
  if (name == "dropout") return MclAugMode::dropout;
  if (name == "rotation") return MclAugMode::rotation;
  if (name == "flip") return MclAugMode::flip;
  if (name == "color_jitter") return MclAugMode::color_jitter;
  if (name == "gaussian_noise") return MclAugMode::gaussian_noise;
  throw ConfigError("unknown mcl augmentation mode '" + name + "'");
}

const char* aug_mode_name(MclAugMode mode) {
  switch (mode) {
    case MclAugMode::dropout: return "dropout";
    case MclAugMode::rotation: return "rotation";
    case MclAugMode::flip: return "flip";
    case MclAugMode::color_jitter: return "color_jitter";
    case MclAugMode::gaussian_noise: return "gaussian_noise";
  }
  return "dropout";
}

MapPatch make_mcl_positive(const MapPatch& patch, MclAugMode mode, uint64_t seed) {
  const int c = patch.context_px;
  MapPatch out = patch;
  switch (mode) {
    case MclAugMode::dropout:
      return out;  // the positive is the identical instance
    case MclAugMode::flip: {
      for (int py = 0; py < c; ++py)
        for (int px = 0; px < c; ++px) put_pixel(out.pixels, c, px, py, patch.pixel(c - 1 - px, py));
      return out;
    }
    case MclAugMode::rotation: {
      Rng rng(hash_u64(seed, 0x726f74));
      const double a = rng.uniform(0.0, kTwoPi);
      const double ca = std::cos(a), sa = std::sin(a);
      const double half = 0.5 * (c - 1);
      for (int py = 0; py < c; ++py)
        for (int px = 0; px < c; ++px) {
          const double u = px - half, v = py - half;
          const int sx = static_cast<int>(std::floor(ca * u + sa * v + half + 0.5));
          const int sy = static_cast<int>(std::floor(-sa * u + ca * v + half + 0.5));
          const Rgb col = (sx >= 0 && sx < c && sy >= 0 && sy < c) ? patch.pixel(sx, sy) : palette::background;
          put_pixel(out.pixels, c, px, py, col);
        }
      return out;
    }
    case MclAugMode::color_jitter: {
      Rng rng(hash_u64(seed, 0x6a6974));
      double scale[3], shift[3];
      for (int ch = 0; ch < 3; ++ch) {
        scale[ch] = rng.uniform(0.6, 1.4);
        shift[ch] = rng.uniform(-30.0, 30.0);
      }
      for (size_t i = 0; i < out.pixels.size(); ++i) {
        const double v = scale[i % 3] * out.pixels[i] + shift[i % 3];
        out.pixels[i] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
      }
      return out;
    }
    case MclAugMode::gaussian_noise: {
      Rng rng(hash_u64(seed, 0x6e6f6973));
      for (size_t i = 0; i < out.pixels.size(); ++i) {
        const double v = out.pixels[i] + 20.0 * rng.normal();
        out.pixels[i] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
      }
      return out;
    }
  }
  return out;
}

}  // namespace pretram
