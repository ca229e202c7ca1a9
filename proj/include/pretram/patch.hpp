#pragma once

// Agent-centric and trajectory-decoupled map patches, agent-frame trajectory
// normalization, and the paired rotation augmentation. All operations are
// pure functions; patch resampling is nearest-neighbor so every pixel stays
// in the palette.

#include <cstdint>
#include <vector>

#include "pretram/scenegen.hpp"

namespace pretram {

struct MapPatch {
  int context_px = 64;
  std::vector<uint8_t> pixels;  // context_px * context_px * 3, row-major rgb
  double center_x = 0, center_y = 0;  // world meters
  double orientation = 0;             // patch +x axis in the world frame

  Rgb pixel(int px, int py) const {
    const size_t i = (static_cast<size_t>(py) * context_px + px) * 3;
    return Rgb{pixels[i], pixels[i + 1], pixels[i + 2]};
  }
};

// T_hist+1 rows of (x, y, cos h, sin h, v, type_flag) in the agent frame:
// current position at the origin, current heading along +x.
struct NormalizedHistory {
  static constexpr int kFeatures = 6;
  std::vector<double> rows;  // (kHistLen+1) * kFeatures

  int steps() const { return static_cast<int>(rows.size()) / kFeatures; }
  const double* row(int t) const { return rows.data() + static_cast<size_t>(t) * kFeatures; }
};

// patch centered at (position), rotated so `heading` maps to patch +x;
// out-of-map samples take the background color
MapPatch crop_agent_patch(const SemanticMap& map, double pos_x, double pos_y, double heading, int context_px);

// n patches with centers uniform over drivable pixels and orientations
// uniform in [0, 2pi)
std::vector<MapPatch> sample_decoupled_patches(const SemanticMap& map, int n, uint64_t seed, int context_px);

// rigid transform of the history window into the agent frame (speeds kept,
// type flag appended: vehicle 1, pedestrian 0)
NormalizedHistory normalize_history(const AgentTrack& track);

struct RotatedPair {
  AgentTrack track;
  // add to the track's current heading when cropping the paired patch; the
  // sum stays equal to the pre-rotation crop heading, which is what keeps
  // the patch consistent with the rotated trajectory
  double patch_heading_offset = 0;
};

// world-frame rigid rotation of the (trajectory, patch) pair about the
// agent's current position
RotatedPair joint_rotate(const AgentTrack& track, double patch_heading_offset, double angle);

enum class MclAugMode { dropout, rotation, flip, color_jitter, gaussian_noise };

MclAugMode parse_aug_mode(const std::string& name);
const char* aug_mode_name(MclAugMode mode);

// positive-sample construction for map contrastive learning; dropout mode
// returns the patch unchanged (the augmentation happens inside the encoder),
// the other modes apply the named pixel transform deterministically
MapPatch make_mcl_positive(const MapPatch& patch, MclAugMode mode, uint64_t seed);

double current_heading(const AgentTrack& track);

}  // namespace pretram
