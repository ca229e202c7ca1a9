#include <cmath>
#include <numbers>

#include "doctest.h"
#include "pretram/patch.hpp"
#include "pretram/rng.hpp"
#include "pretram/scenegen.hpp"

using namespace pretram;

namespace {

constexpr double kPi = std::numbers::pi;

AgentTrack stationary_track(AgentType type, double x, double y) {
  AgentTrack t;
  t.type = type;
  t.states.assign(kTrackLen, AgentState{x, y, 1.0, 0.0, 0.0});
  return t;
}

SemanticMap test_map() { return generate_map(101, MapConfig{}); }

}  // namespace

TEST_CASE("crop at heading 0 in the map interior is an axis-aligned window copy") {
  SemanticMap m = test_map();
  const int c = 32;
  const double cx = 0.5 * m.width_m(), cy = 0.5 * m.height_m();
  MapPatch p = crop_agent_patch(m, cx, cy, 0.0, c);
  for (int py = 0; py < c; ++py)
    for (int px = 0; px < c; ++px) {
      const double wx = cx + (px - 0.5 * (c - 1)) * m.resolution;
      const double wy = cy + (py - 0.5 * (c - 1)) * m.resolution;
      CHECK(p.pixel(px, py) == m.color_at(wx, wy));
    }
}

TEST_CASE("crops at quarter-turn headings match the per-pixel inverse-rotation oracle") {
  SemanticMap m = test_map();
  const int c = 48;
  const double cx = 61.0, cy = 70.5;
  MapPatch p0 = crop_agent_patch(m, cx, cy, 0.0, c);
  for (int k = 0; k < 4; ++k) {
    const double heading = 0.5 * kPi * k;
    MapPatch pk = crop_agent_patch(m, cx, cy, heading, c);
    const double ca = std::cos(heading), sa = std::sin(heading);
    const double half = 0.5 * (c - 1);
    for (int py = 0; py < c; ++py)
      for (int px = 0; px < c; ++px) {
        // the oracle: the world offset of this pixel, rotated back into the
        // heading-0 frame, names the source pixel
        const double f = px - half, l = py - half;
        const int sx = static_cast<int>(std::llround(ca * f - sa * l + half));
        const int sy = static_cast<int>(std::llround(sa * f + ca * l + half));
        REQUIRE(sx >= 0);
        REQUIRE(sx < c);
        REQUIRE(sy >= 0);
        REQUIRE(sy < c);
        CHECK(pk.pixel(px, py) == p0.pixel(sx, sy));
      }
  }
}

TEST_CASE("corner crop fills out-of-map area with background and does not fail") {
  SemanticMap m = test_map();
  const int c = 64;
  MapPatch p = crop_agent_patch(m, 0.0, 0.0, 0.0, c);
  size_t background = 0;
  for (int py = 0; py < c; ++py)
    for (int px = 0; px < c; ++px)
      if (p.pixel(px, py) == palette::background) ++background;
  CHECK(background >= static_cast<size_t>(c) * c / 4);
}

TEST_CASE("decoupled patch centers are drivable and seed-deterministic") {
  SemanticMap m = test_map();
  auto a = sample_decoupled_patches(m, 50, 9, 32);
  auto b = sample_decoupled_patches(m, 50, 9, 32);
  REQUIRE(a.size() == 50);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(m.color_at(a[i].center_x, a[i].center_y) == palette::drivable);
    CHECK(a[i].center_x == b[i].center_x);
    CHECK(a[i].orientation == b[i].orientation);
    CHECK(a[i].pixels == b[i].pixels);
  }
  CHECK_THROWS_AS(sample_decoupled_patches(m, 0, 1, 32), ConfigError);
}

TEST_CASE("decoupled patch centers pass a chi-squared uniformity test") {
  MapConfig mc;
  mc.size_px = 64;
  SemanticMap m = generate_map(5, mc);
  std::vector<int> drivable;
  for (int py = 0; py < m.height_px; ++py)
    for (int px = 0; px < m.width_px; ++px)
      if (m.pixel(px, py) == palette::drivable) drivable.push_back(py * m.width_px + px);
  REQUIRE(drivable.size() > 100);

  const int n = 10000;
  auto patches = sample_decoupled_patches(m, n, 77, 16);
  // bin draws by position of their center pixel in the drivable list
  const int bins = 20;
  std::vector<int> counts(bins, 0);
  for (const MapPatch& p : patches) {
    const int px = static_cast<int>(p.center_x / m.resolution);
    const int py = static_cast<int>(p.center_y / m.resolution);
    const int pix = py * m.width_px + px;
    const auto it = std::lower_bound(drivable.begin(), drivable.end(), pix);
    REQUIRE(it != drivable.end());
    REQUIRE(*it == pix);
    const size_t rank = static_cast<size_t>(it - drivable.begin());
    ++counts[static_cast<size_t>(rank * bins / drivable.size())];
  }
  // bins hold nearly equal numbers of pixels; use exact expected counts
  double chi2 = 0.0;
  for (int bin = 0; bin < bins; ++bin) {
    const size_t lo = static_cast<size_t>(bin) * drivable.size() / bins;
    const size_t hi = static_cast<size_t>(bin + 1) * drivable.size() / bins;
    // ranks r with r*bins/n == bin are exactly [ceil(bin*n/bins), ...)
    size_t npix = 0;
    for (size_t r = 0; r < drivable.size(); ++r)
      if (r * bins / drivable.size() == static_cast<size_t>(bin)) ++npix;
    (void)lo;
    (void)hi;
    const double expect = static_cast<double>(n) * static_cast<double>(npix) / static_cast<double>(drivable.size());
    chi2 += (counts[static_cast<size_t>(bin)] - expect) * (counts[static_cast<size_t>(bin)] - expect) / expect;
  }
  // chi-squared critical value, 19 dof, alpha = 0.01
  CHECK(chi2 < 36.191);
}

TEST_CASE("normalize_history of a stationary agent is all (0,0,1,0,0,flag)") {
  NormalizedHistory h = normalize_history(stationary_track(AgentType::vehicle, 30.0, 40.0));
  REQUIRE(h.steps() == kHistLen + 1);
  for (int t = 0; t <= kHistLen; ++t) {
    const double* r = h.row(t);
    CHECK(r[0] == doctest::Approx(0.0));
    CHECK(r[1] == doctest::Approx(0.0));
    CHECK(r[2] == doctest::Approx(1.0));
    CHECK(r[3] == doctest::Approx(0.0));
    CHECK(r[4] == doctest::Approx(0.0));
    CHECK(r[5] == 1.0);
  }
  NormalizedHistory hp = normalize_history(stationary_track(AgentType::pedestrian, 1.0, 2.0));
  CHECK(hp.row(0)[5] == 0.0);
}

TEST_CASE("normalize_history inverse transform recovers world coordinates") {
  SemanticMap m = test_map();
  Scene s = generate_scene(m, 0, 3, SceneConfig{});
  for (const AgentTrack& t : s.agents) {
    NormalizedHistory h = normalize_history(t);
    const AgentState& cur = t.states[kHistLen];
    for (int i = 0; i <= kHistLen; ++i) {
      const double* r = h.row(i);
      const double wx = cur.x + cur.cos_h * r[0] - cur.sin_h * r[1];
      const double wy = cur.y + cur.sin_h * r[0] + cur.cos_h * r[1];
      CHECK(std::abs(wx - t.states[static_cast<size_t>(i)].x) < 1e-9);
      CHECK(std::abs(wy - t.states[static_cast<size_t>(i)].y) < 1e-9);
    }
  }
}

TEST_CASE("normalized history is invariant to pure translation") {
  SemanticMap m = test_map();
  Scene s = generate_scene(m, 0, 8, SceneConfig{});
  const AgentTrack& t = s.agents[0];
  AgentTrack shifted = t;
  for (AgentState& st : shifted.states) {
    st.x += 13.25;
    st.y -= 4.5;
  }
  NormalizedHistory a = normalize_history(t);
  NormalizedHistory b = normalize_history(shifted);
  for (size_t i = 0; i < a.rows.size(); ++i) CHECK(std::abs(a.rows[i] - b.rows[i]) < 1e-9);
}

TEST_CASE("joint_rotate: zero angle is the identity on both modalities") {
  SemanticMap m = test_map();
  Scene s = generate_scene(m, 0, 15, SceneConfig{});
  const AgentTrack& t = s.agents[0];
  RotatedPair r = joint_rotate(t, 0.0, 0.0);
  for (size_t i = 0; i < t.states.size(); ++i) {
    CHECK(r.track.states[i].x == doctest::Approx(t.states[i].x).epsilon(1e-12));
    CHECK(r.track.states[i].y == doctest::Approx(t.states[i].y).epsilon(1e-12));
  }
  CHECK(r.patch_heading_offset == 0.0);
  MapPatch before = crop_agent_patch(m, t.states[kHistLen].x, t.states[kHistLen].y, current_heading(t), 32);
  MapPatch after = crop_agent_patch(m, r.track.states[kHistLen].x, r.track.states[kHistLen].y,
                                    current_heading(r.track) + r.patch_heading_offset, 32);
  CHECK(before.pixels == after.pixels);
}

TEST_CASE("joint_rotate by pi twice returns the original trajectory") {
  SemanticMap m = test_map();
  Scene s = generate_scene(m, 0, 16, SceneConfig{});
  const AgentTrack& t = s.agents[2];
  RotatedPair once = joint_rotate(t, 0.0, kPi);
  RotatedPair twice = joint_rotate(once.track, once.patch_heading_offset, kPi);
  for (size_t i = 0; i < t.states.size(); ++i) {
    CHECK(std::abs(twice.track.states[i].x - t.states[i].x) < 1e-9);
    CHECK(std::abs(twice.track.states[i].y - t.states[i].y) < 1e-9);
    CHECK(std::abs(twice.track.states[i].cos_h - t.states[i].cos_h) < 1e-9);
  }
}

TEST_CASE("normalized history is unchanged by joint rotation; the re-cropped patch matches") {
  SemanticMap m = test_map();
  Rng rng(55);
  for (uint64_t seed = 20; seed < 24; ++seed) {
    Scene s = generate_scene(m, 0, seed, SceneConfig{});
    for (const AgentTrack& t : s.agents) {
      const double angle = rng.uniform(0.0, 2.0 * kPi);
      RotatedPair r = joint_rotate(t, 0.0, angle);
      NormalizedHistory before = normalize_history(t);
      NormalizedHistory after = normalize_history(r.track);
      for (size_t i = 0; i < before.rows.size(); ++i) CHECK(std::abs(before.rows[i] - after.rows[i]) <= 1e-6);

      MapPatch pb = crop_agent_patch(m, t.states[kHistLen].x, t.states[kHistLen].y, current_heading(t), 32);
      MapPatch pa = crop_agent_patch(m, r.track.states[kHistLen].x, r.track.states[kHistLen].y,
                                     current_heading(r.track) + r.patch_heading_offset, 32);
      CHECK(pb.pixels == pa.pixels);
    }
  }
}

TEST_CASE("mcl positives: dropout mode returns the identical patch") {
  SemanticMap m = test_map();
  MapPatch p = crop_agent_patch(m, 60.0, 60.0, 0.3, 32);
  MapPatch q = make_mcl_positive(p, MclAugMode::dropout, 123);
  CHECK(p.pixels == q.pixels);
}

TEST_CASE("mcl positives: flip applied twice restores the patch") {
  SemanticMap m = test_map();
  MapPatch p = crop_agent_patch(m, 58.0, 62.0, 1.1, 32);
  MapPatch q = make_mcl_positive(make_mcl_positive(p, MclAugMode::flip, 1), MclAugMode::flip, 2);
  CHECK(p.pixels == q.pixels);
  MapPatch f = make_mcl_positive(p, MclAugMode::flip, 1);
  CHECK(f.pixels != p.pixels);
}

TEST_CASE("mcl positives: gaussian noise stays in range and leaves the palette") {
  SemanticMap m = test_map();
  MapPatch p = crop_agent_patch(m, 64.0, 64.0, 0.0, 32);
  MapPatch q = make_mcl_positive(p, MclAugMode::gaussian_noise, 7);
  size_t off_palette = 0;
  for (int py = 0; py < q.context_px; ++py)
    for (int px = 0; px < q.context_px; ++px)
      if (!palette::is_member(q.pixel(px, py))) ++off_palette;
  CHECK(off_palette > static_cast<size_t>(q.context_px) * q.context_px / 2);

  MapPatch r1 = make_mcl_positive(p, MclAugMode::rotation, 3);
  MapPatch r2 = make_mcl_positive(p, MclAugMode::rotation, 3);
  CHECK(r1.pixels == r2.pixels);  // deterministic in seed
  MapPatch road = sample_decoupled_patches(m, 1, 4, 32)[0];  // has non-background content
  MapPatch cj = make_mcl_positive(road, MclAugMode::color_jitter, 3);
  CHECK(cj.pixels != road.pixels);
}

TEST_CASE("aug mode names round-trip") {
  for (auto mode : {MclAugMode::dropout, MclAugMode::rotation, MclAugMode::flip, MclAugMode::color_jitter,
                    MclAugMode::gaussian_noise})
    CHECK(parse_aug_mode(aug_mode_name(mode)) == mode);
  CHECK_THROWS_AS(parse_aug_mode("zoom"), ConfigError);
}
