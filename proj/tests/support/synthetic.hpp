#pragma once

// Synthetic corpora for tests: straight-line and turning vessels with known
// kinematics.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "fedvlf/ais.hpp"
#include "fedvlf/features.hpp"
#include "fedvlf/rng.hpp"

namespace fedvlf::testing {

inline constexpr double kKnotToMs = 1852.0 / 3600.0;

struct MotionSpec {
  std::uint64_t mmsi = 227000001;
  int vessel_type = 0;
  double lon0 = -4.5;
  double lat0 = 48.0;
  double t0 = 1'443'657'600.0;  // 2015-10-01
  double speed_kn = 10.0;
  double course_deg = 90.0;
  double turn_deg_per_step = 0.0;
  int points = 60;
  double dt_base_s = 60.0;
  double dt_jitter = 0.1;       // relative
  double speed_noise_kn = 0.05;
  double course_noise_deg = 0.3;
};

// Positions integrate the true (noise-free) kinematics; the reported speed and
// course carry small noise so no feature is constant.
inline ais::VesselTrajectory make_track(const MotionSpec& shape, Rng& rng) {
  const auto ref = features::ProjectionRef::centered_on(shape.lon0, shape.lat0);
  ais::VesselTrajectory traj;
  traj.mmsi = shape.mmsi;
  traj.vessel_type = shape.vessel_type;
  double x = 0.0, y = 0.0, t = shape.t0, course = shape.course_deg;
  const double v = shape.speed_kn * kKnotToMs;
  for (int i = 0; i < shape.points; ++i) {
    if (i > 0) {
      const double dt = std::round(shape.dt_base_s * (1.0 + shape.dt_jitter * rng.uniform(-1.0, 1.0)));
      const double rad = course * std::numbers::pi / 180.0;
      x += v * dt * std::sin(rad);
      y += v * dt * std::cos(rad);
      t += std::max(1.0, dt);
      course = std::fmod(course + shape.turn_deg_per_step + 360.0, 360.0);
    }
    double reported = std::fmod(course + shape.course_noise_deg * rng.uniform(-1.0, 1.0) + 360.0, 360.0);
    if (reported >= 360.0) reported -= 360.0;
    traj.points.push_back({t, shape.lon0 + x / ref.meters_per_deg_lon, shape.lat0 + y / ref.meters_per_deg_lat,
                           shape.speed_kn + shape.speed_noise_kn * rng.uniform(-1.0, 1.0), reported});
  }
  return traj;
}

struct CorpusSpec {
  int vessels = 40;
  int points = 80;
  double speed_lo_kn = 6.0;
  double speed_hi_kn = 16.0;
  double dt_lo_s = 30.0;
  double dt_hi_s = 120.0;
  double turn_deg_per_step = 0.0;
  double course_lo = 0.0;
  double course_hi = 360.0;
  int vessel_type = 0;
  std::uint64_t mmsi_base = 227000000;
  double lon0 = -4.5;
  double lat0 = 48.0;
  double t_spread_s = 0.0;  // random start offsets in [0, t_spread_s)
};

// Tracks with per-vessel random speed, heading and sampling interval.
inline std::vector<ais::VesselTrajectory> make_corpus(const CorpusSpec& c, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<ais::VesselTrajectory> out;
  for (int k = 0; k < c.vessels; ++k) {
    MotionSpec m;
    m.mmsi = c.mmsi_base + static_cast<std::uint64_t>(k) + 1;
    m.vessel_type = c.vessel_type;
    m.lon0 = c.lon0 + rng.uniform(-0.2, 0.2);
    m.lat0 = c.lat0 + rng.uniform(-0.2, 0.2);
    m.t0 = 1'443'657'600.0 + rng.uniform(0.0, c.t_spread_s);
    m.speed_kn = rng.uniform(c.speed_lo_kn, c.speed_hi_kn);
    m.course_deg = rng.uniform(c.course_lo, c.course_hi);
    m.turn_deg_per_step = c.turn_deg_per_step;
    m.points = c.points;
    m.dt_base_s = rng.uniform(c.dt_lo_s, c.dt_hi_s);
    out.push_back(make_track(m, rng));
  }
  return out;
}

}  // namespace fedvlf::testing
