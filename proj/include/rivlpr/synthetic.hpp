#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rivlpr/geometry.hpp"
#include "rivlpr/riv.hpp"
#include "rivlpr/rng.hpp"

namespace rivlpr {

/// Parameters of the in-repo street world: a rectangular city block driven
/// around once per session.
struct SyntheticSpec {
  std::uint64_t seed = 7;
  int sessions = 2;
  int scans_per_session = 100;
  double spacing = 3.0;         // meters between consecutive scans
  double block_x = 90.0;        // loop extent
  double block_y = 60.0;
  double dt = 2.0;              // seconds between scans
  double lateral_offset = 1.0;  // max sideways drift of sessions after the first
  double yaw_noise = 0.05;      // radians, heading jitter
  double pose_noise = 0.05;     // meters, error on recorded translations
  double range_noise = 0.02;    // meters
  double sensor_height = 1.8;
  RivConfig sensor;             // beam layout: one ring per row, two rays per column

  void validate() const;
};

struct Box {
  Eigen::Vector3d center;
  Eigen::Vector3d half;
  double yaw = 0.0;
  double reflectivity = 0.0;
  double stripe = 0.0;  // facade band pattern amplitude
};

struct Cylinder {
  Eigen::Vector2d center;
  double radius = 0.0;
  double top = 0.0;
  double reflectivity = 0.0;
};

struct SyntheticWorld {
  std::vector<Box> boxes;
  std::vector<Cylinder> poles;
  double ground_reflectivity = 35.0;

  /// Adds session-specific clutter (parked cars) on top of the static scene.
  SyntheticWorld with_cars(std::uint64_t seed, const SyntheticSpec& spec) const;
  /// Nearest hit along a ray: range and reflectivity, or range < 0 for a miss.
  std::pair<double, double> cast(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir, double max_range) const;
};

SyntheticWorld make_world(const SyntheticSpec& spec);

/// Renders one scan in the sensor frame at `sensor_to_world`.
Scan render_scan(const SyntheticWorld& world, const RigidTransform& sensor_to_world, const SyntheticSpec& spec,
                 Rng& rng);

struct SyntheticSession {
  std::vector<Scan> scans;
  std::vector<Pose> poses;        // recorded (noisy) sensor-to-world
  std::vector<Pose> true_poses;
};

std::vector<SyntheticSession> make_sessions(const SyntheticSpec& spec);

}  // namespace rivlpr
