#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lpr/geometry.hpp"

namespace lpr {

/// Vertical cylinder standing on the ground plane.
struct Cylinder {
  double cx = 0.0;
  double cy = 0.0;
  double radius = 1.0;
  double height = 5.0;
};

/// Axis-aligned box, world frame.
struct BoxObstacle {
  Eigen::Vector3d min = Eigen::Vector3d::Zero();
  Eigen::Vector3d max = Eigen::Vector3d::Zero();
};

/// Procedural scene: obstacles on a flat ground plane. Deterministic given
/// rng_seed.
struct SyntheticWorld {
  std::vector<Cylinder> cylinders;
  std::vector<BoxObstacle> boxes;
  double ground_height = 0.0;
  std::uint64_t rng_seed = 0;

  std::size_t landmark_count() const { return cylinders.size() + boxes.size(); }
};

struct WorldParams {
  std::uint64_t seed = 0;
  int cylinder_count = 60;
  int box_count = 20;
  double extent = 120.0;  // landmarks placed within this radius of the origin
  double ground_height = 0.0;
  double min_clearance = 6.0;  // keep landmarks off the trajectory ring
  double path_radius = 0.0;    // ring to keep clear; 0 disables
};

/// Scatter cylinders and boxes in a disc. Requires at least 50 landmarks in
/// total so scans stay discriminative.
SyntheticWorld make_random_world(const WorldParams& params);

struct ScanParams {
  int beams = 32;
  int horizontal_samples = 360;
  double fov_up_deg = 3.0;
  double fov_down_deg = 25.0;
  double max_range = 80.0;
  double noise_sigma = 0.0;        // Gaussian range noise, meters
  std::uint64_t noise_seed = 0;
};

/// Ray-cast scan in the sensor frame. Rays are placed at the angular centers
/// of a beams x horizontal_samples grid; vertically the beams occupy the
/// elevation band a same-parameter range projection images, so beam b lands
/// in row b when beams matches the image height. Nearest hit wins, hits
/// beyond max_range are dropped. Throws std::runtime_error("empty scan") when
/// no ray hits anything in range.
PointCloud simulate_scan(const SyntheticWorld& world, const Pose& pose,
                         const ScanParams& params);

enum class TrajectoryPattern { kLoop, kReverseLoop, kLinear };

/// Parses "loop" / "reverse-loop" / "linear"; throws on anything else.
TrajectoryPattern parse_pattern(const std::string& name);
std::string pattern_name(TrajectoryPattern pattern);

struct TrajectorySpec {
  TrajectoryPattern pattern = TrajectoryPattern::kLoop;
  int steps = 100;
  double step_length = 1.5;
  int revisit_start = -1;        // default: steps / 2
  double lateral_offset = 0.3;   // max lateral displacement on revisit, meters
  double yaw_jitter = 0.02;      // max yaw offset on revisit, radians
  double sensor_height = 1.8;

  int first_pass_steps() const { return revisit_start >= 0 ? revisit_start : steps / 2; }
};

struct ScanWithPose {
  Pose pose;
  PointCloud cloud;
};

/// Ordered scan sequence with ground-truth poses. Loop patterns drive a
/// circular circuit and revisit it (reverse-loop with heading flipped by pi);
/// linear drives a straight line. Deterministic given world.rng_seed.
std::vector<ScanWithPose> generate_trajectory(const SyntheticWorld& world,
                                              const TrajectorySpec& traj,
                                              const ScanParams& scan);

/// Poses only, no scans; same construction as generate_trajectory.
std::vector<Pose> trajectory_poses(const SyntheticWorld& world,
                                   const TrajectorySpec& traj);

}  // namespace lpr
