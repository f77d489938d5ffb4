#include "lpr/world.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace lpr {

namespace {

constexpr double kMinHitDistance = 0.1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::uint64_t scan_noise_seed(std::uint64_t world_seed, int index) {
  return splitmix64(world_seed ^ splitmix64(static_cast<std::uint64_t>(index) + 1));
}

// Smallest t > kMinHitDistance where the ray o + t*d hits the cylinder side
// within its height band, or +inf.
double ray_cylinder(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
                    const Cylinder& cyl, double ground) {
  const double ox = o.x() - cyl.cx;
  const double oy = o.y() - cyl.cy;
  const double a = d.x() * d.x() + d.y() * d.y();
  if (a < 1e-12) return std::numeric_limits<double>::infinity();
  const double b = 2.0 * (ox * d.x() + oy * d.y());
  const double c = ox * ox + oy * oy - cyl.radius * cyl.radius;
  const double disc = b * b - 4.0 * a * c;
  if (disc < 0.0) return std::numeric_limits<double>::infinity();
  const double sq = std::sqrt(disc);
  for (double t : {(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)}) {
    if (t <= kMinHitDistance) continue;
    const double z = o.z() + t * d.z();
    if (z >= ground && z <= ground + cyl.height) return t;
  }
  return std::numeric_limits<double>::infinity();
}

// Slab test; entry distance or +inf.
double ray_box(const Eigen::Vector3d& o, const Eigen::Vector3d& d,
               const BoxObstacle& box) {
  double tnear = -std::numeric_limits<double>::infinity();
  double tfar = std::numeric_limits<double>::infinity();
  for (int axis = 0; axis < 3; ++axis) {
    if (std::abs(d[axis]) < 1e-12) {
      if (o[axis] < box.min[axis] || o[axis] > box.max[axis]) {
        return std::numeric_limits<double>::infinity();
      }
      continue;
    }
    double t0 = (box.min[axis] - o[axis]) / d[axis];
    double t1 = (box.max[axis] - o[axis]) / d[axis];
    if (t0 > t1) std::swap(t0, t1);
    tnear = std::max(tnear, t0);
    tfar = std::min(tfar, t1);
    if (tnear > tfar) return std::numeric_limits<double>::infinity();
  }
  if (tnear <= kMinHitDistance) return std::numeric_limits<double>::infinity();
  return tnear;
}

}  // namespace

SyntheticWorld make_random_world(const WorldParams& params) {
  if (params.cylinder_count + params.box_count < 50) {
    throw std::invalid_argument("make_random_world: need at least 50 landmarks");
  }
  SyntheticWorld world;
  world.ground_height = params.ground_height;
  world.rng_seed = params.seed;
  std::mt19937_64 rng(params.seed);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> cyl_radius(0.5, 2.0);
  std::uniform_real_distribution<double> cyl_height(3.0, 10.0);
  std::uniform_real_distribution<double> box_half(0.6, 3.0);
  std::uniform_real_distribution<double> box_height(2.0, 8.0);

  auto place = [&](double clearance) {
    // Uniform in the disc, rejecting positions too close to the path ring.
    for (int attempt = 0; attempt < 256; ++attempt) {
      const double r = params.extent * std::sqrt(unit(rng));
      const double a = angle(rng);
      const Eigen::Vector2d p(r * std::cos(a), r * std::sin(a));
      if (params.path_radius > 0.0 &&
          std::abs(p.norm() - params.path_radius) < params.min_clearance + clearance) {
        continue;
      }
      return p;
    }
    throw std::runtime_error("make_random_world: landmark placement failed");
  };

  for (int i = 0; i < params.cylinder_count; ++i) {
    Cylinder cyl;
    cyl.radius = cyl_radius(rng);
    cyl.height = cyl_height(rng);
    const Eigen::Vector2d p = place(cyl.radius);
    cyl.cx = p.x();
    cyl.cy = p.y();
    world.cylinders.push_back(cyl);
  }
  for (int i = 0; i < params.box_count; ++i) {
    const double hx = box_half(rng);
    const double hy = box_half(rng);
    const double hz = box_height(rng);
    const Eigen::Vector2d p = place(std::max(hx, hy));
    BoxObstacle box;
    box.min = Eigen::Vector3d(p.x() - hx, p.y() - hy, params.ground_height);
    box.max = Eigen::Vector3d(p.x() + hx, p.y() + hy, params.ground_height + hz);
    world.boxes.push_back(box);
  }
  return world;
}

PointCloud simulate_scan(const SyntheticWorld& world, const Pose& pose,
                         const ScanParams& params) {
  if (params.beams < 8) throw std::invalid_argument("simulate_scan: beams must be >= 8");
  if (params.horizontal_samples < 90) {
    throw std::invalid_argument("simulate_scan: horizontal_samples must be >= 90");
  }
  if (params.fov_up_deg <= 0.0 || params.fov_down_deg <= 0.0) {
    throw std::invalid_argument("simulate_scan: field of view must be positive");
  }

  const double fov = deg2rad(params.fov_up_deg + params.fov_down_deg);
  const double fov_up = deg2rad(params.fov_up_deg);
  const Eigen::Vector3d origin = pose.translation;

  std::mt19937_64 rng(params.noise_seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(params.beams) * params.horizontal_samples);

  for (int b = 0; b < params.beams; ++b) {
    // Beam b sits at the center of row b of a beams-row range projection with
    // the same field-of-view parameters, spanning (-fov_up, fov - fov_up).
    const double el = (fov - fov_up) - (b + 0.5) * fov / params.beams;
    const double ce = std::cos(el);
    const double se = std::sin(el);
    for (int i = 0; i < params.horizontal_samples; ++i) {
      const double az = -M_PI + (i + 0.5) * 2.0 * M_PI / params.horizontal_samples;
      const Eigen::Vector3d dir_sensor(ce * std::cos(az), ce * std::sin(az), se);
      const Eigen::Vector3d dir = pose.rotation * dir_sensor;

      double t_hit = std::numeric_limits<double>::infinity();
      if (dir.z() < -1e-12) {
        const double tg = (world.ground_height - origin.z()) / dir.z();
        if (tg > kMinHitDistance) t_hit = tg;
      }
      for (const Cylinder& cyl : world.cylinders) {
        t_hit = std::min(t_hit, ray_cylinder(origin, dir, cyl, world.ground_height));
      }
      for (const BoxObstacle& box : world.boxes) {
        t_hit = std::min(t_hit, ray_box(origin, dir, box));
      }
      if (!std::isfinite(t_hit)) continue;
      if (params.noise_sigma > 0.0) {
        t_hit = std::max(kMinHitDistance, t_hit + params.noise_sigma * gauss(rng));
      }
      if (t_hit > params.max_range) continue;
      cloud.points.push_back(t_hit * dir_sensor);
    }
  }
  if (cloud.empty()) throw std::runtime_error("empty scan");
  return cloud;
}

TrajectoryPattern parse_pattern(const std::string& name) {
  if (name == "loop") return TrajectoryPattern::kLoop;
  if (name == "reverse-loop") return TrajectoryPattern::kReverseLoop;
  if (name == "linear") return TrajectoryPattern::kLinear;
  throw std::invalid_argument("unknown trajectory pattern: " + name);
}

std::string pattern_name(TrajectoryPattern pattern) {
  switch (pattern) {
    case TrajectoryPattern::kLoop: return "loop";
    case TrajectoryPattern::kReverseLoop: return "reverse-loop";
    case TrajectoryPattern::kLinear: return "linear";
  }
  return "unknown";
}

std::vector<Pose> trajectory_poses(const SyntheticWorld& world,
                                   const TrajectorySpec& traj) {
  if (traj.steps < 2) throw std::invalid_argument("trajectory needs at least 2 steps");
  const double z = world.ground_height + traj.sensor_height;
  std::vector<Pose> poses;
  poses.reserve(traj.steps);

  if (traj.pattern == TrajectoryPattern::kLinear) {
    for (int k = 0; k < traj.steps; ++k) {
      Pose pose = yaw_rotation(0.0);
      pose.translation = Eigen::Vector3d(k * traj.step_length, 0.0, z);
      poses.push_back(pose);
    }
    return poses;
  }

  const int n_first = traj.first_pass_steps();
  if (n_first < 2 || n_first >= traj.steps) {
    throw std::invalid_argument("revisit_start must lie inside the trajectory");
  }
  const double circuit = n_first * traj.step_length;
  const double radius = circuit / (2.0 * M_PI);

  auto first_pass_pose = [&](int k) {
    const double phi = 2.0 * M_PI * k / n_first;
    Pose pose = yaw_rotation(phi + M_PI / 2.0);  // tangent heading, CCW
    pose.translation =
        Eigen::Vector3d(radius * std::cos(phi), radius * std::sin(phi), z);
    return pose;
  };

  for (int k = 0; k < n_first; ++k) poses.push_back(first_pass_pose(k));

  std::mt19937_64 rng(splitmix64(world.rng_seed ^ 0x7261764552756e73ull));
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  const bool reverse = traj.pattern == TrajectoryPattern::kReverseLoop;
  for (int j = 0; j < traj.steps - n_first; ++j) {
    const int m = reverse ? ((n_first - 1 - j) % n_first + n_first) % n_first
                          : j % n_first;
    Pose base = first_pass_pose(m);
    const double lateral = traj.lateral_offset * uni(rng);
    const double dyaw = traj.yaw_jitter * uni(rng);
    const double yaw =
        yaw_of(base) + (reverse ? M_PI : 0.0) + dyaw;
    Pose pose = yaw_rotation(yaw);
    // Lateral displacement relative to the base heading.
    const double base_yaw = yaw_of(base);
    pose.translation =
        base.translation +
        Eigen::Vector3d(-std::sin(base_yaw), std::cos(base_yaw), 0.0) * lateral;
    poses.push_back(pose);
  }
  return poses;
}

std::vector<ScanWithPose> generate_trajectory(const SyntheticWorld& world,
                                              const TrajectorySpec& traj,
                                              const ScanParams& scan) {
  std::vector<Pose> poses = trajectory_poses(world, traj);
  std::vector<ScanWithPose> out;
  out.reserve(poses.size());
  for (std::size_t k = 0; k < poses.size(); ++k) {
    ScanParams params = scan;
    params.noise_seed = scan_noise_seed(world.rng_seed, static_cast<int>(k));
    out.push_back({poses[k], simulate_scan(world, poses[k], params)});
  }
  return out;
}

}  // namespace lpr
