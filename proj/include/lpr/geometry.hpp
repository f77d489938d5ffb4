#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <string>
#include <vector>

namespace lpr {

using Point3 = Eigen::Vector3d;

/// Raw scan in the sensor frame. Points must be finite and non-degenerate
/// (range > 0) for any scan that enters projection or training.
struct PointCloud {
  std::vector<Point3> points;
  std::string sensor_id;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
};

/// Rigid transform world <- sensor. Rotation must be a proper rotation
/// (orthonormal, det +1, both within 1e-9).
struct Pose {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  bool is_valid(double tol = 1e-9) const;

  Pose inverse() const;

  /// Composition: (*this) * other applies `other` first.
  Pose operator*(const Pose& other) const;

  Eigen::Vector3d apply(const Point3& p) const {
    return rotation * p + translation;
  }
};

/// Rotation about the z-axis by theta, zero translation.
Pose yaw_rotation(double theta);

/// Yaw angle of a pose (atan2 of the rotated x-axis).
double yaw_of(const Pose& pose);

/// Transform every point: p' = R*p + t. Point count preserved.
PointCloud apply_pose(const PointCloud& cloud, const Pose& pose);

inline double deg2rad(double d) { return d * M_PI / 180.0; }
inline double rad2deg(double r) { return r * 180.0 / M_PI; }

}  // namespace lpr
