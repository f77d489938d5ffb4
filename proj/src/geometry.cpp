#include "lpr/geometry.hpp"

#include <cmath>

namespace lpr {

bool Pose::is_valid(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  Eigen::Matrix3d gram = rotation.transpose() * rotation;
  if ((gram - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() > tol) return false;
  return std::abs(rotation.determinant() - 1.0) <= tol;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::operator*(const Pose& other) const {
  Pose out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

Pose yaw_rotation(double theta) {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Pose pose;
  pose.rotation << c, -s, 0.0,
                   s,  c, 0.0,
                   0.0, 0.0, 1.0;
  return pose;
}

double yaw_of(const Pose& pose) {
  return std::atan2(pose.rotation(1, 0), pose.rotation(0, 0));
}

PointCloud apply_pose(const PointCloud& cloud, const Pose& pose) {
  PointCloud out;
  out.sensor_id = cloud.sensor_id;
  out.points.reserve(cloud.points.size());
  for (const Point3& p : cloud.points) {
    out.points.push_back(pose.apply(p));
  }
  return out;
}

}  // namespace lpr
