#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lpr/geometry.hpp"

namespace lpr {

/// Marks pixels no point projected into.
inline constexpr float kInvalidRange = -1.0f;

struct ProjectionConfig {
  int w = 900;
  int h = 64;
  double fov_up_deg = 3.0;
  double fov_down_deg = 25.0;
  double max_range = 80.0;

  double fov_rad() const { return deg2rad(fov_up_deg + fov_down_deg); }
};

/// Row-major h x w grid of float32 ranges in meters. Row 0 is the topmost
/// elevation band (fov_up); invalid pixels hold kInvalidRange. Valid pixels
/// lie in (0, max_range].
struct RangeImage {
  int h = 0;
  int w = 0;
  double fov_up_deg = 0.0;
  double fov_down_deg = 0.0;
  double max_range = 0.0;
  std::vector<float> data;

  RangeImage() = default;
  explicit RangeImage(const ProjectionConfig& cfg)
      : h(cfg.h),
        w(cfg.w),
        fov_up_deg(cfg.fov_up_deg),
        fov_down_deg(cfg.fov_down_deg),
        max_range(cfg.max_range),
        data(static_cast<std::size_t>(cfg.h) * cfg.w, kInvalidRange) {}

  float& at(int v, int u) { return data[static_cast<std::size_t>(v) * w + u]; }
  float at(int v, int u) const { return data[static_cast<std::size_t>(v) * w + u]; }
  std::size_t valid_count() const;
};

struct PixelHit {
  int u = 0;
  int v = 0;
  float range = 0.0f;
};

/// Spherical projection of one point: u from azimuth, v from elevation.
/// Returns nullopt when the point has zero norm, falls outside the vertical
/// field of view, or lies beyond max_range.
std::optional<PixelHit> project_point(const Point3& p, const ProjectionConfig& cfg);

/// Projects a cloud; colliding pixels keep the nearest point. Throws
/// std::runtime_error("empty range image") when nothing lands in view.
RangeImage project_cloud(const PointCloud& cloud, const ProjectionConfig& cfg);

/// Column shift matching a yaw rotation by theta: s = round(-theta*w/(2*pi))
/// mod w, so project(R_theta * P) == column_shift(project(P), s) up to pixel
/// discretization.
int yaw_to_shift(double theta, int w);

/// Circular shift: output column j holds input column (j - s) mod w.
RangeImage column_shift(const RangeImage& img, int s);

/// Transforms the reference cloud into the query frame (pose_query^-1 *
/// pose_ref) and projects it.
RangeImage reproject(const PointCloud& reference, const Pose& pose_ref,
                     const Pose& pose_query, const ProjectionConfig& cfg);

/// Fraction of pixels valid in both images whose ranges agree within delta,
/// over min(valid(query), valid(reference)). Throws
/// std::runtime_error("undefined overlap") if either image has no valid pixel.
double compute_overlap(const RangeImage& query_img, const RangeImage& reproj_ref_img,
                       double delta);

/// Range agreement threshold: 1.0 m for 64-beam imagery, 1.2 m for coarser
/// vertical resolutions.
double default_overlap_delta(int beams);

}  // namespace lpr
