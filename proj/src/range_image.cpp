#include "lpr/range_image.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace lpr {

std::size_t RangeImage::valid_count() const {
  return static_cast<std::size_t>(
      std::count_if(data.begin(), data.end(), [](float r) { return r >= 0.0f; }));
}

std::optional<PixelHit> project_point(const Point3& p, const ProjectionConfig& cfg) {
  const double r = p.norm();
  if (r <= 0.0 || r > cfg.max_range) return std::nullopt;
  const double yaw = std::atan2(p.y(), p.x());
  const double pitch = std::asin(p.z() / r);
  const int v = static_cast<int>(
      std::floor((1.0 - (pitch + deg2rad(cfg.fov_up_deg)) / cfg.fov_rad()) * cfg.h));
  if (v < 0 || v >= cfg.h) return std::nullopt;
  // Azimuth can land exactly on the seam; wrap after flooring.
  long long u = static_cast<long long>(std::floor(0.5 * (1.0 - yaw / M_PI) * cfg.w));
  u = ((u % cfg.w) + cfg.w) % cfg.w;
  return PixelHit{static_cast<int>(u), v, static_cast<float>(r)};
}

RangeImage project_cloud(const PointCloud& cloud, const ProjectionConfig& cfg) {
  if (cfg.w <= 0 || cfg.h <= 0 || cfg.fov_rad() <= 0.0) {
    throw std::invalid_argument("project_cloud: bad projection config");
  }
  RangeImage img(cfg);
  bool any = false;
  for (const Point3& p : cloud.points) {
    const auto hit = project_point(p, cfg);
    if (!hit) continue;
    float& px = img.at(hit->v, hit->u);
    if (px < 0.0f || hit->range < px) px = hit->range;
    any = true;
  }
  if (!any) throw std::runtime_error("empty range image");
  return img;
}

int yaw_to_shift(double theta, int w) {
  const long long s = std::llround(-theta * w / (2.0 * M_PI));
  return static_cast<int>(((s % w) + w) % w);
}

RangeImage column_shift(const RangeImage& img, int s) {
  RangeImage out = img;
  const int w = img.w;
  const int shift = ((s % w) + w) % w;
  if (shift == 0) return out;
  for (int v = 0; v < img.h; ++v) {
    for (int j = 0; j < w; ++j) {
      out.at(v, j) = img.at(v, (j - shift + w) % w);
    }
  }
  return out;
}

RangeImage reproject(const PointCloud& reference, const Pose& pose_ref,
                     const Pose& pose_query, const ProjectionConfig& cfg) {
  const Pose relative = pose_query.inverse() * pose_ref;
  return project_cloud(apply_pose(reference, relative), cfg);
}

double compute_overlap(const RangeImage& query_img, const RangeImage& reproj_ref_img,
                       double delta) {
  if (query_img.h != reproj_ref_img.h || query_img.w != reproj_ref_img.w) {
    throw std::invalid_argument("compute_overlap: image dimensions differ");
  }
  if (delta <= 0.0) throw std::invalid_argument("compute_overlap: delta must be > 0");
  std::size_t valid_q = 0;
  std::size_t valid_r = 0;
  std::size_t agree = 0;
  const std::size_t n = query_img.data.size();
  for (std::size_t i = 0; i < n; ++i) {
    const float rq = query_img.data[i];
    const float rr = reproj_ref_img.data[i];
    const bool vq = rq >= 0.0f;
    const bool vr = rr >= 0.0f;
    valid_q += vq;
    valid_r += vr;
    if (vq && vr && std::abs(static_cast<double>(rq) - rr) <= delta) ++agree;
  }
  const std::size_t denom = std::min(valid_q, valid_r);
  if (denom == 0) throw std::runtime_error("undefined overlap");
  return static_cast<double>(agree) / static_cast<double>(denom);
}

double default_overlap_delta(int beams) { return beams >= 64 ? 1.0 : 1.2; }

}  // namespace lpr
