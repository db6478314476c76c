#include "lcd/rgbd.hpp"

#include <algorithm>
#include <cmath>

#include "lcd/error.hpp"

namespace lcd {

void CameraIntrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0) || width <= 0 || height <= 0)
    throw Error(ErrorCode::kInvalidArgument, "intrinsics: focal lengths and size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height))
    throw Error(ErrorCode::kInvalidArgument, "intrinsics: principal point outside image");
}

CameraIntrinsics CameraIntrinsics::scaled(double factor) const {
  CameraIntrinsics k;
  k.width = static_cast<int>(std::lround(width * factor));
  k.height = static_cast<int>(std::lround(height * factor));
  k.fx = fx * factor;
  k.fy = fy * factor;
  // Pixel centers sit at integers, so the image spans [-0.5, w - 0.5].
  k.cx = (cx + 0.5) * factor - 0.5;
  k.cy = (cy + 0.5) * factor - 0.5;
  return k;
}

void Frame::validate() const {
  intrinsics.validate();
  const int w = intrinsics.width, h = intrinsics.height;
  if (!color.same_size(w, h) || color.channels() != 3)
    throw Error(ErrorCode::kShapeMismatch, "frame: color image does not match intrinsics");
  if (!depth.same_size(w, h) || depth.channels() != 1)
    throw Error(ErrorCode::kShapeMismatch, "frame: depth image does not match intrinsics");
  if (instance_mask && !instance_mask->same_size(w, h))
    throw Error(ErrorCode::kShapeMismatch, "frame: instance mask does not match intrinsics");
  if (semantic_mask && !semantic_mask->same_size(w, h))
    throw Error(ErrorCode::kShapeMismatch, "frame: semantic mask does not match intrinsics");
  for (double d : depth.values())
    if (!std::isfinite(d) || d < 0.0) throw Error(ErrorCode::kInvalidDepth, "frame: bad depth value");
}

Eigen::Vector3d backproject(double u, double v, double depth, const CameraIntrinsics& k) {
  if (!std::isfinite(depth) || depth <= 0.0)
    throw Error(ErrorCode::kInvalidDepth, "backproject: depth must be positive and finite");
  return {(u - k.cx) * depth / k.fx, (v - k.cy) * depth / k.fy, depth};
}

Eigen::Vector2d project(const Eigen::Vector3d& p, const CameraIntrinsics& k) {
  if (!(p.z() > 0.0)) throw Error(ErrorCode::kBehindCamera, "project: point behind camera");
  return {k.fx * p.x() / p.z() + k.cx, k.fy * p.y() / p.z() + k.cy};
}

std::vector<Eigen::Vector2i> band_pixels(const Segment2D& segment, Side side, const BandConfig& cfg,
                                         int width, int height) {
  std::vector<Eigen::Vector2i> out;
  const double len = segment.length();
  if (len <= 0.0 || cfg.band_width_px < 1) return out;
  const Eigen::Vector2d d = (segment.end - segment.start) / len;
  const Eigen::Vector2d n_left(d.y(), -d.x());
  const double sign = side == Side::kLeft ? 1.0 : -1.0;
  const double u_lo = cfg.gap_px, u_hi = cfg.gap_px + cfg.band_width_px;

  // Bounding box of the rectangle's corners.
  const Eigen::Vector2d off_lo = sign * u_lo * n_left, off_hi = sign * u_hi * n_left;
  const Eigen::Vector2d corners[4] = {segment.start + off_lo, segment.start + off_hi,
                                      segment.end + off_lo, segment.end + off_hi};
  double x0 = corners[0].x(), x1 = x0, y0 = corners[0].y(), y1 = y0;
  for (const auto& c : corners) {
    x0 = std::min(x0, c.x());
    x1 = std::max(x1, c.x());
    y0 = std::min(y0, c.y());
    y1 = std::max(y1, c.y());
  }
  const int xa = std::max(0, static_cast<int>(std::floor(x0)));
  const int xb = std::min(width - 1, static_cast<int>(std::ceil(x1)));
  const int ya = std::max(0, static_cast<int>(std::floor(y0)));
  const int yb = std::min(height - 1, static_cast<int>(std::ceil(y1)));
  for (int y = ya; y <= yb; ++y) {
    for (int x = xa; x <= xb; ++x) {
      const Eigen::Vector2d rel = Eigen::Vector2d(x, y) - segment.start;
      const double t = rel.dot(d);
      const double u = sign * rel.dot(n_left);
      if (t >= 0.0 && t <= len && u > u_lo && u <= u_hi) out.emplace_back(x, y);
    }
  }
  return out;
}

PointCloud pool_depth_band(const Frame& frame, const Segment2D& segment, Side side,
                           const BandConfig& cfg) {
  PointCloud cloud;
  const auto& k = frame.intrinsics;
  for (const auto& px : band_pixels(segment, side, cfg, k.width, k.height)) {
    const double d = frame.depth.at(px.x(), px.y());
    if (!(d > 0.0)) continue;
    cloud.points.push_back(backproject(px.x(), px.y(), d, k));
    if (!frame.color.empty()) {
      cloud.colors.emplace_back(frame.color.at(px.x(), px.y(), 0) / 255.0,
                                frame.color.at(px.x(), px.y(), 1) / 255.0,
                                frame.color.at(px.x(), px.y(), 2) / 255.0);
    }
  }
  return cloud;
}

PointCloud frame_point_cloud(const Frame& frame) {
  PointCloud cloud;
  const auto& k = frame.intrinsics;
  cloud.points.reserve(static_cast<std::size_t>(k.width) * k.height);
  cloud.colors.reserve(static_cast<std::size_t>(k.width) * k.height);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const double d = frame.depth.at(x, y);
      if (!(d > 0.0)) continue;
      cloud.points.push_back(backproject(x, y, d, k));
      cloud.colors.emplace_back(frame.color.at(x, y, 0) / 255.0, frame.color.at(x, y, 1) / 255.0,
                                frame.color.at(x, y, 2) / 255.0);
    }
  }
  return cloud;
}

GrayImage to_gray(const ColorImage& color) {
  GrayImage gray(color.width(), color.height(), 1);
  for (int y = 0; y < color.height(); ++y)
    for (int x = 0; x < color.width(); ++x)
      gray.at(x, y) = 0.299 * color.at(x, y, 0) + 0.587 * color.at(x, y, 1) + 0.114 * color.at(x, y, 2);
  return gray;
}

}  // namespace lcd
