#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Geometry>

#include "lcd/image.hpp"
#include "lcd/segment.hpp"

namespace lcd {

/// Pinhole intrinsics. Camera frame: x right, y down, z forward.
struct CameraIntrinsics {
  double fx = 525.0;
  double fy = 525.0;
  double cx = 319.5;
  double cy = 239.5;
  int width = 640;
  int height = 480;

  /// Throws ErrorCode::kInvalidArgument when the invariants do not hold.
  void validate() const;

  /// Same field of view at a different resolution.
  CameraIntrinsics scaled(double factor) const;

  friend bool operator==(const CameraIntrinsics&, const CameraIntrinsics&) = default;
};

struct Frame {
  ColorImage color;  // width x height x 3
  DepthImage depth;  // meters, 0 = missing
  CameraIntrinsics intrinsics;
  std::optional<LabelImage> instance_mask;
  std::optional<LabelImage> semantic_mask;
  std::optional<Eigen::Isometry3d> pose;  // camera -> world
  int frame_id = 0;
  int scene_id = 0;

  int width() const { return intrinsics.width; }
  int height() const { return intrinsics.height; }

  /// Checks shared dimensions and depth finiteness.
  void validate() const;
};

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  std::vector<Eigen::Vector3d> colors;  // optional, RGB in [0,1]; empty or same size as points

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_colors() const { return !colors.empty(); }
};

Eigen::Vector3d backproject(double u, double v, double depth, const CameraIntrinsics& k);
Eigen::Vector2d project(const Eigen::Vector3d& p, const CameraIntrinsics& k);

/// Unnormalized viewing ray with z = 1 through pixel (u, v).
inline Eigen::Vector3d pixel_ray(double u, double v, const CameraIntrinsics& k) {
  return {(u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0};
}

enum class Side { kLeft, kRight };

/// Band geometry around a segment. `gap_px` keeps pixels straddling the segment out of
/// both bands; the left normal of direction d is (d.y, -d.x).
struct BandConfig {
  int band_width_px = 10;
  double gap_px = 1.0;
};

/// Pixels whose centers fall in the band rectangle on `side` of the segment.
std::vector<Eigen::Vector2i> band_pixels(const Segment2D& segment, Side side, const BandConfig& cfg,
                                         int width, int height);

/// Backprojected valid-depth pixels of the band. Colors are attached.
PointCloud pool_depth_band(const Frame& frame, const Segment2D& segment, Side side,
                           const BandConfig& cfg = {});

/// Every valid-depth pixel of the frame, with colors.
PointCloud frame_point_cloud(const Frame& frame);

/// Luma conversion in [0, 255].
GrayImage to_gray(const ColorImage& color);

}  // namespace lcd
