#pragma once

#include <Eigen/Core>

#include "lcd/image.hpp"
#include "lcd/line_geometry.hpp"
#include "lcd/rgbd.hpp"

namespace lcd {

inline constexpr int kVirtualWidth = 96;
inline constexpr int kVirtualHeight = 64;

/// Orthographic camera facing a line. Image x runs along the line, image y along `side`.
struct VirtualCamera {
  Eigen::Vector3d center = Eigen::Vector3d::Zero();
  Eigen::Vector3d view = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d along = Eigen::Vector3d::UnitX();
  double width = 1.0;   // full extent along `along`, meters
  double height = 1.0;  // full extent along `side()`, meters
  double max_distance = 1.0;

  Eigen::Vector3d side() const { return view.cross(along); }
};

struct VirtualViewConfig {
  double camera_distance = 0.5;
  double max_distance = 1.0;
  double width_factor = 1.5;
  double height_factor = 1.0;
  double points_per_pixel = 2.0;  // target density for the working resolution
  int min_working_height = 32;
  int max_working_height = 256;
  int dilation_px = 2;
  double inpaint_tolerance = 1e-4;
  int inpaint_max_iterations = 5000;
};

/// Float RGB image in [0, 1], 3 channels.
using RgbImage = Image<float>;

struct RawView {
  RgbImage image;
  Image<std::uint8_t> mask;  // 1 where a point landed
};

VirtualCamera virtual_camera_for_line(const Line3D& line, const VirtualViewConfig& cfg = {});

RawView render_orthographic(const PointCloud& cloud, const VirtualCamera& cam,
                            const VirtualViewConfig& cfg = {});

/// Harmonic fill of holes lying within `dilation_px` of valid pixels; holes farther away are black.
RgbImage inpaint_holes(const RgbImage& image, const Image<std::uint8_t>& mask, int dilation_px,
                       double tolerance = 1e-4, int max_iterations = 5000);

/// Bilinear resize (pixel-center aligned) to 96x64, clamped to [0, 1].
RgbImage finalize(const RgbImage& image);

RgbImage resize_bilinear(const RgbImage& image, int width, int height);

/// camera -> render -> inpaint -> finalize.
RgbImage virtual_image(const PointCloud& cloud, const Line3D& line, const VirtualViewConfig& cfg = {});

/// Pearson correlation over all values of two equally sized images.
double image_correlation(const RgbImage& a, const RgbImage& b);

}  // namespace lcd
