#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lcd/rgbd.hpp"

namespace lcd {

struct Plane {
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();  // unit, camera-facing
  Eigen::Vector3d centroid = Eigen::Vector3d::Zero();
  std::size_t inliers = 0;

  double signed_distance(const Eigen::Vector3d& p) const { return normal.dot(p - centroid); }
};

enum class LineType : std::uint8_t { kEdge, kTexture, kDiscontinuity };

const char* to_string(LineType t);
LineType line_type_from_string(const std::string& s);

struct Line3D {
  Eigen::Vector3d start = Eigen::Vector3d::Zero();
  Eigen::Vector3d end = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal_left = Eigen::Vector3d::Zero();   // zero when that plane is absent
  Eigen::Vector3d normal_right = Eigen::Vector3d::Zero();
  double length = 0.0;
  bool occluded_start = false;
  bool occluded_end = false;
  LineType type = LineType::kTexture;

  Eigen::Vector3d midpoint() const { return 0.5 * (start + end); }
  Eigen::Vector3d direction() const { return (end - start).normalized(); }
};

inline constexpr int kGeomDim = 15;
/// [start(3), end(3), normal_left(3), normal_right(3), length, occluded_start, occluded_end]
using GeomVector = std::array<double, kGeomDim>;

GeomVector geom_vector(const Line3D& line);

struct RansacConfig {
  int iterations = 50;
  double inlier_distance = 0.01;  // meters
  std::size_t min_inliers = 20;
};

/// Best three-point plane by inlier count, refit by least squares over its inliers.
std::optional<Plane> fit_plane_ransac(const PointCloud& cloud, const RansacConfig& cfg,
                                      std::uint64_t seed);

/// Least-squares plane through all points (needs >= 3 non-collinear points).
std::optional<Plane> fit_plane_least_squares(const std::vector<Eigen::Vector3d>& points);

struct GeometryConfig {
  BandConfig band;
  RansacConfig ransac;
  double coplanar_angle_deg = 5.0;
  double coplanar_distance = 0.02;   // meters
  double discontinuity_separation = 0.3;  // meters
  double min_length_3d = 0.05;       // meters
  double occlusion_depth_tol = 0.05; // meters
  int edge_margin_px = 5;
};

/// Reprojects a segment to 3D from its neighbourhood planes; nullopt when rejected.
/// Occlusion flags are left false; see occlusion_flags().
std::optional<Line3D> classify_and_project(const Segment2D& seg, const std::optional<Plane>& left,
                                           const std::optional<Plane>& right, const Frame& frame,
                                           const GeometryConfig& cfg = {});

std::pair<bool, bool> occlusion_flags(const Frame& frame, const Line3D& line, const Segment2D& seg,
                                      const GeometryConfig& cfg = {});

/// Bands, planes, projection and flags for one segment.
std::optional<Line3D> reproject_segment(const Frame& frame, const Segment2D& seg,
                                        const GeometryConfig& cfg, std::uint64_t seed);

/// Text dump: one record per line,
/// "sx sy sz ex ey ez nlx nly nlz nrx nry nrz length os oe type".
void write_line_dump(std::ostream& out, const std::vector<Line3D>& lines);
std::vector<Line3D> read_line_dump(std::istream& in);

}  // namespace lcd
