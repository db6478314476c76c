#pragma once

#include <Eigen/Core>

namespace lcd {

/// 2D image segment in sub-pixel coordinates (pixel centers at integers).
struct Segment2D {
  Eigen::Vector2d start = Eigen::Vector2d::Zero();
  Eigen::Vector2d end = Eigen::Vector2d::Zero();

  double length() const { return (end - start).norm(); }
  Eigen::Vector2d direction() const { return (end - start).normalized(); }
  Eigen::Vector2d midpoint() const { return 0.5 * (start + end); }

  friend bool operator==(const Segment2D& a, const Segment2D& b) {
    return a.start == b.start && a.end == b.end;
  }
};

}  // namespace lcd
