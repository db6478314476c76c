#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lcd/image.hpp"
#include "lcd/segment.hpp"

namespace lcd {

struct DetectorConfig {
  double gradient_threshold = 5.2;  // intensity units on a 0..255 scale
  double angle_tolerance_deg = 22.5;
  int min_region_size = 10;
  double min_density = 0.7;
  double min_length_px = 25.0;
  double fusion_angle_deg = 3.0;
  double fusion_gap_px = 5.0;
  double fusion_offset_px = 2.0;

  void validate() const;
};

/// Strategy interface so externally detected segments can replace the built-in detector.
class SegmentDetector {
 public:
  virtual ~SegmentDetector() = default;
  virtual std::vector<Segment2D> detect(const GrayImage& gray) const = 0;
};

/// Gradient-orientation region growing with a rectangular fit per region.
class RegionGrowingDetector final : public SegmentDetector {
 public:
  explicit RegionGrowingDetector(DetectorConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }
  std::vector<Segment2D> detect(const GrayImage& gray) const override;

 private:
  DetectorConfig cfg_;
};

/// Sorted by descending length. Deterministic.
std::vector<Segment2D> detect_segments(const GrayImage& gray, const DetectorConfig& cfg = {});

/// Reads "x1,y1,x2,y2" records. Endpoints must lie in [-0.5, w-0.5] x [-0.5, h-0.5].
std::vector<Segment2D> import_segments(const std::filesystem::path& path, int width, int height);
std::vector<Segment2D> parse_segments(const std::string& text, int width, int height);
void export_segments(const std::filesystem::path& path, const std::vector<Segment2D>& segments);

/// Merges co-linear segments with close extremities until no pair qualifies.
std::vector<Segment2D> fuse_colinear(std::vector<Segment2D> segments, double angle_tol_deg,
                                     double gap_tol_px, double offset_tol_px = 2.0);

std::vector<Segment2D> filter_short(const std::vector<Segment2D>& segments, double min_length_px);

}  // namespace lcd
