#include "lcd/line_extract.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "lcd/error.hpp"

namespace lcd {
namespace {

constexpr double kPi = std::numbers::pi;

double angle_diff(double a, double b) {
  double d = a - b;
  while (d <= -kPi) d += 2.0 * kPi;
  while (d > kPi) d -= 2.0 * kPi;
  return std::abs(d);
}

struct GradientField {
  int w = 0, h = 0;  // grid size, one less than the image in each direction
  std::vector<double> mag, angle;
};

// 2x2 differences; sample (x, y) sits at image position (x + 0.5, y + 0.5).
GradientField compute_gradient(const GrayImage& img) {
  GradientField g;
  g.w = std::max(0, img.width() - 1);
  g.h = std::max(0, img.height() - 1);
  g.mag.assign(static_cast<std::size_t>(g.w) * g.h, 0.0);
  g.angle.assign(g.mag.size(), 0.0);
  for (int y = 0; y < g.h; ++y) {
    for (int x = 0; x < g.w; ++x) {
      const double a = img.at(x, y), b = img.at(x + 1, y), c = img.at(x, y + 1), d = img.at(x + 1, y + 1);
      const double gx = 0.5 * (b + d - a - c);
      const double gy = 0.5 * (c + d - a - b);
      const std::size_t i = static_cast<std::size_t>(y) * g.w + x;
      g.mag[i] = std::hypot(gx, gy);
      g.angle[i] = std::atan2(gx, -gy);  // level-line orientation
    }
  }
  return g;
}

struct Region {
  std::vector<int> pixels;
};

Region grow_region(const GradientField& g, int seed, double tol, double threshold,
                   std::vector<char>& used) {
  Region r;
  r.pixels.push_back(seed);
  used[seed] = 1;
  double sx = std::cos(g.angle[seed]), sy = std::sin(g.angle[seed]);
  double theta = g.angle[seed];
  for (std::size_t k = 0; k < r.pixels.size(); ++k) {
    const int px = r.pixels[k] % g.w, py = r.pixels[k] / g.w;
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        const int nx = px + dx, ny = py + dy;
        if (nx < 0 || ny < 0 || nx >= g.w || ny >= g.h) continue;
        const int n = ny * g.w + nx;
        if (used[n] || g.mag[n] <= threshold) continue;
        if (angle_diff(g.angle[n], theta) > tol) continue;
        used[n] = 1;
        r.pixels.push_back(n);
        sx += std::cos(g.angle[n]);
        sy += std::sin(g.angle[n]);
        theta = std::atan2(sy, sx);
      }
    }
  }
  return r;
}

struct RectFit {
  Segment2D segment;
  double density = 0.0;
};

RectFit fit_rectangle(const GradientField& g, const Region& r) {
  double wsum = 0.0, cx = 0.0, cy = 0.0, ca = 0.0, sa = 0.0;
  for (int i : r.pixels) {
    const double w = g.mag[i];
    cx += w * (i % g.w + 0.5);
    cy += w * (i / g.w + 0.5);
    ca += std::cos(g.angle[i]);
    sa += std::sin(g.angle[i]);
    wsum += w;
  }
  cx /= wsum;
  cy /= wsum;
  double ixx = 0.0, iyy = 0.0, ixy = 0.0;
  for (int i : r.pixels) {
    const double w = g.mag[i];
    const double dx = i % g.w + 0.5 - cx, dy = i / g.w + 0.5 - cy;
    ixx += w * dx * dx;
    iyy += w * dy * dy;
    ixy += w * dx * dy;
  }
  // Principal axis of the weighted scatter, oriented like the region's level lines.
  double theta = 0.5 * std::atan2(2.0 * ixy, ixx - iyy);
  Eigen::Vector2d dir(std::cos(theta), std::sin(theta));
  if (dir.dot(Eigen::Vector2d(ca, sa)) < 0.0) dir = -dir;
  const Eigen::Vector2d perp(-dir.y(), dir.x());
  double lmin = 0, lmax = 0, wmin = 0, wmax = 0;
  bool first = true;
  for (int i : r.pixels) {
    const Eigen::Vector2d p(i % g.w + 0.5 - cx, i / g.w + 0.5 - cy);
    const double l = p.dot(dir), w = p.dot(perp);
    if (first) {
      lmin = lmax = l;
      wmin = wmax = w;
      first = false;
    }
    lmin = std::min(lmin, l);
    lmax = std::max(lmax, l);
    wmin = std::min(wmin, w);
    wmax = std::max(wmax, w);
  }
  RectFit fit;
  const Eigen::Vector2d c(cx, cy);
  fit.segment.start = c + lmin * dir;
  fit.segment.end = c + lmax * dir;
  const double length = lmax - lmin + 1.0;
  const double width = std::max(1.0, wmax - wmin);
  fit.density = static_cast<double>(r.pixels.size()) / (length * width);
  return fit;
}

void sort_by_length(std::vector<Segment2D>& segs) {
  std::stable_sort(segs.begin(), segs.end(),
                   [](const Segment2D& a, const Segment2D& b) { return a.length() > b.length(); });
}

}  // namespace

void DetectorConfig::validate() const {
  if (!(gradient_threshold > 0 && angle_tolerance_deg > 0 && min_region_size > 0 &&
        fusion_angle_deg > 0 && fusion_gap_px > 0 && fusion_offset_px > 0 && min_length_px >= 0 && min_density >= 0))
    throw Error(ErrorCode::kConfig, "detector: tolerances must be positive");
}

std::vector<Segment2D> RegionGrowingDetector::detect(const GrayImage& gray) const {
  if (gray.empty()) throw Error(ErrorCode::kInvalidArgument, "detect_segments: empty image");
  const GradientField g = compute_gradient(gray);
  std::vector<Segment2D> out;
  if (g.w == 0 || g.h == 0) return out;

  std::vector<int> order;
  order.reserve(g.mag.size());
  for (int i = 0; i < static_cast<int>(g.mag.size()); ++i)
    if (g.mag[i] > cfg_.gradient_threshold) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return g.mag[a] > g.mag[b]; });

  const double tol = cfg_.angle_tolerance_deg * kPi / 180.0;
  std::vector<char> used(g.mag.size(), 0);
  for (int seed : order) {
    if (used[seed]) continue;
    Region region = grow_region(g, seed, tol, cfg_.gradient_threshold, used);
    if (static_cast<int>(region.pixels.size()) < cfg_.min_region_size) continue;
    RectFit fit = fit_rectangle(g, region);
    if (fit.density < cfg_.min_density) {
      // Retry with a tighter tolerance; release the region first.
      for (int i : region.pixels) used[i] = 0;
      region = grow_region(g, seed, 0.5 * tol, cfg_.gradient_threshold, used);
      if (static_cast<int>(region.pixels.size()) < cfg_.min_region_size) continue;
      fit = fit_rectangle(g, region);
      // Shrink around the seed until the rectangle is dense enough.
      const double sx = seed % g.w, sy = seed / g.w;
      double radius = 0.5 * fit.segment.length();
      while (fit.density < cfg_.min_density && static_cast<int>(region.pixels.size()) >= cfg_.min_region_size) {
        radius *= 0.75;
        std::vector<int> inner;
        for (int i : region.pixels) {
          if (std::hypot(i % g.w - sx, i / g.w - sy) <= radius)
            inner.push_back(i);
          else
            used[i] = 0;
        }
        region.pixels = std::move(inner);
        if (static_cast<int>(region.pixels.size()) < cfg_.min_region_size) break;
        fit = fit_rectangle(g, region);
      }
      if (fit.density < cfg_.min_density || static_cast<int>(region.pixels.size()) < cfg_.min_region_size) {
        for (int i : region.pixels) used[i] = 0;
        continue;
      }
    }
    if (fit.segment.length() > 0.0) out.push_back(fit.segment);
  }
  sort_by_length(out);
  return out;
}

std::vector<Segment2D> detect_segments(const GrayImage& gray, const DetectorConfig& cfg) {
  return RegionGrowingDetector(cfg).detect(gray);
}

std::vector<Segment2D> parse_segments(const std::string& text, int width, int height) {
  std::vector<Segment2D> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    double v[4];
    std::istringstream ls(line);
    for (int i = 0; i < 4; ++i) {
      if (!(ls >> v[i])) throw Error(ErrorCode::kParse, "segments: bad number on line " + std::to_string(lineno));
      if (i < 3) {
        char comma = 0;
        if (!(ls >> comma) || comma != ',')
          throw Error(ErrorCode::kParse, "segments: expected ',' on line " + std::to_string(lineno));
      }
    }
    std::string rest;
    if (ls >> rest) throw Error(ErrorCode::kParse, "segments: trailing data on line " + std::to_string(lineno));
    for (int i = 0; i < 4; ++i) {
      const double hi = (i % 2 == 0 ? width : height) - 0.5;
      if (!std::isfinite(v[i]) || v[i] < -0.5 || v[i] > hi)
        throw Error(ErrorCode::kOutOfBounds, "segments: endpoint outside image on line " + std::to_string(lineno));
    }
    Segment2D s{{v[0], v[1]}, {v[2], v[3]}};
    if (!(s.length() > 0.0))
      throw Error(ErrorCode::kParse, "segments: zero-length segment on line " + std::to_string(lineno));
    out.push_back(s);
  }
  return out;
}

std::vector<Segment2D> import_segments(const std::filesystem::path& path, int width, int height) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "segments: cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_segments(buf.str(), width, height);
}

void export_segments(const std::filesystem::path& path, const std::vector<Segment2D>& segments) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIo, "segments: cannot write " + path.string());
  out.precision(17);
  for (const auto& s : segments)
    out << s.start.x() << ',' << s.start.y() << ',' << s.end.x() << ',' << s.end.y() << '\n';
}

namespace {

double point_line_distance(const Eigen::Vector2d& p, const Segment2D& s) {
  const Eigen::Vector2d d = s.direction();
  const Eigen::Vector2d r = p - s.start;
  return std::abs(r.x() * d.y() - r.y() * d.x());
}

bool fusable(const Segment2D& a, const Segment2D& b, double angle_tol, double gap_tol, double offset_tol) {
  const Segment2D& lng = a.length() >= b.length() ? a : b;
  const Segment2D& shr = a.length() >= b.length() ? b : a;
  const Eigen::Vector2d da = lng.direction(), db = shr.direction();
  const double cosang = std::min(1.0, std::abs(da.dot(db)));
  if (std::acos(cosang) > angle_tol) return false;
  if (std::max(point_line_distance(shr.start, lng), point_line_distance(shr.end, lng)) > offset_tol)
    return false;
  // Overlapping spans along the common direction count as touching.
  const double a0 = 0.0, a1 = lng.length();
  double b0 = (shr.start - lng.start).dot(da), b1 = (shr.end - lng.start).dot(da);
  if (b0 > b1) std::swap(b0, b1);
  if (b0 <= a1 && b1 >= a0) return true;
  const double gap = std::min({(lng.start - shr.start).norm(), (lng.start - shr.end).norm(),
                               (lng.end - shr.start).norm(), (lng.end - shr.end).norm()});
  return gap <= gap_tol;
}

Segment2D merge(const Segment2D& a, const Segment2D& b) {
  const Eigen::Vector2d pts[4] = {a.start, a.end, b.start, b.end};
  int bi = 0, bj = 1;
  double best = -1.0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j)
      if ((pts[i] - pts[j]).squaredNorm() > best) {
        best = (pts[i] - pts[j]).squaredNorm();
        bi = i;
        bj = j;
      }
  Segment2D s{pts[bi], pts[bj]};
  const Segment2D& ref = a.length() >= b.length() ? a : b;
  if ((s.end - s.start).dot(ref.end - ref.start) < 0.0) std::swap(s.start, s.end);
  return s;
}

}  // namespace

std::vector<Segment2D> fuse_colinear(std::vector<Segment2D> segments, double angle_tol_deg,
                                     double gap_tol_px, double offset_tol_px) {
  if (!(angle_tol_deg > 0 && gap_tol_px > 0 && offset_tol_px > 0))
    throw Error(ErrorCode::kInvalidArgument, "fuse_colinear: tolerances must be positive");
  const double tol = angle_tol_deg * kPi / 180.0;
  bool changed = true;
  while (changed) {
    changed = false;
    for (std::size_t i = 0; i < segments.size() && !changed; ++i) {
      for (std::size_t j = i + 1; j < segments.size(); ++j) {
        if (fusable(segments[i], segments[j], tol, gap_tol_px, offset_tol_px)) {
          segments[i] = merge(segments[i], segments[j]);
          segments.erase(segments.begin() + static_cast<std::ptrdiff_t>(j));
          changed = true;
          break;
        }
      }
    }
  }
  sort_by_length(segments);
  return segments;
}

std::vector<Segment2D> filter_short(const std::vector<Segment2D>& segments, double min_length_px) {
  if (min_length_px < 0) throw Error(ErrorCode::kInvalidArgument, "filter_short: negative minimum");
  std::vector<Segment2D> out;
  for (const auto& s : segments)
    if (s.length() >= min_length_px) out.push_back(s);
  return out;
}

}  // namespace lcd
