#include "lcd/line_geometry.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>

#include <Eigen/Dense>

#include "lcd/error.hpp"

namespace lcd {

const char* to_string(LineType t) {
  switch (t) {
    case LineType::kEdge: return "edge";
    case LineType::kTexture: return "texture";
    case LineType::kDiscontinuity: return "discontinuity";
  }
  return "?";
}

LineType line_type_from_string(const std::string& s) {
  if (s == "edge") return LineType::kEdge;
  if (s == "texture") return LineType::kTexture;
  if (s == "discontinuity") return LineType::kDiscontinuity;
  throw Error(ErrorCode::kParse, "unknown line type '" + s + "'");
}

GeomVector geom_vector(const Line3D& line) {
  GeomVector v{};
  for (int i = 0; i < 3; ++i) {
    v[i] = line.start[i];
    v[3 + i] = line.end[i];
    v[6 + i] = line.normal_left[i];
    v[9 + i] = line.normal_right[i];
  }
  v[12] = (line.end - line.start).norm();
  v[13] = line.occluded_start ? 1.0 : 0.0;
  v[14] = line.occluded_end ? 1.0 : 0.0;
  return v;
}

namespace {

void orient_to_camera(Plane& p) {
  if (p.normal.dot(-p.centroid) < 0.0) p.normal = -p.normal;
}

std::optional<Eigen::Vector3d> intersect_ray(const Eigen::Vector3d& ray, const Plane& plane) {
  const double denom = plane.normal.dot(ray);
  if (std::abs(denom) < 1e-12) return std::nullopt;
  const double t = plane.normal.dot(plane.centroid) / denom;
  if (!(t > 0.0)) return std::nullopt;
  return t * ray;
}

}  // namespace

std::optional<Plane> fit_plane_least_squares(const std::vector<Eigen::Vector3d>& points) {
  if (points.size() < 3) return std::nullopt;
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  for (const auto& p : points) mean += p;
  mean /= static_cast<double>(points.size());
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  for (const auto& p : points) cov += (p - mean) * (p - mean).transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  // Collinear or coincident points leave the normal undetermined.
  if (es.eigenvalues()(1) <= 1e-18 * std::max(1.0, es.eigenvalues()(2))) return std::nullopt;
  Plane plane;
  plane.normal = es.eigenvectors().col(0).normalized();
  plane.centroid = mean;
  plane.inliers = points.size();
  orient_to_camera(plane);
  return plane;
}

std::optional<Plane> fit_plane_ransac(const PointCloud& cloud, const RansacConfig& cfg,
                                      std::uint64_t seed) {
  if (cfg.iterations < 1 || !(cfg.inlier_distance > 0.0))
    throw Error(ErrorCode::kInvalidArgument, "ransac: iterations >= 1 and positive inlier distance required");
  const auto& pts = cloud.points;
  const std::size_t n = pts.size();
  if (n < 3) return std::nullopt;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t best_count = 0;
  Eigen::Vector3d best_normal = Eigen::Vector3d::Zero(), best_point = Eigen::Vector3d::Zero();
  for (int it = 0; it < cfg.iterations; ++it) {
    std::size_t i = pick(rng), j = pick(rng), k = pick(rng);
    if (i == j || j == k || i == k) continue;
    const Eigen::Vector3d nrm = (pts[j] - pts[i]).cross(pts[k] - pts[i]);
    const double len = nrm.norm();
    if (len < 1e-12) continue;
    const Eigen::Vector3d unit = nrm / len;
    std::size_t count = 0;
    for (const auto& p : pts)
      if (std::abs(unit.dot(p - pts[i])) <= cfg.inlier_distance) ++count;
    if (count > best_count) {
      best_count = count;
      best_normal = unit;
      best_point = pts[i];
    }
  }
  if (best_count < std::max<std::size_t>(cfg.min_inliers, 3)) return std::nullopt;

  std::vector<Eigen::Vector3d> inliers;
  inliers.reserve(best_count);
  for (const auto& p : pts)
    if (std::abs(best_normal.dot(p - best_point)) <= cfg.inlier_distance) inliers.push_back(p);
  auto refined = fit_plane_least_squares(inliers);
  if (!refined) return std::nullopt;
  std::size_t count = 0;
  for (const auto& p : pts)
    if (std::abs(refined->signed_distance(p)) <= cfg.inlier_distance) ++count;
  refined->inliers = count;
  if (count < cfg.min_inliers) return std::nullopt;
  return refined;
}

namespace {

double plane_separation(const Plane& a, const Plane& b) {
  const Eigen::Vector3d d = b.centroid - a.centroid;
  return std::max(std::abs(a.normal.dot(d)), std::abs(b.normal.dot(d)));
}

std::optional<Line3D> project_onto(const Plane& plane, const Eigen::Vector3d& rs, const Eigen::Vector3d& re) {
  auto ps = intersect_ray(rs, plane), pe = intersect_ray(re, plane);
  if (!ps || !pe) return std::nullopt;
  Line3D l;
  l.start = *ps;
  l.end = *pe;
  return l;
}

// Point on the intersection line (p0 + s u) closest to the camera ray t r.
std::optional<Eigen::Vector3d> closest_on_line(const Eigen::Vector3d& p0, const Eigen::Vector3d& u,
                                               const Eigen::Vector3d& r) {
  const double a = u.dot(u), b = u.dot(r), c = r.dot(r);
  const double d = u.dot(p0), e = r.dot(p0);
  const double den = a * c - b * b;
  if (den < 1e-12 * a * c) return std::nullopt;
  const double s = (b * e - c * d) / den;
  return p0 + s * u;
}

bool missing_side_is_farther(const Frame& frame, const Segment2D& seg, Side missing, const Plane& plane,
                             const GeometryConfig& cfg) {
  const PointCloud other = pool_depth_band(frame, seg, missing, cfg.band);
  if (other.empty()) return false;
  std::size_t farther = 0;
  for (const auto& p : other.points) {
    const auto hit = intersect_ray(p / p.z(), plane);
    if (hit && p.z() > hit->z() + cfg.coplanar_distance) ++farther;
  }
  return 2 * farther > other.size();
}

}  // namespace

std::optional<Line3D> classify_and_project(const Segment2D& seg, const std::optional<Plane>& left,
                                           const std::optional<Plane>& right, const Frame& frame,
                                           const GeometryConfig& cfg) {
  if (!left && !right) return std::nullopt;
  const auto& k = frame.intrinsics;
  const Eigen::Vector3d rs = pixel_ray(seg.start.x(), seg.start.y(), k);
  const Eigen::Vector3d re = pixel_ray(seg.end.x(), seg.end.y(), k);

  std::optional<Line3D> line;
  if (!left || !right) {
    const Plane& plane = left ? *left : *right;
    line = project_onto(plane, rs, re);
    if (!line) return std::nullopt;
    const Side missing = left ? Side::kRight : Side::kLeft;
    line->type = missing_side_is_farther(frame, seg, missing, plane, cfg) ? LineType::kDiscontinuity
                                                                          : LineType::kTexture;
  } else {
    const Plane& pl = *left;
    const Plane& pr = *right;
    const double cos_tol = std::cos(cfg.coplanar_angle_deg * std::numbers::pi / 180.0);
    const double mutual = std::max(std::abs(pl.signed_distance(pr.centroid)), std::abs(pr.signed_distance(pl.centroid)));
    const Plane& closer = pl.centroid.z() <= pr.centroid.z() ? pl : pr;
    const Eigen::Vector3d axis = pl.normal.cross(pr.normal);
    if (pl.normal.dot(pr.normal) >= cos_tol && mutual <= cfg.coplanar_distance) {
      Plane avg;
      avg.normal = (pl.normal + pr.normal).normalized();
      avg.centroid = 0.5 * (pl.centroid + pr.centroid);
      line = project_onto(avg, rs, re);
      if (line) line->type = LineType::kTexture;
    } else if (plane_separation(pl, pr) > cfg.discontinuity_separation || axis.norm() < 1e-6) {
      line = project_onto(closer, rs, re);
      if (line) line->type = LineType::kDiscontinuity;
    } else {
      // Intersection line: the point closest to the origin solves [nl; nr; axis] x = [hl; hr; 0].
      Eigen::Matrix3d a;
      a.row(0) = pl.normal.transpose();
      a.row(1) = pr.normal.transpose();
      a.row(2) = axis.transpose();
      const Eigen::Vector3d rhs(pl.normal.dot(pl.centroid), pr.normal.dot(pr.centroid), 0.0);
      const Eigen::Vector3d p0 = a.colPivHouseholderQr().solve(rhs);
      const Eigen::Vector3d u = axis.normalized();
      auto ps = closest_on_line(p0, u, rs), pe = closest_on_line(p0, u, re);
      if (ps && pe && ps->z() > 0.0 && pe->z() > 0.0) {
        line = Line3D{};
        line->start = *ps;
        line->end = *pe;
        line->type = LineType::kEdge;
      }
    }
    if (!line) return std::nullopt;
  }
  if (left) line->normal_left = left->normal;
  if (right) line->normal_right = right->normal;
  line->length = (line->end - line->start).norm();
  if (line->length < cfg.min_length_3d) return std::nullopt;
  return line;
}

std::pair<bool, bool> occlusion_flags(const Frame& frame, const Line3D& line, const Segment2D& seg,
                                      const GeometryConfig& cfg) {
  const int w = frame.width(), h = frame.height();
  const double m = cfg.edge_margin_px;
  const Eigen::Vector2d dir = seg.direction();
  auto flag = [&](const Eigen::Vector2d& px, const Eigen::Vector2d& outward, double z) {
    if (px.x() < m || px.y() < m || px.x() > w - 1 - m || px.y() > h - 1 - m) return true;
    for (int step = 2; step <= 6; ++step) {
      const Eigen::Vector2d q = px + step * outward;
      const int qx = static_cast<int>(std::lround(q.x())), qy = static_cast<int>(std::lround(q.y()));
      if (!frame.depth.inside(qx, qy)) return true;
      const double d = frame.depth.at(qx, qy);
      if (d > 0.0 && d < z - cfg.occlusion_depth_tol) return true;
    }
    return false;
  };
  return {flag(seg.start, -dir, line.start.z()), flag(seg.end, dir, line.end.z())};
}

std::optional<Line3D> reproject_segment(const Frame& frame, const Segment2D& seg,
                                        const GeometryConfig& cfg, std::uint64_t seed) {
  const PointCloud left_cloud = pool_depth_band(frame, seg, Side::kLeft, cfg.band);
  const PointCloud right_cloud = pool_depth_band(frame, seg, Side::kRight, cfg.band);
  const auto left = fit_plane_ransac(left_cloud, cfg.ransac, seed);
  const auto right = fit_plane_ransac(right_cloud, cfg.ransac, seed ^ 0x9e3779b97f4a7c15ULL);
  auto line = classify_and_project(seg, left, right, frame, cfg);
  if (!line) return std::nullopt;
  const auto [os, oe] = occlusion_flags(frame, *line, seg, cfg);
  line->occluded_start = os;
  line->occluded_end = oe;
  return line;
}

void write_line_dump(std::ostream& out, const std::vector<Line3D>& lines) {
  std::ostringstream s;
  s.precision(17);
  for (const auto& l : lines) {
    const GeomVector g = geom_vector(l);
    for (int i = 0; i < 13; ++i) s << g[i] << ' ';
    s << (l.occluded_start ? 1 : 0) << ' ' << (l.occluded_end ? 1 : 0) << ' ' << to_string(l.type) << '\n';
  }
  out << s.str();
}

std::vector<Line3D> read_line_dump(std::istream& in) {
  std::vector<Line3D> lines;
  std::string text;
  int lineno = 0;
  while (std::getline(in, text)) {
    ++lineno;
    if (text.empty() || text[0] == '#') continue;
    std::istringstream ls(text);
    double v[13];
    int os = 0, oe = 0;
    std::string type;
    for (double& x : v)
      if (!(ls >> x)) throw Error(ErrorCode::kParse, "line dump: bad record " + std::to_string(lineno));
    if (!(ls >> os >> oe >> type)) throw Error(ErrorCode::kParse, "line dump: bad record " + std::to_string(lineno));
    Line3D l;
    l.start = {v[0], v[1], v[2]};
    l.end = {v[3], v[4], v[5]};
    l.normal_left = {v[6], v[7], v[8]};
    l.normal_right = {v[9], v[10], v[11]};
    l.length = v[12];
    l.occluded_start = os != 0;
    l.occluded_end = oe != 0;
    l.type = line_type_from_string(type);
    lines.push_back(l);
  }
  return lines;
}

}  // namespace lcd
