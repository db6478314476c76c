#include "lcd/virtual_view.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "lcd/error.hpp"

namespace lcd {

VirtualCamera virtual_camera_for_line(const Line3D& line, const VirtualViewConfig& cfg) {
  const bool has_l = line.normal_left.squaredNorm() > 0.0;
  const bool has_r = line.normal_right.squaredNorm() > 0.0;
  if (!has_l && !has_r) throw Error(ErrorCode::kInvalidArgument, "virtual camera: line has no plane normal");
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  if (has_l) mean += line.normal_left;
  if (has_r) mean += line.normal_right;
  const Eigen::Vector3d mid = line.midpoint();
  if (mean.norm() < 1e-6) {
    // Opposing normals: keep the one facing the camera most directly.
    const Eigen::Vector3d to_cam = -mid.normalized();
    mean = line.normal_left.dot(to_cam) >= line.normal_right.dot(to_cam) ? line.normal_left
                                                                          : line.normal_right;
  }
  const Eigen::Vector3d n = mean.normalized();

  VirtualCamera cam;
  cam.view = -n;
  cam.center = mid + cfg.camera_distance * n;
  Eigen::Vector3d along = line.end - line.start;
  along -= along.dot(cam.view) * cam.view;
  if (along.norm() < 1e-9) {
    // Line parallel to the viewing direction; any orthogonal axis will do.
    along = std::abs(cam.view.x()) < 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitY();
    along -= along.dot(cam.view) * cam.view;
  }
  cam.along = along.normalized();
  cam.width = cfg.width_factor * line.length;
  cam.height = cfg.height_factor * line.length;
  cam.max_distance = cfg.max_distance;
  return cam;
}

RawView render_orthographic(const PointCloud& cloud, const VirtualCamera& cam, const VirtualViewConfig& cfg) {
  const Eigen::Vector3d side = cam.side();
  struct Hit {
    double x, y, depth;
    std::size_t index;
  };
  std::vector<Hit> hits;
  for (std::size_t i = 0; i < cloud.points.size(); ++i) {
    const Eigen::Vector3d rel = cloud.points[i] - cam.center;
    const double depth = rel.dot(cam.view);
    if (!(depth > 0.0) || depth > cam.max_distance) continue;
    const double x = rel.dot(cam.along), y = rel.dot(side);
    if (std::abs(x) > 0.5 * cam.width || std::abs(y) > 0.5 * cam.height) continue;
    hits.push_back({x, y, depth, i});
  }
  const double aspect = cam.width / cam.height;
  const double target = std::sqrt(static_cast<double>(hits.size()) / (aspect * cfg.points_per_pixel));
  const int h = std::clamp(static_cast<int>(std::lround(target)), cfg.min_working_height, cfg.max_working_height);
  const int w = std::max(1, static_cast<int>(std::lround(aspect * h)));

  RawView out{RgbImage(w, h, 3, 0.0f), Image<std::uint8_t>(w, h, 1, 0)};
  std::vector<double> zbuf(static_cast<std::size_t>(w) * h, std::numeric_limits<double>::infinity());
  for (const Hit& hit : hits) {
    const int col = std::min(w - 1, static_cast<int>(std::floor((hit.x / cam.width + 0.5) * w)));
    const int row = std::min(h - 1, static_cast<int>(std::floor((hit.y / cam.height + 0.5) * h)));
    double& z = zbuf[static_cast<std::size_t>(row) * w + col];
    if (hit.depth >= z) continue;
    z = hit.depth;
    out.mask.at(col, row) = 1;
    for (int c = 0; c < 3; ++c)
      out.image.at(col, row, c) =
          cloud.has_colors() ? static_cast<float>(cloud.colors[hit.index][c]) : 1.0f;
  }
  return out;
}

RgbImage inpaint_holes(const RgbImage& image, const Image<std::uint8_t>& mask, int dilation_px,
                       double tolerance, int max_iterations) {
  const int w = image.width(), h = image.height();
  if (!mask.same_size(w, h)) throw Error(ErrorCode::kShapeMismatch, "inpaint: mask size differs from image");
  RgbImage out = image;
  // Chebyshev dilation of the valid mask decides which holes get filled.
  std::vector<char> fill(static_cast<std::size_t>(w) * h, 0);
  bool any_valid = false;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (mask.at(x, y)) {
        any_valid = true;
        continue;
      }
      bool near = false;
      for (int dy = -dilation_px; dy <= dilation_px && !near; ++dy)
        for (int dx = -dilation_px; dx <= dilation_px && !near; ++dx)
          near = mask.inside(x + dx, y + dy) && mask.at(x + dx, y + dy);
      fill[static_cast<std::size_t>(y) * w + x] = near ? 1 : 0;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!mask.at(x, y))
        for (int c = 0; c < 3; ++c) out.at(x, y, c) = 0.0f;
  if (!any_valid) return out;

  std::vector<int> holes;
  for (int i = 0; i < w * h; ++i)
    if (fill[i]) holes.push_back(i);
  if (holes.empty()) return out;

  // Work in double; neighbours outside the fill region and the valid set are ignored (Neumann).
  std::vector<double> val(static_cast<std::size_t>(w) * h * 3);
  for (std::size_t i = 0; i < val.size(); ++i) val[i] = out.data()[i];
  auto usable = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= w || y >= h) return false;
    return mask.at(x, y) != 0 || fill[static_cast<std::size_t>(y) * w + x] != 0;
  };
  static constexpr int kDx[4] = {1, -1, 0, 0}, kDy[4] = {0, 0, 1, -1};
  for (int it = 0; it < max_iterations; ++it) {
    double max_change = 0.0;
    for (int idx : holes) {
      const int x = idx % w, y = idx / w;
      double sum[3] = {0, 0, 0};
      int count = 0;
      for (int k = 0; k < 4; ++k) {
        const int nx = x + kDx[k], ny = y + kDy[k];
        if (!usable(nx, ny)) continue;
        const std::size_t n = (static_cast<std::size_t>(ny) * w + nx) * 3;
        for (int c = 0; c < 3; ++c) sum[c] += val[n + c];
        ++count;
      }
      if (count == 0) continue;
      for (int c = 0; c < 3; ++c) {
        double& v = val[static_cast<std::size_t>(idx) * 3 + c];
        const double nv = sum[c] / count;
        max_change = std::max(max_change, std::abs(nv - v));
        v = nv;
      }
    }
    if (max_change < tolerance) break;
  }
  for (int idx : holes)
    for (int c = 0; c < 3; ++c)
      out.data()[static_cast<std::size_t>(idx) * 3 + c] = static_cast<float>(val[static_cast<std::size_t>(idx) * 3 + c]);
  return out;
}

RgbImage resize_bilinear(const RgbImage& image, int width, int height) {
  const int sw = image.width(), sh = image.height(), ch = image.channels();
  if (sw == 0 || sh == 0) throw Error(ErrorCode::kInvalidArgument, "resize: empty image");
  RgbImage out(width, height, ch, 0.0f);
  const double sx = static_cast<double>(sw) / width, sy = static_cast<double>(sh) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, sh - 1.0);
    const int y0 = static_cast<int>(std::floor(fy)), y1 = std::min(y0 + 1, sh - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, sw - 1.0);
      const int x0 = static_cast<int>(std::floor(fx)), x1 = std::min(x0 + 1, sw - 1);
      const double tx = fx - x0;
      for (int c = 0; c < ch; ++c) {
        const double top = (1 - tx) * image.at(x0, y0, c) + tx * image.at(x1, y0, c);
        const double bot = (1 - tx) * image.at(x0, y1, c) + tx * image.at(x1, y1, c);
        out.at(x, y, c) = static_cast<float>((1 - ty) * top + ty * bot);
      }
    }
  }
  return out;
}

RgbImage finalize(const RgbImage& image) {
  RgbImage out = (image.width() == kVirtualWidth && image.height() == kVirtualHeight)
                     ? image
                     : resize_bilinear(image, kVirtualWidth, kVirtualHeight);
  for (float& v : out.values()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

RgbImage virtual_image(const PointCloud& cloud, const Line3D& line, const VirtualViewConfig& cfg) {
  const VirtualCamera cam = virtual_camera_for_line(line, cfg);
  const RawView raw = render_orthographic(cloud, cam, cfg);
  return finalize(inpaint_holes(raw.image, raw.mask, cfg.dilation_px, cfg.inpaint_tolerance,
                                cfg.inpaint_max_iterations));
}

double image_correlation(const RgbImage& a, const RgbImage& b) {
  if (a.size() != b.size() || a.size() == 0) throw Error(ErrorCode::kShapeMismatch, "correlation: size mismatch");
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a.data()[i];
    mb += b.data()[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a.data()[i] - ma, db = b.data()[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) return saa == sbb ? 1.0 : 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace lcd
