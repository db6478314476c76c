#include "lcd/manifest.hpp"

#include <cmath>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

namespace lcd {
namespace fs = std::filesystem;

nlohmann::json intrinsics_to_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics intrinsics_from_json(const nlohmann::json& j) {
  try {
    CameraIntrinsics k;
    k.fx = j.at("fx").get<double>();
    k.fy = j.at("fy").get<double>();
    k.cx = j.at("cx").get<double>();
    k.cy = j.at("cy").get<double>();
    k.width = j.at("width").get<int>();
    k.height = j.at("height").get<int>();
    k.validate();
    return k;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("intrinsics: ") + e.what());
  }
}

nlohmann::json FrameEntry::to_json() const {
  nlohmann::json j = {{"frame_id", frame_id},
                      {"color", color},
                      {"depth", depth},
                      {"depth_units_per_meter", kDepthUnitsPerMeter},
                      {"intrinsics", intrinsics_to_json(intrinsics)}};
  if (!instance.empty()) j["instance"] = instance;
  if (!semantic.empty()) j["semantic"] = semantic;
  if (pose) {
    std::vector<double> m;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) m.push_back(pose->matrix()(r, c));
    j["pose"] = m;
  }
  return j;
}

FrameEntry FrameEntry::from_json(const nlohmann::json& j) {
  try {
    FrameEntry e;
    e.frame_id = j.at("frame_id").get<int>();
    e.color = j.at("color").get<std::string>();
    e.depth = j.at("depth").get<std::string>();
    if (j.value("depth_units_per_meter", kDepthUnitsPerMeter) != kDepthUnitsPerMeter)
      throw Error(ErrorCode::kParse, "frame entry: depth must be stored in millimeters");
    e.instance = j.value("instance", "");
    e.semantic = j.value("semantic", "");
    e.intrinsics = intrinsics_from_json(j.at("intrinsics"));
    if (j.contains("pose")) {
      const auto m = j.at("pose").get<std::vector<double>>();
      if (m.size() != 16) throw Error(ErrorCode::kParse, "frame entry: pose needs 16 values");
      Eigen::Matrix4d mat;
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) mat(r, c) = m[r * 4 + c];
      e.pose = Eigen::Isometry3d(mat);
    }
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParse, std::string("frame entry: ") + ex.what());
  }
}

namespace {

void write_png(const fs::path& path, const cv::Mat& m) {
  if (!cv::imwrite(path.string(), m, {cv::IMWRITE_PNG_COMPRESSION, 3}))
    throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

cv::Mat read_png(const fs::path& path, int flags, int expected_type) {
  if (!fs::exists(path)) throw Error(ErrorCode::kIo, "missing file " + path.string());
  cv::Mat m = cv::imread(path.string(), flags);
  if (m.empty()) throw Error(ErrorCode::kParse, "unreadable image " + path.string());
  if (m.type() != expected_type) throw Error(ErrorCode::kParse, "unexpected pixel format in " + path.string());
  return m;
}

cv::Mat label_mat(const LabelImage& img) {
  cv::Mat m(img.height(), img.width(), CV_16UC1);
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x) {
      const int v = img.at(x, y) + 1;
      if (v < 0 || v > 65535) throw Error(ErrorCode::kInvalidArgument, "label id out of 16-bit range");
      m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(v);
    }
  return m;
}

LabelImage label_image(const cv::Mat& m) {
  LabelImage img(m.cols, m.rows, 1, -1);
  for (int y = 0; y < m.rows; ++y)
    for (int x = 0; x < m.cols; ++x) img.at(x, y) = static_cast<int>(m.at<std::uint16_t>(y, x)) - 1;
  return img;
}

}  // namespace

FrameEntry write_frame_files(const fs::path& dir, const Frame& frame, const std::string& stem) {
  frame.validate();
  fs::create_directories(dir);
  FrameEntry e;
  e.frame_id = frame.frame_id;
  e.intrinsics = frame.intrinsics;
  e.pose = frame.pose;
  const int w = frame.width(), h = frame.height();

  cv::Mat color(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      color.at<cv::Vec3b>(y, x) = {frame.color.at(x, y, 2), frame.color.at(x, y, 1), frame.color.at(x, y, 0)};
  e.color = stem + "_color.png";
  write_png(dir / e.color, color);

  cv::Mat depth(h, w, CV_16UC1);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double mm = std::round(frame.depth.at(x, y) * kDepthUnitsPerMeter);
      if (mm > 65535) throw Error(ErrorCode::kInvalidArgument, "depth exceeds the 16-bit millimeter range");
      depth.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(mm);
    }
  e.depth = stem + "_depth.png";
  write_png(dir / e.depth, depth);

  if (frame.instance_mask) {
    e.instance = stem + "_instance.png";
    write_png(dir / e.instance, label_mat(*frame.instance_mask));
  }
  if (frame.semantic_mask) {
    e.semantic = stem + "_semantic.png";
    write_png(dir / e.semantic, label_mat(*frame.semantic_mask));
  }
  return e;
}

Frame load_frame(const fs::path& dir, const FrameEntry& entry, int scene_id) {
  Frame f;
  f.frame_id = entry.frame_id;
  f.scene_id = scene_id;
  f.intrinsics = entry.intrinsics;
  f.pose = entry.pose;
  const cv::Mat color = read_png(dir / entry.color, cv::IMREAD_COLOR, CV_8UC3);
  f.color = ColorImage(color.cols, color.rows, 3, 0);
  for (int y = 0; y < color.rows; ++y)
    for (int x = 0; x < color.cols; ++x) {
      const cv::Vec3b p = color.at<cv::Vec3b>(y, x);
      for (int c = 0; c < 3; ++c) f.color.at(x, y, c) = p[2 - c];
    }
  const cv::Mat depth = read_png(dir / entry.depth, cv::IMREAD_UNCHANGED, CV_16UC1);
  f.depth = DepthImage(depth.cols, depth.rows, 1, 0.0);
  for (int y = 0; y < depth.rows; ++y)
    for (int x = 0; x < depth.cols; ++x) f.depth.at(x, y) = depth.at<std::uint16_t>(y, x) / kDepthUnitsPerMeter;
  if (!entry.instance.empty())
    f.instance_mask = label_image(read_png(dir / entry.instance, cv::IMREAD_UNCHANGED, CV_16UC1));
  if (!entry.semantic.empty())
    f.semantic_mask = label_image(read_png(dir / entry.semantic, cv::IMREAD_UNCHANGED, CV_16UC1));
  try {
    f.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::kParse, std::string("frame ") + std::to_string(entry.frame_id) + ": " + e.what());
  }
  return f;
}

}  // namespace lcd
