#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"
#include "lcd/rgbd.hpp"

namespace lcd {

/// One frame of a scene directory. Paths are relative to the scene directory.
/// Color is 8-bit RGB PNG, depth is 16-bit PNG in millimeters (0 = missing), label images
/// are 16-bit PNG holding id + 1 (0 = unlabeled).
struct FrameEntry {
  int frame_id = 0;
  std::string color;
  std::string depth;
  std::string instance;  // empty when absent
  std::string semantic;
  CameraIntrinsics intrinsics;
  std::optional<Eigen::Isometry3d> pose;

  nlohmann::json to_json() const;
  static FrameEntry from_json(const nlohmann::json& j);
};

inline constexpr double kDepthUnitsPerMeter = 1000.0;

/// Writes the images of `frame` into `dir` with file names derived from `stem`.
FrameEntry write_frame_files(const std::filesystem::path& dir, const Frame& frame, const std::string& stem);

/// Loads a frame; depth comes back quantized to millimeters.
Frame load_frame(const std::filesystem::path& dir, const FrameEntry& entry, int scene_id);

nlohmann::json intrinsics_to_json(const CameraIntrinsics& k);
CameraIntrinsics intrinsics_from_json(const nlohmann::json& j);

}  // namespace lcd
