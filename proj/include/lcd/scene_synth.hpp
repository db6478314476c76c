#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcd/rgbd.hpp"
#include "lcd/segment.hpp"

namespace lcd {

/// Background surfaces use the first ids of every scene.
enum class Surface { kFloor = 0, kCeiling = 1, kWallXMin = 2, kWallXMax = 3, kWallZMin = 4, kWallZMax = 5 };
inline constexpr int kSurfaceCount = 6;
inline constexpr int kFirstObjectId = kSurfaceCount;

/// Semantic classes: 0 floor, 1 ceiling, 2 wall; objects start at kFirstObjectClass.
inline constexpr int kFirstObjectClass = 3;
inline bool is_background_class(int semantic) { return semantic >= 0 && semantic < kFirstObjectClass; }

using Rgb = std::array<double, 3>;  // [0, 1]

struct StripePattern {
  bool enabled = false;
  bool vertical = false;  // stripes run along the face's vertical axis
  double period = 0.3;    // meters
  double width = 0.05;
  Rgb color{0, 0, 0};
};

/// Axis-aligned rectangle painted on a wall, in wall coordinates (horizontal, height).
struct Panel {
  Surface wall = Surface::kWallXMin;
  double u0 = 0, u1 = 0, v0 = 0, v1 = 0;
  Rgb color{0, 0, 0};
};

/// Cuboid standing on the floor, rotated about the vertical axis.
struct SceneObject {
  int instance_id = kFirstObjectId;
  int semantic = kFirstObjectClass;
  Eigen::Vector3d center = Eigen::Vector3d::Zero();  // world, y up
  Eigen::Vector3d half = Eigen::Vector3d::Constant(0.25);
  double yaw = 0;
  std::array<Rgb, 6> face_colors{};  // +x, -x, +y, -y, +z, -z in object coordinates
  StripePattern stripes;

  double footprint_radius() const { return std::hypot(half.x(), half.z()); }
};

struct SceneSpec {
  int scene_id = 0;
  std::uint64_t seed = 0;
  Eigen::Vector3d room = Eigen::Vector3d(5, 2.8, 5);  // x width, y height, z depth; room spans [0, room]
  std::array<Rgb, kSurfaceCount> surface_colors{};
  std::vector<Panel> panels;
  Rgb baseboard{0.2, 0.2, 0.2};
  std::vector<SceneObject> objects;

  int semantic_of(int instance_id) const;
  nlohmann::json to_json() const;
  static SceneSpec from_json(const nlohmann::json& j);
};

struct SynthConfig {
  int scenes = 20;
  int views = 8;
  std::uint64_t seed = 1;
  double room_min = 4.0;
  double room_max = 6.0;
  int objects_min = 4;
  int objects_max = 10;
  double min_spacing = 0.25;
  int object_classes = 6;
  double stripe_probability = 0.7;
  int width = 320;
  int height = 240;
  double focal = 262.5;  // pixels at the configured width
  int supersample = 2;
  int max_pose_retries = 500;

  void validate() const;
  nlohmann::json to_json() const;
  static SynthConfig from_json(const nlohmann::json& j, const std::string& path = "synth");
  CameraIntrinsics intrinsics() const;
};

SceneSpec generate_scene(std::uint64_t seed, const SynthConfig& cfg, int scene_id = 0);

struct RayHit {
  double t = 0;  // ray parameter; equals camera depth for rays with unit z in camera frame
  int instance = -1;
  int semantic = -1;
  Eigen::Vector3d point = Eigen::Vector3d::Zero();
  Eigen::Vector3d normal = Eigen::Vector3d::Zero();
  Rgb color{0, 0, 0};
};

/// Nearest surface hit of a world ray starting inside the room.
RayHit cast_ray(const SceneSpec& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir);

/// Camera-to-world pose looking from `eye` towards `target`, world y up.
Eigen::Isometry3d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target);

Frame render_view(const SceneSpec& scene, const Eigen::Isometry3d& pose, const SynthConfig& cfg, int frame_id);

/// Samples poses inside free space looking at objects and renders them. Throws kDegenerate
/// when no valid pose is found within the retry budget.
std::vector<Frame> render_views(const SceneSpec& scene, int n_views, std::uint64_t seed, const SynthConfig& cfg);

/// Majority instance id in a +-band_px neighbourhood of each segment; ids of floor, ceiling
/// and walls map to background (-1). Ties go to the lowest id.
std::vector<int> ground_truth_line_labels(const Frame& frame, const std::vector<Segment2D>& segments,
                                          const SceneSpec& scene, double band_px = 3.0);

/// Semantic class of the majority instance, -1 for background.
int instance_semantic(const SceneSpec& scene, int instance);

struct SceneRecord {
  SceneSpec spec;
  std::vector<Frame> frames;
};

/// Dataset layout: root/index.json lists scene directories; each holds scene.json (spec and
/// frame entries) plus the frame images.
void write_dataset(const std::filesystem::path& root, const std::vector<SceneRecord>& scenes, const SynthConfig& cfg);
std::vector<SceneRecord> read_dataset(const std::filesystem::path& root);

/// Scene directory listing without loading images.
struct SceneIndex {
  SceneSpec spec;
  std::filesystem::path dir;
  std::vector<nlohmann::json> frames;
};
std::vector<SceneIndex> read_dataset_index(const std::filesystem::path& root);

/// Generates and writes cfg.scenes scenes with cfg.views frames each.
void synthesize_dataset(const std::filesystem::path& root, const SynthConfig& cfg);

}  // namespace lcd
