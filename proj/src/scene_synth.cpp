#include "lcd/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <random>

#include "lcd/config.hpp"
#include "lcd/manifest.hpp"

namespace lcd {
namespace fs = std::filesystem;

namespace {

constexpr int kDatasetVersion = 1;

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

nlohmann::json vec_json(const Eigen::Vector3d& v) { return {v.x(), v.y(), v.z()}; }
Eigen::Vector3d json_vec(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  if (v.size() != 3) throw Error(ErrorCode::kParse, "expected a 3-vector");
  return {v[0], v[1], v[2]};
}

// Object half-extent ranges per class: {x lo, x hi, y lo, y hi, z lo, z hi}.
constexpr std::array<std::array<double, 6>, 6> kClassSizes{{
    {0.40, 0.70, 0.35, 0.40, 0.30, 0.50},
    {0.30, 0.50, 0.60, 0.90, 0.20, 0.30},
    {0.15, 0.30, 0.15, 0.30, 0.15, 0.30},
    {0.40, 0.60, 0.80, 1.00, 0.15, 0.20},
    {0.70, 1.00, 0.20, 0.30, 0.90, 1.10},
    {0.18, 0.25, 0.25, 0.35, 0.18, 0.25},
}};

const Eigen::Vector3d kLight = Eigen::Vector3d(0.35, 0.85, 0.4).normalized();

Rgb shade(const Rgb& c, const Eigen::Vector3d& n) {
  const double k = 0.55 + 0.45 * std::max(0.0, n.dot(kLight)) + 0.1 * std::abs(n.x());
  return {std::min(1.0, c[0] * k), std::min(1.0, c[1] * k), std::min(1.0, c[2] * k)};
}

bool in_stripe(double coord, const StripePattern& s) {
  const double m = std::fmod(coord, s.period);
  return (m < 0 ? m + s.period : m) < s.width;
}

Eigen::Matrix3d yaw_rotation(double yaw) { return Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix(); }

}  // namespace

int SceneSpec::semantic_of(int instance_id) const {
  switch (instance_id) {
    case static_cast<int>(Surface::kFloor):
      return 0;
    case static_cast<int>(Surface::kCeiling):
      return 1;
    case static_cast<int>(Surface::kWallXMin):
    case static_cast<int>(Surface::kWallXMax):
    case static_cast<int>(Surface::kWallZMin):
    case static_cast<int>(Surface::kWallZMax):
      return 2;
    default:
      break;
  }
  for (const auto& o : objects)
    if (o.instance_id == instance_id) return o.semantic;
  return -1;
}

nlohmann::json SceneSpec::to_json() const {
  nlohmann::json objs = nlohmann::json::array();
  for (const auto& o : objects) {
    objs.push_back({{"instance_id", o.instance_id},
                    {"semantic", o.semantic},
                    {"center", vec_json(o.center)},
                    {"half", vec_json(o.half)},
                    {"yaw", o.yaw},
                    {"face_colors", o.face_colors},
                    {"stripes",
                     {{"enabled", o.stripes.enabled},
                      {"vertical", o.stripes.vertical},
                      {"period", o.stripes.period},
                      {"width", o.stripes.width},
                      {"color", o.stripes.color}}}});
  }
  nlohmann::json panels_j = nlohmann::json::array();
  for (const auto& p : panels)
    panels_j.push_back({{"wall", static_cast<int>(p.wall)}, {"u0", p.u0}, {"u1", p.u1}, {"v0", p.v0}, {"v1", p.v1},
                        {"color", p.color}});
  return {{"scene_id", scene_id},   {"seed", seed},         {"room", vec_json(room)},
          {"surface_colors", surface_colors}, {"panels", panels_j}, {"baseboard", baseboard},
          {"objects", objs}};
}

SceneSpec SceneSpec::from_json(const nlohmann::json& j) {
  try {
    SceneSpec s;
    s.scene_id = j.at("scene_id").get<int>();
    s.seed = j.at("seed").get<std::uint64_t>();
    s.room = json_vec(j.at("room"));
    s.surface_colors = j.at("surface_colors").get<std::array<Rgb, kSurfaceCount>>();
    s.baseboard = j.at("baseboard").get<Rgb>();
    for (const auto& p : j.at("panels")) {
      Panel q;
      q.wall = static_cast<Surface>(p.at("wall").get<int>());
      q.u0 = p.at("u0").get<double>();
      q.u1 = p.at("u1").get<double>();
      q.v0 = p.at("v0").get<double>();
      q.v1 = p.at("v1").get<double>();
      q.color = p.at("color").get<Rgb>();
      s.panels.push_back(q);
    }
    for (const auto& o : j.at("objects")) {
      SceneObject x;
      x.instance_id = o.at("instance_id").get<int>();
      x.semantic = o.at("semantic").get<int>();
      x.center = json_vec(o.at("center"));
      x.half = json_vec(o.at("half"));
      x.yaw = o.at("yaw").get<double>();
      x.face_colors = o.at("face_colors").get<std::array<Rgb, 6>>();
      const auto& st = o.at("stripes");
      x.stripes.enabled = st.at("enabled").get<bool>();
      x.stripes.vertical = st.at("vertical").get<bool>();
      x.stripes.period = st.at("period").get<double>();
      x.stripes.width = st.at("width").get<double>();
      x.stripes.color = st.at("color").get<Rgb>();
      s.objects.push_back(x);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("scene spec: ") + e.what());
  }
}

void SynthConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, "synth config: " + m); };
  if (scenes < 1) fail("at least one scene is required");
  if (views < 1) fail("at least one view is required");
  if (!(room_min >= 2.5) || room_max < room_min) fail("room size range invalid");
  if (objects_min < 1 || objects_max < objects_min) fail("object count range invalid");
  if (object_classes < 1 || min_spacing < 0) fail("object classes or spacing invalid");
  if (width < 16 || height < 16 || !(focal > 0) || supersample < 1) fail("image settings invalid");
  if (stripe_probability < 0 || stripe_probability > 1 || max_pose_retries < 1) fail("bad probability or retry count");
}

nlohmann::json SynthConfig::to_json() const {
  return {{"scenes", scenes},
          {"views", views},
          {"seed", seed},
          {"room_min", room_min},
          {"room_max", room_max},
          {"objects_min", objects_min},
          {"objects_max", objects_max},
          {"min_spacing", min_spacing},
          {"object_classes", object_classes},
          {"stripe_probability", stripe_probability},
          {"width", width},
          {"height", height},
          {"focal", focal},
          {"supersample", supersample},
          {"max_pose_retries", max_pose_retries}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j, const std::string& path) {
  SynthConfig c;
  StrictReader r(j, path);
  r.read("scenes", c.scenes);
  r.read("views", c.views);
  r.read("seed", c.seed);
  r.read("room_min", c.room_min);
  r.read("room_max", c.room_max);
  r.read("objects_min", c.objects_min);
  r.read("objects_max", c.objects_max);
  r.read("min_spacing", c.min_spacing);
  r.read("object_classes", c.object_classes);
  r.read("stripe_probability", c.stripe_probability);
  r.read("width", c.width);
  r.read("height", c.height);
  r.read("focal", c.focal);
  r.read("supersample", c.supersample);
  r.read("max_pose_retries", c.max_pose_retries);
  r.finish();
  c.validate();
  return c;
}

CameraIntrinsics SynthConfig::intrinsics() const {
  CameraIntrinsics k;
  k.width = width;
  k.height = height;
  k.fx = k.fy = focal;
  k.cx = (width - 1) / 2.0;
  k.cy = (height - 1) / 2.0;
  return k;
}

SceneSpec generate_scene(std::uint64_t seed, const SynthConfig& cfg, int scene_id) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  auto color = [&](double lo, double hi) { return Rgb{uni(lo, hi), uni(lo, hi), uni(lo, hi)}; };

  SceneSpec s;
  s.scene_id = scene_id;
  s.seed = seed;
  s.room = {uni(cfg.room_min, cfg.room_max), uni(2.5, 3.0), uni(cfg.room_min, cfg.room_max)};
  s.surface_colors[0] = color(0.3, 0.6);
  s.surface_colors[1] = color(0.8, 0.95);
  const Rgb wall = color(0.5, 0.9);
  for (int w = 2; w < kSurfaceCount; ++w) s.surface_colors[w] = {wall[0] * uni(0.9, 1.0), wall[1] * uni(0.9, 1.0), wall[2] * uni(0.9, 1.0)};
  s.baseboard = color(0.1, 0.3);
  const int n_panels = static_cast<int>(uni(1.0, 4.0));
  for (int p = 0; p < n_panels; ++p) {
    Panel q;
    q.wall = static_cast<Surface>(2 + static_cast<int>(uni(0.0, 4.0)) % 4);
    const double span = (q.wall == Surface::kWallXMin || q.wall == Surface::kWallXMax) ? s.room.z() : s.room.x();
    const double w = uni(0.5, 1.2);
    q.u0 = uni(0.3, span - w - 0.3);
    q.u1 = q.u0 + w;
    q.v0 = uni(0.8, 1.3);
    q.v1 = q.v0 + uni(0.4, 1.0);
    q.color = color(0.05, 0.95);
    s.panels.push_back(q);
  }

  const int target = cfg.objects_min + static_cast<int>(u01(rng) * (cfg.objects_max - cfg.objects_min + 1)) % (cfg.objects_max - cfg.objects_min + 1);
  constexpr double kWallMargin = 0.1;
  for (int attempt = 0; attempt < 4000 && static_cast<int>(s.objects.size()) < target; ++attempt) {
    SceneObject o;
    const int cls = static_cast<int>(u01(rng) * cfg.object_classes) % cfg.object_classes;
    const auto& sz = kClassSizes[cls % kClassSizes.size()];
    o.semantic = kFirstObjectClass + cls;
    o.half = {uni(sz[0], sz[1]), uni(sz[2], sz[3]), uni(sz[4], sz[5])};
    // Later attempts shrink objects so small rooms still fill up.
    if (attempt > 1000) o.half *= 0.7;
    o.yaw = uni(0.0, M_PI);
    const double r = o.footprint_radius();
    if (2 * (r + kWallMargin) >= std::min(s.room.x(), s.room.z())) continue;
    o.center = {uni(r + kWallMargin, s.room.x() - r - kWallMargin), o.half.y(),
                uni(r + kWallMargin, s.room.z() - r - kWallMargin)};
    bool clash = false;
    for (const auto& other : s.objects) {
      const double d = std::hypot(o.center.x() - other.center.x(), o.center.z() - other.center.z());
      clash = clash || d < r + other.footprint_radius() + cfg.min_spacing;
    }
    if (clash) continue;
    const Rgb base = color(0.15, 0.95);
    for (auto& f : o.face_colors) f = {base[0] * uni(0.9, 1.0), base[1] * uni(0.9, 1.0), base[2] * uni(0.9, 1.0)};
    o.stripes.enabled = u01(rng) < cfg.stripe_probability;
    o.stripes.vertical = u01(rng) < 0.5;
    o.stripes.period = uni(0.15, 0.4);
    o.stripes.width = o.stripes.period * uni(0.15, 0.35);
    o.stripes.color = color(0.0, 1.0);
    o.instance_id = kFirstObjectId + static_cast<int>(s.objects.size());
    s.objects.push_back(o);
  }
  return s;
}

RayHit cast_ray(const SceneSpec& scene, const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) {
  RayHit hit;
  hit.t = std::numeric_limits<double>::infinity();
  // Room interior: the exit face along each axis.
  static constexpr Surface kLow[3] = {Surface::kWallXMin, Surface::kFloor, Surface::kWallZMin};
  static constexpr Surface kHigh[3] = {Surface::kWallXMax, Surface::kCeiling, Surface::kWallZMax};
  for (int a = 0; a < 3; ++a) {
    if (dir[a] == 0.0) continue;
    const bool up = dir[a] > 0;
    const double t = ((up ? scene.room[a] : 0.0) - origin[a]) / dir[a];
    if (t > 0 && t < hit.t) {
      hit.t = t;
      hit.instance = static_cast<int>(up ? kHigh[a] : kLow[a]);
      hit.normal = Eigen::Vector3d::Zero();
      hit.normal[a] = up ? -1.0 : 1.0;
    }
  }
  for (const auto& o : scene.objects) {
    const Eigen::Matrix3d rt = yaw_rotation(-o.yaw);
    const Eigen::Vector3d lo = rt * (origin - o.center), ld = rt * dir;
    double t0 = -std::numeric_limits<double>::infinity(), t1 = std::numeric_limits<double>::infinity();
    int axis = -1;
    bool neg = false;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      if (ld[a] == 0.0) {
        miss = std::abs(lo[a]) > o.half[a];
        continue;
      }
      double ta = (-o.half[a] - lo[a]) / ld[a], tb = (o.half[a] - lo[a]) / ld[a];
      bool entry_neg = true;  // entering through the -a face
      if (ta > tb) {
        std::swap(ta, tb);
        entry_neg = false;
      }
      if (ta > t0) {
        t0 = ta;
        axis = a;
        neg = entry_neg;
      }
      t1 = std::min(t1, tb);
    }
    if (miss || axis < 0 || t0 > t1 || t0 <= 0 || t0 >= hit.t) continue;
    hit.t = t0;
    hit.instance = o.instance_id;
    Eigen::Vector3d ln = Eigen::Vector3d::Zero();
    ln[axis] = neg ? -1.0 : 1.0;
    hit.normal = yaw_rotation(o.yaw) * ln;
  }
  if (!std::isfinite(hit.t)) throw Error(ErrorCode::kDegenerate, "ray escaped the room");
  hit.point = origin + hit.t * dir;
  hit.semantic = scene.semantic_of(hit.instance);

  const Eigen::Vector3d& p = hit.point;
  if (hit.instance < kFirstObjectId) {
    Rgb c = scene.surface_colors[hit.instance];
    if (hit.instance >= static_cast<int>(Surface::kWallXMin)) {
      const bool x_wall = hit.instance <= static_cast<int>(Surface::kWallXMax);
      const double wu = x_wall ? p.z() : p.x(), wv = p.y();
      if (wv < 0.1) c = scene.baseboard;
      for (const auto& panel : scene.panels)
        if (static_cast<int>(panel.wall) == hit.instance && wu >= panel.u0 && wu <= panel.u1 && wv >= panel.v0 &&
            wv <= panel.v1)
          c = panel.color;
    }
    hit.color = shade(c, hit.normal);
  } else {
    const SceneObject& o = scene.objects[hit.instance - kFirstObjectId];
    const Eigen::Vector3d lp = yaw_rotation(-o.yaw) * (p - o.center);
    const Eigen::Vector3d ln = yaw_rotation(-o.yaw) * hit.normal;
    int face = 0;
    for (int a = 0; a < 3; ++a)
      if (std::abs(ln[a]) > 0.5) face = 2 * a + (ln[a] < 0 ? 1 : 0);
    Rgb c = o.face_colors[face];
    if (o.stripes.enabled && face / 2 != 1) {
      // Side faces: horizontal coordinate runs along the face, vertical is height.
      const double h = face / 2 == 0 ? lp.z() : lp.x();
      if (in_stripe(o.stripes.vertical ? h + o.half.x() : lp.y() + o.half.y(), o.stripes)) c = o.stripes.color;
    }
    hit.color = shade(c, hit.normal);
  }
  return hit;
}

Eigen::Isometry3d look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target) {
  const Eigen::Vector3d f = (target - eye).normalized();
  const Eigen::Vector3d r = f.cross(Eigen::Vector3d::UnitY()).normalized();
  const Eigen::Vector3d d = f.cross(r);
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
  pose.linear().col(0) = r;
  pose.linear().col(1) = d;
  pose.linear().col(2) = f;
  pose.translation() = eye;
  return pose;
}

Frame render_view(const SceneSpec& scene, const Eigen::Isometry3d& pose, const SynthConfig& cfg, int frame_id) {
  Frame f;
  f.intrinsics = cfg.intrinsics();
  f.frame_id = frame_id;
  f.scene_id = scene.scene_id;
  f.pose = pose;
  const int w = cfg.width, h = cfg.height, ss = cfg.supersample;
  f.color = ColorImage(w, h, 3, 0);
  f.depth = DepthImage(w, h, 1, 0.0);
  LabelImage inst(w, h, 1, -1), sem(w, h, 1, -1);
  const Eigen::Matrix3d rot = pose.linear();
  const Eigen::Vector3d eye = pose.translation();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const RayHit center = cast_ray(scene, eye, rot * pixel_ray(x, y, f.intrinsics));
      f.depth.at(x, y) = center.t;
      inst.at(x, y) = center.instance;
      sem.at(x, y) = center.semantic;
      Rgb acc{0, 0, 0};
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          const double px = x + (sx + 0.5) / ss - 0.5, py = y + (sy + 0.5) / ss - 0.5;
          const RayHit sub = ss == 1 ? center : cast_ray(scene, eye, rot * pixel_ray(px, py, f.intrinsics));
          for (int c = 0; c < 3; ++c) acc[c] += sub.color[c];
        }
      for (int c = 0; c < 3; ++c)
        f.color.at(x, y, c) = static_cast<std::uint8_t>(std::lround(std::clamp(acc[c] / (ss * ss), 0.0, 1.0) * 255.0));
    }
  f.instance_mask = std::move(inst);
  f.semantic_mask = std::move(sem);
  return f;
}

std::vector<Frame> render_views(const SceneSpec& scene, int n_views, std::uint64_t seed, const SynthConfig& cfg) {
  if (n_views < 1) throw Error(ErrorCode::kInvalidArgument, "render_views: need at least one view");
  if (scene.objects.empty()) throw Error(ErrorCode::kDegenerate, "render_views: scene has no objects to look at");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  std::vector<Frame> frames;
  for (int v = 0; v < n_views; ++v) {
    std::optional<Eigen::Isometry3d> pose;
    for (int attempt = 0; attempt < cfg.max_pose_retries && !pose; ++attempt) {
      const SceneObject& target_obj = scene.objects[static_cast<std::size_t>(u01(rng) * scene.objects.size()) % scene.objects.size()];
      const Eigen::Vector3d eye(uni(0.4, scene.room.x() - 0.4), uni(1.1, 1.8), uni(0.4, scene.room.z() - 0.4));
      const Eigen::Vector3d target = target_obj.center + Eigen::Vector3d(uni(-0.3, 0.3), uni(-0.2, 0.3), uni(-0.3, 0.3));
      bool blocked = false;
      for (const auto& o : scene.objects) {
        const Eigen::Vector3d local = yaw_rotation(-o.yaw) * (eye - o.center);
        blocked = blocked || ((local.array().abs() < (o.half.array() + 0.6)).all());
      }
      const double dist = (target - eye).norm();
      if (blocked || dist < 1.2) continue;
      const RayHit h = cast_ray(scene, eye, (target - eye).normalized());
      if (h.instance != target_obj.instance_id) continue;
      pose = look_at(eye, target);
    }
    if (!pose) throw Error(ErrorCode::kDegenerate, "render_views: no valid camera pose found");
    frames.push_back(render_view(scene, *pose, cfg, v));
  }
  return frames;
}

std::vector<int> ground_truth_line_labels(const Frame& frame, const std::vector<Segment2D>& segments,
                                          const SceneSpec& scene, double band_px) {
  if (!frame.instance_mask) throw Error(ErrorCode::kInvalidArgument, "ground truth labels need an instance mask");
  const LabelImage& mask = *frame.instance_mask;
  std::vector<int> out;
  for (const Segment2D& s : segments) {
    const Eigen::Vector2d a = s.start, b = s.end;
    const Eigen::Vector2d ab = b - a;
    const double len2 = ab.squaredNorm();
    const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x(), b.x()) - band_px)));
    const int x1 = std::min(mask.width() - 1, static_cast<int>(std::ceil(std::max(a.x(), b.x()) + band_px)));
    const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y(), b.y()) - band_px)));
    const int y1 = std::min(mask.height() - 1, static_cast<int>(std::ceil(std::max(a.y(), b.y()) + band_px)));
    std::map<int, std::size_t> votes;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const Eigen::Vector2d p(x, y);
        const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
        if ((p - (a + t * ab)).norm() > band_px) continue;
        const int id = mask.at(x, y);
        if (id >= 0) ++votes[id];
      }
    int best = -1;
    std::size_t best_count = 0;
    for (const auto& [id, count] : votes)
      if (count > best_count) {
        best = id;
        best_count = count;
      }
    out.push_back(best < 0 || is_background_class(scene.semantic_of(best)) ? -1 : best);
  }
  return out;
}

int instance_semantic(const SceneSpec& scene, int instance) { return instance < 0 ? -1 : scene.semantic_of(instance); }

void write_dataset(const fs::path& root, const std::vector<SceneRecord>& scenes, const SynthConfig& cfg) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create " + root.string() + ": " + ec.message());
  nlohmann::json index = {{"format", "lcd-rgbd"}, {"version", kDatasetVersion}, {"config", cfg.to_json()}};
  index["scenes"] = nlohmann::json::array();
  for (const auto& rec : scenes) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", rec.spec.scene_id);
    const fs::path dir = root / name;
    nlohmann::json sj = {{"version", kDatasetVersion}, {"spec", rec.spec.to_json()}};
    sj["frames"] = nlohmann::json::array();
    for (const auto& f : rec.frames) {
      char stem[32];
      std::snprintf(stem, sizeof stem, "frame_%03d", f.frame_id);
      sj["frames"].push_back(write_frame_files(dir, f, stem).to_json());
    }
    std::ofstream os(dir / "scene.json");
    if (!(os << sj.dump(1) << '\n')) throw Error(ErrorCode::kIo, "cannot write " + (dir / "scene.json").string());
    index["scenes"].push_back({{"scene_id", rec.spec.scene_id}, {"dir", name}});
  }
  std::ofstream os(root / "index.json");
  if (!(os << index.dump(1) << '\n')) throw Error(ErrorCode::kIo, "cannot write " + (root / "index.json").string());
}

namespace {

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorCode::kIo, "missing file " + path.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, path.string() + ": " + e.what());
  }
}

void check_version(const nlohmann::json& j, const fs::path& path) {
  if (!j.is_object() || !j.contains("version")) throw Error(ErrorCode::kParse, path.string() + ": no version field");
  if (j.at("version") != kDatasetVersion)
    throw Error(ErrorCode::kVersionMismatch, path.string() + ": unsupported dataset version");
}

}  // namespace

std::vector<SceneIndex> read_dataset_index(const fs::path& root) {
  const nlohmann::json index = read_json(root / "index.json");
  check_version(index, root / "index.json");
  std::vector<SceneIndex> out;
  try {
    for (const auto& s : index.at("scenes")) {
      SceneIndex si;
      si.dir = root / s.at("dir").get<std::string>();
      const nlohmann::json sj = read_json(si.dir / "scene.json");
      check_version(sj, si.dir / "scene.json");
      si.spec = SceneSpec::from_json(sj.at("spec"));
      for (const auto& f : sj.at("frames")) si.frames.push_back(f);
      out.push_back(std::move(si));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, root.string() + ": " + e.what());
  }
  return out;
}

std::vector<SceneRecord> read_dataset(const fs::path& root) {
  std::vector<SceneRecord> out;
  for (const auto& si : read_dataset_index(root)) {
    SceneRecord rec;
    rec.spec = si.spec;
    for (const auto& f : si.frames) rec.frames.push_back(load_frame(si.dir, FrameEntry::from_json(f), si.spec.scene_id));
    out.push_back(std::move(rec));
  }
  return out;
}

void synthesize_dataset(const fs::path& root, const SynthConfig& cfg) {
  cfg.validate();
  // Scenes are written one at a time so memory stays flat; the index is rewritten at the end.
  std::vector<SceneRecord> light;
  for (int s = 0; s < cfg.scenes; ++s) {
    std::mt19937_64 r = derived_rng(cfg.seed, static_cast<std::uint64_t>(s), 0);
    SceneRecord rec;
    rec.spec = generate_scene(r(), cfg, s);
    rec.frames = render_views(rec.spec, cfg.views, derived_rng(cfg.seed, static_cast<std::uint64_t>(s), 1)(), cfg);
    write_dataset(root, {rec}, cfg);
    rec.frames.clear();
    light.push_back(std::move(rec));
  }
  nlohmann::json index = {{"format", "lcd-rgbd"}, {"version", kDatasetVersion}, {"config", cfg.to_json()}};
  index["scenes"] = nlohmann::json::array();
  for (const auto& rec : light) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", rec.spec.scene_id);
    index["scenes"].push_back({{"scene_id", rec.spec.scene_id}, {"dir", name}});
  }
  std::ofstream os(root / "index.json");
  if (!(os << index.dump(1) << '\n')) throw Error(ErrorCode::kIo, "cannot write " + (root / "index.json").string());
}

}  // namespace lcd
