#include "lcd/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "lcd/config.hpp"
#include "lcd/manifest.hpp"

namespace lcd {
namespace {

nlohmann::json detector_json(const DetectorConfig& c) {
  return {{"gradient_threshold", c.gradient_threshold}, {"angle_tolerance_deg", c.angle_tolerance_deg},
          {"min_region_size", c.min_region_size},       {"min_density", c.min_density},
          {"min_length_px", c.min_length_px},           {"fusion_angle_deg", c.fusion_angle_deg},
          {"fusion_gap_px", c.fusion_gap_px},           {"fusion_offset_px", c.fusion_offset_px}};
}

DetectorConfig detector_from(const nlohmann::json& j, const std::string& path) {
  DetectorConfig c;
  StrictReader r(j, path);
  r.read("gradient_threshold", c.gradient_threshold);
  r.read("angle_tolerance_deg", c.angle_tolerance_deg);
  r.read("min_region_size", c.min_region_size);
  r.read("min_density", c.min_density);
  r.read("min_length_px", c.min_length_px);
  r.read("fusion_angle_deg", c.fusion_angle_deg);
  r.read("fusion_gap_px", c.fusion_gap_px);
  r.read("fusion_offset_px", c.fusion_offset_px);
  r.finish();
  return c;
}

nlohmann::json geometry_json(const GeometryConfig& c) {
  return {{"band", {{"band_width_px", c.band.band_width_px}, {"gap_px", c.band.gap_px}}},
          {"ransac",
           {{"iterations", c.ransac.iterations},
            {"inlier_distance", c.ransac.inlier_distance},
            {"min_inliers", c.ransac.min_inliers}}},
          {"coplanar_angle_deg", c.coplanar_angle_deg},
          {"coplanar_distance", c.coplanar_distance},
          {"discontinuity_separation", c.discontinuity_separation},
          {"min_length_3d", c.min_length_3d},
          {"occlusion_depth_tol", c.occlusion_depth_tol},
          {"edge_margin_px", c.edge_margin_px}};
}

GeometryConfig geometry_from(const nlohmann::json& j, const std::string& path) {
  GeometryConfig c;
  StrictReader r(j, path);
  r.nested("band", [&](const nlohmann::json& b, const std::string& p) {
    StrictReader rb(b, p);
    rb.read("band_width_px", c.band.band_width_px);
    rb.read("gap_px", c.band.gap_px);
    rb.finish();
  });
  r.nested("ransac", [&](const nlohmann::json& b, const std::string& p) {
    StrictReader rb(b, p);
    rb.read("iterations", c.ransac.iterations);
    rb.read("inlier_distance", c.ransac.inlier_distance);
    rb.read("min_inliers", c.ransac.min_inliers);
    rb.finish();
  });
  r.read("coplanar_angle_deg", c.coplanar_angle_deg);
  r.read("coplanar_distance", c.coplanar_distance);
  r.read("discontinuity_separation", c.discontinuity_separation);
  r.read("min_length_3d", c.min_length_3d);
  r.read("occlusion_depth_tol", c.occlusion_depth_tol);
  r.read("edge_margin_px", c.edge_margin_px);
  r.finish();
  return c;
}

nlohmann::json view_json(const VirtualViewConfig& c) {
  return {{"camera_distance", c.camera_distance},
          {"max_distance", c.max_distance},
          {"width_factor", c.width_factor},
          {"height_factor", c.height_factor},
          {"points_per_pixel", c.points_per_pixel},
          {"min_working_height", c.min_working_height},
          {"max_working_height", c.max_working_height},
          {"dilation_px", c.dilation_px},
          {"inpaint_tolerance", c.inpaint_tolerance},
          {"inpaint_max_iterations", c.inpaint_max_iterations}};
}

VirtualViewConfig view_from(const nlohmann::json& j, const std::string& path) {
  VirtualViewConfig c;
  StrictReader r(j, path);
  r.read("camera_distance", c.camera_distance);
  r.read("max_distance", c.max_distance);
  r.read("width_factor", c.width_factor);
  r.read("height_factor", c.height_factor);
  r.read("points_per_pixel", c.points_per_pixel);
  r.read("min_working_height", c.min_working_height);
  r.read("max_working_height", c.max_working_height);
  r.read("dilation_px", c.dilation_px);
  r.read("inpaint_tolerance", c.inpaint_tolerance);
  r.read("inpaint_max_iterations", c.inpaint_max_iterations);
  r.finish();
  return c;
}

}  // namespace

void PipelineConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, m); };
  synth.validate();
  extract.detector.validate();
  cluster.validate();
  descriptor.validate();
  const auto& g = extract.geometry;
  if (g.band.band_width_px < 1 || g.band.gap_px < 0 || g.ransac.iterations < 1 || !(g.ransac.inlier_distance > 0) ||
      g.ransac.min_inliers < 3 || g.min_length_3d < 0 || g.edge_margin_px < 0)
    fail("extract.geometry: invalid settings");
  const auto& v = extract.view;
  if (!(v.camera_distance > 0) || !(v.max_distance > 0) || !(v.width_factor > 0) || !(v.height_factor > 0) ||
      !(v.points_per_pixel > 0) || v.min_working_height < 1 || v.max_working_height < v.min_working_height ||
      v.dilation_px < 0 || v.inpaint_max_iterations < 0)
    fail("extract.view: invalid settings");
  if (extract.max_lines < 1 || !(extract.label_band_px >= 0)) fail("extract: invalid line cap or label band");
  if (retrieval.k_nn < 1 || retrieval.agglomerative.max_clusters < 1) fail("retrieval: k_nn and max_clusters must be positive");
}

nlohmann::json PipelineConfig::to_json() const {
  return {{"seed", seed},
          {"synth", synth.to_json()},
          {"extract",
           {{"detector", detector_json(extract.detector)},
            {"geometry", geometry_json(extract.geometry)},
            {"view", view_json(extract.view)},
            {"max_lines", extract.max_lines},
            {"label_band_px", extract.label_band_px}}},
          {"cluster", cluster.to_json()},
          {"descriptor", descriptor.to_json()},
          {"retrieval",
           {{"k_nn", retrieval.k_nn},
            {"min_lines", retrieval.min_lines},
            {"agglomerative_max_clusters", retrieval.agglomerative.max_clusters},
            {"minimize_silhouette", retrieval.agglomerative.minimize_silhouette}}}};
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j) {
  PipelineConfig c;
  StrictReader r(j, "config");
  r.read("seed", c.seed);
  r.nested("synth", [&](const nlohmann::json& s, const std::string& p) { c.synth = SynthConfig::from_json(s, p); });
  r.nested("extract", [&](const nlohmann::json& e, const std::string& p) {
    StrictReader re(e, p);
    re.nested("detector", [&](const nlohmann::json& x, const std::string& q) { c.extract.detector = detector_from(x, q); });
    re.nested("geometry", [&](const nlohmann::json& x, const std::string& q) { c.extract.geometry = geometry_from(x, q); });
    re.nested("view", [&](const nlohmann::json& x, const std::string& q) { c.extract.view = view_from(x, q); });
    re.read("max_lines", c.extract.max_lines);
    re.read("label_band_px", c.extract.label_band_px);
    re.finish();
  });
  r.nested("cluster", [&](const nlohmann::json& s, const std::string& p) { c.cluster = ClusterNetConfig::from_json(s, p); });
  r.nested("descriptor",
           [&](const nlohmann::json& s, const std::string& p) { c.descriptor = DescriptorConfig::from_json(s, p); });
  r.nested("retrieval", [&](const nlohmann::json& s, const std::string& p) {
    StrictReader rr(s, p);
    rr.read("k_nn", c.retrieval.k_nn);
    rr.read("min_lines", c.retrieval.min_lines);
    rr.read("agglomerative_max_clusters", c.retrieval.agglomerative.max_clusters);
    rr.read("minimize_silhouette", c.retrieval.agglomerative.minimize_silhouette);
    rr.finish();
  });
  r.finish();
  c.validate();
  return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kConfig, "cannot read config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kConfig, path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string PipelineConfig::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : to_json().dump()) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(root), static_cast<std::uint32_t>(root >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(a >> 32), static_cast<std::uint32_t>(b)};
  std::mt19937_64 rng(seq);
  return rng();
}

FrameExtraction extract_frame(const Frame& frame, const SceneSpec& scene, const ExtractConfig& cfg,
                              std::uint64_t seed) {
  frame.validate();
  const auto& d = cfg.detector;
  std::vector<Segment2D> segs = detect_segments(to_gray(frame.color), d);
  segs = filter_short(fuse_colinear(std::move(segs), d.fusion_angle_deg, d.fusion_gap_px, d.fusion_offset_px),
                      d.min_length_px);
  FrameExtraction out;
  out.detected = segs.size();
  out.lines.scene_id = frame.scene_id;
  out.lines.frame_id = frame.frame_id;

  std::vector<Segment2D> kept;
  std::vector<Line3D> lines;
  for (std::size_t i = 0; i < segs.size(); ++i) {
    auto line = reproject_segment(frame, segs[i], cfg.geometry, derive_seed(seed, i));
    if (!line) continue;
    kept.push_back(segs[i]);
    lines.push_back(*line);
  }
  out.reprojected = kept.size();
  if (kept.empty()) return out;

  std::mt19937_64 rng(derive_seed(seed, 0xCA9ULL));
  std::vector<std::size_t> rows = sample_rows(kept.size(), cfg.max_lines, rng);
  std::sort(rows.begin(), rows.end());
  std::vector<Segment2D> chosen;
  for (std::size_t r : rows) chosen.push_back(kept[r]);
  const std::vector<int> labels = frame.instance_mask ? ground_truth_line_labels(frame, chosen, scene, cfg.label_band_px)
                                                      : std::vector<int>(chosen.size(), kBackgroundId);
  const PointCloud cloud = frame_point_cloud(frame);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    LineRecord rec;
    rec.segment = chosen[i];
    rec.line = lines[rows[i]];
    rec.image = quantize(virtual_image(cloud, rec.line, cfg.view));
    rec.instance = labels[i] < 0 ? kBackgroundId : labels[i];
    rec.semantic = instance_semantic(scene, rec.instance);
    out.lines.lines.push_back(std::move(rec));
  }
  return out;
}

unsigned worker_count() {
  const char* env = std::getenv("LCD_WORKERS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 256) throw Error(ErrorCode::kConfig, "LCD_WORKERS must be an integer in [1, 256]");
  return static_cast<unsigned>(v);
}

ExtractionReport extract_dataset(const std::filesystem::path& root, const ExtractConfig& cfg, std::uint64_t seed,
                                 unsigned workers) {
  const std::vector<SceneIndex> index = read_dataset_index(root);
  struct Job {
    const SceneIndex* scene;
    std::size_t frame;
  };
  std::vector<Job> jobs;
  for (const auto& s : index)
    for (std::size_t f = 0; f < s.frames.size(); ++f) jobs.push_back({&s, f});

  std::vector<std::optional<LineFrame>> results(jobs.size());
  std::vector<std::string> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t j = next++; j < jobs.size(); j = next++) {
      const SceneIndex& s = *jobs[j].scene;
      try {
        const FrameEntry entry = FrameEntry::from_json(s.frames[jobs[j].frame]);
        const Frame frame = load_frame(s.dir, entry, s.spec.scene_id);
        const std::uint64_t fs = derive_seed(seed, static_cast<std::uint64_t>(s.spec.scene_id),
                                             static_cast<std::uint64_t>(entry.frame_id));
        results[j] = extract_frame(frame, s.spec, cfg, fs).lines;
      } catch (const std::exception& e) {
        errors[j] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 1; w < std::max(1u, workers); ++w) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();

  ExtractionReport report;
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    const int scene_id = jobs[j].scene->spec.scene_id;
    if (!results[j]) {
      report.failures.push_back({scene_id, static_cast<int>(jobs[j].frame), errors[j]});
      continue;
    }
    if (results[j]->lines.empty())
      report.warnings.push_back({scene_id, results[j]->frame_id, "no lines detected"});
    report.data.push_back(std::move(*results[j]));
  }
  return report;
}

std::pair<LineDataset, LineDataset> split_by_scene(const LineDataset& data, int every) {
  if (every < 2) throw Error(ErrorCode::kInvalidArgument, "split_by_scene: every must be at least 2");
  std::set<int> ids;
  for (const auto& f : data) ids.insert(f.scene_id);
  std::set<int> second;
  int k = 0;
  for (int id : ids)
    if (k++ % every == every - 1) second.insert(id);
  std::pair<LineDataset, LineDataset> out;
  for (const auto& f : data) (second.count(f.scene_id) ? out.second : out.first).push_back(f);
  return out;
}

std::vector<int> ground_truth_clusters(const LineFrame& frame, const std::vector<std::size_t>& rows) {
  std::vector<int> gt;
  gt.reserve(rows.size());
  for (std::size_t r : rows) gt.push_back(frame.lines.at(r).instance);
  return gt;
}

double mean_agglomerative_nmi(const LineDataset& data, const AgglomerativeOptions& opts) {
  double total = 0;
  std::size_t count = 0;
  for (const auto& f : data) {
    if (f.lines.empty()) continue;
    std::vector<Line3D> lines;
    for (const auto& r : f.lines) lines.push_back(r.line);
    total += nmi(agglomerative_baseline(lines, opts), ground_truth_clusters(f, all_rows(f)));
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

std::vector<FrameEmbeddings> embed_frames(DescriptorNet<float>& describer, ClusterNet<float>* clusterer,
                                          const LineDataset& data, std::uint64_t seed) {
  std::vector<FrameEmbeddings> out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const LineFrame& f = data[i];
    FrameEmbeddings fe;
    fe.scene_id = f.scene_id;
    fe.frame_id = f.frame_id;
    std::vector<std::size_t> rows;
    std::vector<int> labels;
    if (!f.lines.empty()) {
      if (clusterer) {
        const FramePrediction pred = predict_frame(*clusterer, f, nullptr, i, seed);
        for (std::size_t k = 0; k < pred.rows.size(); ++k)
          if (pred.labels[k] != 0) {
            rows.push_back(pred.rows[k]);
            labels.push_back(pred.labels[k]);
          }
      } else {
        for (std::size_t r = 0; r < f.lines.size(); ++r)
          if (f.lines[r].instance != kBackgroundId) {
            rows.push_back(r);
            labels.push_back(f.lines[r].instance);
          }
      }
    }
    if (!rows.empty()) fe.clusters = describe_frame(describer, f, nullptr, i, rows, labels);
    out.push_back(std::move(fe));
  }
  return out;
}

}  // namespace lcd
