#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcd/cluster_net.hpp"
#include "lcd/descriptor_net.hpp"
#include "lcd/line_extract.hpp"
#include "lcd/line_geometry.hpp"
#include "lcd/retrieval_eval.hpp"
#include "lcd/scene_synth.hpp"
#include "lcd/virtual_view.hpp"

namespace lcd {

struct ExtractConfig {
  DetectorConfig detector;
  GeometryConfig geometry;
  VirtualViewConfig view;
  std::size_t max_lines = 220;
  double label_band_px = 3.0;
};

struct RetrievalConfig {
  std::size_t k_nn = 8;
  std::size_t min_lines = kMinClusterLines;
  AgglomerativeOptions agglomerative;
};

/// Every module's settings plus the root seed. Unknown keys are rejected at every level.
struct PipelineConfig {
  std::uint64_t seed = 1;
  SynthConfig synth;
  ExtractConfig extract;
  ClusterNetConfig cluster;
  DescriptorConfig descriptor;
  RetrievalConfig retrieval;

  void validate() const;
  nlohmann::json to_json() const;
  static PipelineConfig from_json(const nlohmann::json& j);
  static PipelineConfig load(const std::filesystem::path& path);
  /// 16 hex digits of a 64-bit FNV-1a over the canonical JSON dump.
  std::string hash() const;
};

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0);

struct FrameExtraction {
  LineFrame lines;
  std::size_t detected = 0;     // after fusion and length filtering
  std::size_t reprojected = 0;  // before the line cap
};

/// detect -> fuse -> filter -> 3D reprojection -> labels -> cap -> virtual images.
FrameExtraction extract_frame(const Frame& frame, const SceneSpec& scene, const ExtractConfig& cfg,
                              std::uint64_t seed);

struct ExtractionIssue {
  int scene_id = 0;
  int frame_id = 0;
  std::string message;
};

struct ExtractionReport {
  LineDataset data;
  std::vector<ExtractionIssue> failures;  // frames that could not be loaded or processed
  std::vector<ExtractionIssue> warnings;  // frames without lines
};

/// Extracts every frame of a dataset on disk. Frames are processed on `workers` threads and
/// results are ordered by (scene, frame), so output does not depend on the worker count.
ExtractionReport extract_dataset(const std::filesystem::path& root, const ExtractConfig& cfg, std::uint64_t seed,
                                 unsigned workers = 1);

/// Worker count from LCD_WORKERS, defaulting to 1.
unsigned worker_count();

/// Splits frames by scene id: scenes whose position in the sorted id list has
/// index % every == every - 1 go to the second set.
std::pair<LineDataset, LineDataset> split_by_scene(const LineDataset& data, int every);

/// Mean NMI of the agglomerative baseline, ground-truth background as one cluster.
double mean_agglomerative_nmi(const LineDataset& data, const AgglomerativeOptions& opts);

/// Ground-truth labels of a frame's lines with background folded into one cluster.
std::vector<int> ground_truth_clusters(const LineFrame& frame, const std::vector<std::size_t>& rows);

/// Cluster embeddings for every frame. With `clusterer` null the ground-truth instances are used;
/// background groups are dropped either way.
std::vector<FrameEmbeddings> embed_frames(DescriptorNet<float>& describer, ClusterNet<float>* clusterer,
                                          const LineDataset& data, std::uint64_t seed);

}  // namespace lcd
