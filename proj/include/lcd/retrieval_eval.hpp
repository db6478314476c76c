#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "lcd/line_geometry.hpp"

namespace lcd {

struct ClusterEmbedding {
  std::vector<double> values;
  int scene_id = 0;
  int frame_id = 0;
  int cluster_id = 0;
  std::size_t line_count = 0;
};

struct Neighbor {
  std::size_t index = 0;  // entry index in the map
  double distance = 0;
  int scene_id = 0;
  int frame_id = 0;
};

/// Exact k-nearest-neighbour search over fixed-dimension points. Results are ordered by
/// (distance, index), identical to a linear scan.
class KdTree {
 public:
  KdTree() = default;
  KdTree(std::vector<double> points, std::size_t dim);

  std::size_t size() const { return dim_ ? points_.size() / dim_ : 0; }
  std::size_t dim() const { return dim_; }
  std::vector<std::pair<std::size_t, double>> knn(const double* query, std::size_t k) const;

 private:
  struct Node {
    std::size_t point = 0;
    std::size_t axis = 0;
    int left = -1;
    int right = -1;
  };
  int build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi);

  std::vector<double> points_;
  std::size_t dim_ = 0;
  std::vector<Node> nodes_;
  int root_ = -1;
};

/// Reference linear scan with the same ordering contract as KdTree::knn.
std::vector<std::pair<std::size_t, double>> brute_force_knn(const std::vector<double>& points, std::size_t dim,
                                                            const double* query, std::size_t k);

inline constexpr std::size_t kMinClusterLines = 4;

class SceneMap {
 public:
  /// Keeps clusters with at least `min_lines` lines; throws kEmptyInput when none survive.
  static SceneMap build(const std::vector<ClusterEmbedding>& clusters, std::size_t min_lines = kMinClusterLines);

  std::size_t size() const { return entries_.size(); }
  const std::vector<ClusterEmbedding>& entries() const { return entries_; }
  std::vector<Neighbor> knn(const std::vector<double>& query, std::size_t k) const;

 private:
  std::vector<ClusterEmbedding> entries_;
  KdTree tree_;
};

struct QueryResult {
  int predicted_scene = -1;
  std::map<int, std::size_t> votes;
  std::vector<Neighbor> neighbors;
};

/// k_nn neighbours per query cluster vote for their scenes; ties go to the lowest scene id.
QueryResult query_frame(const SceneMap& map, const std::vector<ClusterEmbedding>& query, std::size_t k_nn);

struct FrameEmbeddings {
  int scene_id = 0;
  int frame_id = 0;
  std::vector<ClusterEmbedding> clusters;
};

struct FrameOutcome {
  int scene_id = 0;
  int frame_id = 0;
  int predicted_scene = -1;
  std::map<int, std::size_t> votes;
};

struct LeaveOneOutReport {
  double accuracy = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  std::vector<FrameOutcome> frames;
};

/// Each frame is queried against a map built from all other frames. Frames of scenes with a
/// single frame are counted unless `skip_single_frame_scenes` is set.
LeaveOneOutReport leave_one_out_accuracy(const std::vector<FrameEmbeddings>& frames, std::size_t k_nn,
                                         std::size_t min_lines = kMinClusterLines,
                                         bool skip_single_frame_scenes = false);

/// Normalized mutual information with natural logs and sqrt(H(U) H(V)) normalization.
double nmi(const std::vector<int>& pred, const std::vector<int>& gt);

/// Minimum Euclidean distance between two 3D segments.
double segment_distance(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1, const Eigen::Vector3d& q0,
                        const Eigen::Vector3d& q1);

/// Mean silhouette of a labelling under a precomputed distance matrix (row-major n x n).
double silhouette(const std::vector<double>& dist, std::size_t n, const std::vector<int>& labels);

struct AgglomerativeOptions {
  std::size_t max_clusters = 15;
  bool minimize_silhouette = false;
};

/// Single-linkage clustering on segment distances, cut level chosen by silhouette.
std::vector<int> agglomerative_baseline(const std::vector<Line3D>& lines, const AgglomerativeOptions& opts = {});

}  // namespace lcd
