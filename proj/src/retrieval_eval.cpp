#include "lcd/retrieval_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <functional>
#include <unordered_map>

namespace lcd {
namespace {

double squared_distance(const double* a, const double* b, std::size_t dim) {
  double s = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

using Candidate = std::pair<double, std::size_t>;  // (squared distance, index)

std::vector<std::pair<std::size_t, double>> finish(std::vector<Candidate> c) {
  std::sort(c.begin(), c.end());
  std::vector<std::pair<std::size_t, double>> out;
  for (const auto& [d2, i] : c) out.emplace_back(i, std::sqrt(d2));
  return out;
}

}  // namespace

KdTree::KdTree(std::vector<double> points, std::size_t dim) : points_(std::move(points)), dim_(dim) {
  if (dim_ == 0 || points_.size() % dim_ != 0) throw Error(ErrorCode::kShapeMismatch, "kd-tree: bad point buffer");
  std::vector<std::size_t> idx(size());
  std::iota(idx.begin(), idx.end(), 0);
  nodes_.reserve(idx.size());
  root_ = build(idx, 0, idx.size());
}

int KdTree::build(std::vector<std::size_t>& idx, std::size_t lo, std::size_t hi) {
  if (lo >= hi) return -1;
  // Split on the axis of largest spread at the median.
  std::size_t axis = 0;
  double best = -1.0;
  for (std::size_t a = 0; a < dim_; ++a) {
    double mn = std::numeric_limits<double>::infinity(), mx = -mn;
    for (std::size_t i = lo; i < hi; ++i) {
      const double v = points_[idx[i] * dim_ + a];
      mn = std::min(mn, v);
      mx = std::max(mx, v);
    }
    if (mx - mn > best) {
      best = mx - mn;
      axis = a;
    }
  }
  const std::size_t mid = lo + (hi - lo) / 2;
  std::nth_element(idx.begin() + lo, idx.begin() + mid, idx.begin() + hi, [&](std::size_t a, std::size_t b) {
    const double va = points_[a * dim_ + axis], vb = points_[b * dim_ + axis];
    return va < vb || (va == vb && a < b);
  });
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({idx[mid], axis, -1, -1});
  const int l = build(idx, lo, mid);
  const int r = build(idx, mid + 1, hi);
  nodes_[id].left = l;
  nodes_[id].right = r;
  return id;
}

std::vector<std::pair<std::size_t, double>> KdTree::knn(const double* query, std::size_t k) const {
  if (k == 0 || root_ < 0) return {};
  std::priority_queue<Candidate> heap;  // worst candidate on top
  // Depth-first with explicit far-side revisits recorded as (node, plane gap).
  struct Pending {
    int node;
    double gap2;
  };
  std::vector<Pending> todo{{root_, 0.0}};
  while (!todo.empty()) {
    const Pending cur = todo.back();
    todo.pop_back();
    if (cur.node < 0) continue;
    if (heap.size() == k && cur.gap2 > heap.top().first) continue;
    const Node& n = nodes_[cur.node];
    const double* p = points_.data() + n.point * dim_;
    const Candidate c{squared_distance(query, p, dim_), n.point};
    if (heap.size() < k) {
      heap.push(c);
    } else if (c < heap.top()) {
      heap.pop();
      heap.push(c);
    }
    const double diff = query[n.axis] - p[n.axis];
    const int near = diff < 0 ? n.left : n.right;
    const int far = diff < 0 ? n.right : n.left;
    // Far side first on the stack so the near side is explored first.
    todo.push_back({far, std::max(cur.gap2, diff * diff)});
    todo.push_back({near, cur.gap2});
  }
  std::vector<Candidate> out;
  while (!heap.empty()) {
    out.push_back(heap.top());
    heap.pop();
  }
  return finish(std::move(out));
}

std::vector<std::pair<std::size_t, double>> brute_force_knn(const std::vector<double>& points, std::size_t dim,
                                                            const double* query, std::size_t k) {
  std::vector<Candidate> all;
  for (std::size_t i = 0; i * dim < points.size(); ++i)
    all.emplace_back(squared_distance(query, points.data() + i * dim, dim), i);
  const std::size_t keep = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + keep, all.end());
  all.resize(keep);
  return finish(std::move(all));
}

SceneMap SceneMap::build(const std::vector<ClusterEmbedding>& clusters, std::size_t min_lines) {
  SceneMap map;
  std::size_t dim = 0;
  std::vector<double> flat;
  for (const auto& c : clusters) {
    if (c.line_count < min_lines) continue;
    if (dim == 0) dim = c.values.size();
    if (c.values.size() != dim || dim == 0) throw Error(ErrorCode::kShapeMismatch, "scene map: embedding sizes differ");
    map.entries_.push_back(c);
    flat.insert(flat.end(), c.values.begin(), c.values.end());
  }
  if (map.entries_.empty()) throw Error(ErrorCode::kEmptyInput, "scene map: no cluster with enough lines");
  map.tree_ = KdTree(std::move(flat), dim);
  return map;
}

std::vector<Neighbor> SceneMap::knn(const std::vector<double>& query, std::size_t k) const {
  if (query.size() != tree_.dim()) throw Error(ErrorCode::kShapeMismatch, "scene map: query dimension");
  std::vector<Neighbor> out;
  for (const auto& [i, d] : tree_.knn(query.data(), k))
    out.push_back({i, d, entries_[i].scene_id, entries_[i].frame_id});
  return out;
}

QueryResult query_frame(const SceneMap& map, const std::vector<ClusterEmbedding>& query, std::size_t k_nn) {
  if (k_nn == 0) throw Error(ErrorCode::kInvalidArgument, "query: k_nn must be at least 1");
  if (query.empty()) throw Error(ErrorCode::kEmptyInput, "query: no clusters");
  QueryResult r;
  for (const auto& q : query)
    for (const Neighbor& n : map.knn(q.values, k_nn)) {
      ++r.votes[n.scene_id];
      r.neighbors.push_back(n);
    }
  std::size_t best = 0;
  for (const auto& [scene, count] : r.votes)  // ascending scene id, so ties keep the lowest
    if (count > best) {
      best = count;
      r.predicted_scene = scene;
    }
  return r;
}

LeaveOneOutReport leave_one_out_accuracy(const std::vector<FrameEmbeddings>& frames, std::size_t k_nn,
                                         std::size_t min_lines, bool skip_single_frame_scenes) {
  std::map<int, std::size_t> per_scene;
  for (const auto& f : frames) ++per_scene[f.scene_id];
  LeaveOneOutReport rep;
  for (std::size_t held = 0; held < frames.size(); ++held) {
    const FrameEmbeddings& q = frames[held];
    if (skip_single_frame_scenes && per_scene[q.scene_id] < 2) continue;
    FrameOutcome out{q.scene_id, q.frame_id, -1, {}};
    std::vector<ClusterEmbedding> map_clusters, query;
    for (std::size_t i = 0; i < frames.size(); ++i)
      if (i != held)
        for (const auto& c : frames[i].clusters) map_clusters.push_back(c);
    for (const auto& c : q.clusters)
      if (c.line_count >= min_lines) query.push_back(c);
    const bool any_map = std::any_of(map_clusters.begin(), map_clusters.end(),
                                     [&](const ClusterEmbedding& c) { return c.line_count >= min_lines; });
    if (any_map && !query.empty()) {
      const QueryResult r = query_frame(SceneMap::build(map_clusters, min_lines), query, k_nn);
      out.predicted_scene = r.predicted_scene;
      out.votes = r.votes;
    }
    rep.correct += out.predicted_scene == q.scene_id ? 1 : 0;
    ++rep.total;
    rep.frames.push_back(std::move(out));
  }
  rep.accuracy = rep.total ? static_cast<double>(rep.correct) / static_cast<double>(rep.total) : 0.0;
  return rep;
}

double nmi(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size()) throw Error(ErrorCode::kShapeMismatch, "nmi: label lists differ in length");
  if (pred.empty()) throw Error(ErrorCode::kEmptyInput, "nmi: empty input");
  const double n = static_cast<double>(pred.size());
  std::map<int, double> cu, cv;
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    cu[pred[i]] += 1;
    cv[gt[i]] += 1;
    joint[{pred[i], gt[i]}] += 1;
  }
  auto entropy = [n](const std::map<int, double>& c) {
    double h = 0;
    for (const auto& [k, v] : c) h -= (v / n) * std::log(v / n);
    return h;
  };
  const double hu = entropy(cu), hv = entropy(cv);
  if (cu.size() == 1 && cv.size() == 1) return 1.0;
  if (hu <= 0.0 || hv <= 0.0) return 0.0;
  double mi = 0;
  for (const auto& [k, v] : joint) mi += (v / n) * std::log(n * v / (cu[k.first] * cv[k.second]));
  return std::clamp(mi / std::sqrt(hu * hv), 0.0, 1.0);
}

double segment_distance(const Eigen::Vector3d& p0, const Eigen::Vector3d& p1, const Eigen::Vector3d& q0,
                        const Eigen::Vector3d& q1) {
  // Closest points of two segments by clamped parameters.
  const Eigen::Vector3d d1 = p1 - p0, d2 = q1 - q0, r = p0 - q0;
  const double a = d1.squaredNorm(), e = d2.squaredNorm(), f = d2.dot(r);
  constexpr double kEps = 1e-18;
  double s = 0, t = 0;
  if (a <= kEps && e <= kEps) return r.norm();
  if (a <= kEps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= kEps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2), denom = a * e - b * b;
      s = denom > kEps * a * e ? std::clamp((b * f - c * e) / denom, 0.0, 1.0) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1) {
        t = 1;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  return ((p0 + s * d1) - (q0 + t * d2)).norm();
}

double silhouette(const std::vector<double>& dist, std::size_t n, const std::vector<int>& labels) {
  std::map<int, std::vector<std::size_t>> members;
  for (std::size_t i = 0; i < n; ++i) members[labels[i]].push_back(i);
  double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& own = members[labels[i]];
    if (own.size() < 2) continue;  // singleton scores 0
    double a = 0;
    for (std::size_t j : own) a += dist[i * n + j];
    a /= static_cast<double>(own.size() - 1);
    double b = std::numeric_limits<double>::infinity();
    for (const auto& [lab, other] : members) {
      if (lab == labels[i]) continue;
      double s = 0;
      for (std::size_t j : other) s += dist[i * n + j];
      b = std::min(b, s / static_cast<double>(other.size()));
    }
    const double m = std::max(a, b);
    if (m > 0 && std::isfinite(b)) total += (b - a) / m;
  }
  return total / static_cast<double>(n);
}

std::vector<int> agglomerative_baseline(const std::vector<Line3D>& lines, const AgglomerativeOptions& opts) {
  const std::size_t n = lines.size();
  if (n < 2) return std::vector<int>(n, 0);
  std::vector<double> dist(n * n, 0.0);
  double max_d = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double d = segment_distance(lines[i].start, lines[i].end, lines[j].start, lines[j].end);
      dist[i * n + j] = dist[j * n + i] = d;
      max_d = std::max(max_d, d);
    }
  if (max_d == 0.0) return std::vector<int>(n, 0);

  // Single linkage = cutting the largest edges of the minimum spanning tree (Prim).
  struct Edge {
    double w;
    std::size_t a, b;
  };
  std::vector<Edge> mst;
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::size_t> from(n, 0);
  std::vector<bool> in(n, false);
  best[0] = 0;
  for (std::size_t it = 0; it < n; ++it) {
    std::size_t u = n;
    for (std::size_t v = 0; v < n; ++v)
      if (!in[v] && (u == n || best[v] < best[u])) u = v;
    in[u] = true;
    if (it > 0) mst.push_back({best[u], from[u], u});
    for (std::size_t v = 0; v < n; ++v)
      if (!in[v] && dist[u * n + v] < best[v]) {
        best[v] = dist[u * n + v];
        from[v] = u;
      }
  }
  std::vector<std::size_t> order(mst.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return mst[x].w > mst[y].w; });

  auto labels_for = [&](std::size_t k) {
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    std::function<std::size_t(std::size_t)> find = [&](std::size_t x) {
      return parent[x] == x ? x : parent[x] = find(parent[x]);
    };
    for (std::size_t e = k - 1; e < order.size(); ++e) parent[find(mst[order[e]].a)] = find(mst[order[e]].b);
    std::unordered_map<std::size_t, int> ids;
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto root = find(i);
      auto it = ids.find(root);
      if (it == ids.end()) it = ids.emplace(root, static_cast<int>(ids.size())).first;
      labels[i] = it->second;
    }
    return labels;
  };

  const std::size_t k_max = std::min(opts.max_clusters, n - 1);
  if (k_max < 2) return std::vector<int>(n, 0);
  std::vector<int> chosen;
  double chosen_score = 0;
  for (std::size_t k = 2; k <= k_max; ++k) {
    auto labels = labels_for(k);
    const double s = silhouette(dist, n, labels);
    const bool better = chosen.empty() || (opts.minimize_silhouette ? s < chosen_score : s > chosen_score);
    if (better) {
      chosen = std::move(labels);
      chosen_score = s;
    }
  }
  return chosen;
}

}  // namespace lcd
