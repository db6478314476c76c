#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "gradcheck.hpp"
#include "lcd/nn/ops.hpp"
#include "lcd/pipeline.hpp"
#include "plane_scene.hpp"

namespace fs = std::filesystem;
using namespace lcd;
using nn::Tensor;
using testing_support::gradient_error;
using testing_support::random_tensor;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;
std::set<int> reported;

void report(int n, bool pass, const std::string& detail) {
  reported.insert(n);
  std::printf("CRITERION %d %s: %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

Tensor<double> fixed(nn::Shape shape, std::mt19937_64& rng) {
  return random_tensor(std::move(shape), rng).set_requires_grad(false);
}

Tensor<double> probe(const Tensor<double>& out, const Tensor<double>& weights) {
  return nn::sum(nn::mul(nn::reshape(out, weights.shape()), weights));
}

Tensor<double> rows_tensor(const std::vector<std::vector<double>>& rows) {
  Tensor<double> t({rows.size(), rows[0].size()});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < rows[i].size(); ++k) t[i * rows[i].size() + k] = rows[i][k];
  return t;
}

std::vector<std::vector<double>> random_distributions(std::size_t n, std::size_t l, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  std::vector<std::vector<double>> out(n, std::vector<double>(l));
  for (auto& row : out) {
    for (auto& v : row) v = u(rng);
    const double s = std::accumulate(row.begin(), row.end(), 0.0);
    for (auto& v : row) v /= s;
  }
  return out;
}

ClusterNetConfig small_cluster() {
  ClusterNetConfig c;
  c.d_geom = 6;
  c.d_visual = 4;
  c.d_model = 10;
  c.d_h = 8;
  c.n_layers = 2;
  c.h_add = 1;
  c.h_dot = 1;
  c.d_qk = 4;
  c.d_ff = 12;
  c.d_label = 4;
  c.conv_channels1 = 2;
  c.conv_channels2 = 2;
  return c;
}

DescriptorConfig small_descriptor() {
  DescriptorConfig c;
  c.d_geom = 12;
  c.d_visual = 4;
  c.d_model = 16;
  c.n_layers = 2;
  c.layer_h_dot = 1;
  c.layer_h_add = 1;
  c.d_qk = 4;
  c.d_ff = 24;
  c.global_h_dot = 1;
  c.global_h_add = 1;
  c.global_d_qk = 4;
  c.d_global = 12;
  c.d_fc = 16;
  c.d_descriptor = 6;
  return c;
}

const nn::VisualEncoderShape kSmallVisual{2, 2, 8, 4};

// ---------------------------------------------------------------------------------------------

void gradient_suite() {
  const auto t0 = Clock::now();
  double worst = 0;
  std::string worst_name;
  auto check = [&](const std::string& name, std::vector<Tensor<double>> inputs,
                   const std::function<Tensor<double>()>& f) {
    const double e = gradient_error(std::move(inputs), f);
    if (e > worst || worst_name.empty()) {
      worst = std::max(worst, e);
      worst_name = name;
    }
  };
  std::mt19937_64 rng(101);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({5, 4}, rng);
  auto m = random_tensor({4, 5}, rng), bias = random_tensor({4}, rng);
  auto r34 = fixed({3, 4}, rng), r35 = fixed({3, 5}, rng), r38 = fixed({3, 8}, rng), r32 = fixed({3, 2}, rng);
  check("matmul", {a, m}, [&] { return probe(nn::matmul(a, m), r35); });
  check("matmul_nt", {a, c}, [&] { return probe(nn::matmul_nt(a, c), r35); });
  check("add", {a, b}, [&] { return probe(nn::add(a, b), r34); });
  check("sub", {a, b}, [&] { return probe(nn::sub(a, b), r34); });
  check("mul", {a, b}, [&] { return probe(nn::mul(a, b), r34); });
  check("add_bias", {a, bias}, [&] { return probe(nn::add_bias(a, bias), r34); });
  check("scale", {a}, [&] { return probe(nn::scale(a, 1.7), r34); });
  check("add_scalar", {a}, [&] { return probe(nn::add_scalar(a, 0.4), r34); });
  auto w45 = random_tensor({4, 5}, rng), b5 = random_tensor({5}, rng);
  check("linear", {a, w45, b5}, [&] { return probe(nn::linear(a, w45, b5), r35); });
  check("leaky_relu", {a}, [&] { return probe(nn::leaky_relu(a, 0.3), r34); });
  check("relu", {a}, [&] { return probe(nn::relu(a), r34); });
  check("tanh", {a}, [&] { return probe(nn::tanh(a), r34); });
  check("softmax_rows", {a}, [&] { return probe(nn::softmax_rows(a), r34); });
  check("softmax_rows masked", {a}, [&] { return probe(nn::softmax_rows(a, {1, 0, 1, 1}), r34); });
  check("concat_cols", {a, b}, [&] { return probe(nn::concat_cols<double>({a, b}), r38); });
  check("slice_cols", {a}, [&] { return probe(nn::slice_cols(a, 1, 2), r32); });
  check("reshape", {a}, [&] { return probe(nn::reshape(a, {4, 3}), r34); });
  check("mask_rows", {a}, [&] { return probe(nn::mask_rows(a, {1, 0, 1}), r34); });
  check("sum", {a}, [&] { return nn::sum(nn::mul(a, a)); });
  check("mean", {a}, [&] { return nn::mean(nn::mul(a, b)); });
  check("l2_normalize_rows", {a}, [&] { return probe(nn::l2_normalize_rows(a), r34); });
  check("distance", {a, b}, [&] { return nn::distance(nn::slice_cols(a, 0, 4), nn::slice_cols(b, 0, 4)); });
  {
    auto g = random_tensor({4}, rng), be = random_tensor({4}, rng);
    auto x = random_tensor({5, 4}, rng);
    auto r54 = fixed({5, 4}, rng);
    Tensor<double> rm({4}, 0.0), rv({4}, 1.0);
    check("batch_norm train", {x, g, be}, [&] { return probe(nn::batch_norm(x, g, be, rm, rv, true), r54); });
    check("batch_norm masked", {x, g, be},
          [&] { return probe(nn::batch_norm(x, g, be, rm, rv, true, {1, 1, 0, 1, 1}), r54); });
    check("batch_norm eval", {x, g, be}, [&] { return probe(nn::batch_norm(x, g, be, rm, rv, false), r54); });
  }
  {
    auto x = random_tensor({2, 2, 4, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), cb = random_tensor({3}, rng);
    auto r = fixed({2, 3, 4, 5}, rng);
    check("conv2d", {x, w, cb}, [&] { return probe(nn::conv2d(x, w, cb, 1), r); });
    auto y = random_tensor({1, 2, 4, 6}, rng);
    auto rp = fixed({1, 2, 2, 3}, rng);
    check("maxpool2d", {y}, [&] { return probe(nn::maxpool2d(y, 2), rp); });
  }
  {
    auto q = random_tensor({3, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 2}, rng);
    auto wq = random_tensor({4, 3}, rng), wk = random_tensor({4, 3}, rng), w = random_tensor({3}, rng);
    auto w4 = random_tensor({4}, rng);
    auto r33 = fixed({3, 3}, rng);
    check("additive_scores", {q, k, w4}, [&] { return probe(nn::additive_scores(q, k, w4), r33); });
    check("dot_attention_head", {q, k, v}, [&] { return probe(nn::dot_attention_head(q, k, v, {1, 1, 0}), r32); });
    check("additive_attention_head", {q, k, v, wq, wk, w},
          [&] { return probe(nn::additive_attention_head(q, k, v, wq, wk, w, {1, 0, 1}), r32); });
  }
  {
    const auto rows = random_distributions(6, 4, rng);
    Tensor<double> p = rows_tensor(rows).set_requires_grad(true);
    const std::vector<int> inst{0, 0, 1, -1, 1, 2};
    std::vector<std::uint8_t> bg;
    for (int i : inst) bg.push_back(i < 0);
    check("loss_background", {p}, [&] { return nn::loss_background(p, bg); });
    check("loss_pairwise", {p}, [&] { return nn::loss_pairwise(p, inst, {}, 2.0, false); });
    check("loss_bg", {p}, [&] { return loss_bg(p, inst); });
    check("loss_pair", {p}, [&] { return loss_pair(p, inst, {}, 2.0, false); });
    check("loss_clustering", {p}, [&] { return loss_clustering(p, inst, {}, 2.0, false); });
  }
  {
    ClusterNetConfig cc = small_cluster();
    ClusterNet<double> net(cc, 9);
    const Tensor<double> geom = fixed({5, 15}, rng), vis = fixed({5, 4}, rng);
    const std::vector<int> inst{0, 0, 1, -1, 1};
    std::vector<Tensor<double>> params;
    for (auto& p : net.head_parameters())
      if (p.trainable) params.push_back(p.tensor);
    check("clustering network", params,
          [&] { return loss_clustering(net.forward(geom, vis, {}, true), inst, {}, 2.0, false); });
    cc.attention_enabled = false;
    ClusterNet<double> ablation(cc, 10);
    std::vector<Tensor<double>> ab_params;
    for (auto& p : ablation.head_parameters())
      if (p.trainable) ab_params.push_back(p.tensor);
    check("clustering network without attention", ab_params,
          [&] { return loss_clustering(ablation.forward(geom, vis, {}, true), inst, {}, 2.0, false); });

    ClusterNetConfig vc = small_cluster();
    vc.d_h = 4;
    vc.d_visual = 3;
    vc.d_geom = 7;
    ClusterNet<double> vnet(vc, 4);
    Tensor<double> images = random_tensor({2, 3, kVirtualHeight, kVirtualWidth}, rng, 0.0, 1.0);
    images.set_requires_grad(false);
    const Tensor<double> weights = fixed({2, 3}, rng);
    std::vector<Tensor<double>> vparams;
    for (auto& p : vnet.visual_parameters()) vparams.push_back(p.tensor);
    check("visual encoder", vparams, [&] { return nn::sum(nn::mul(vnet.encode_visual(images), weights)); });
  }
  {
    DescriptorNet<double> net(small_descriptor(), kSmallVisual, 10);
    const Tensor<double> ga = fixed({3, 15}, rng), va = fixed({3, 4}, rng), gp = fixed({4, 15}, rng),
                         vp = fixed({4, 4}, rng), gn = fixed({2, 15}, rng), vn = fixed({2, 4}, rng);
    std::vector<Tensor<double>> params;
    for (auto& p : net.trainable_parameters()) params.push_back(p.tensor);
    check("descriptor network triplet", params, [&] {
      return triplet_loss(net.describe(ga, va), net.describe(gp, vp), net.describe(gn, vn), 2.5);
    });
  }
  const double t = seconds_since(t0);
  report(1, worst < 1e-3 && t < 120.0,
         "worst relative gradient error " + fmt("%.3g", worst) + " (" + worst_name + "), runtime " +
             fmt("%.1f", t) + " s");
}

// ---------------------------------------------------------------------------------------------

double kl_bins(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0;
  for (std::size_t k = 1; k < a.size(); ++k) s += a[k] * std::log(a[k] / b[k]);
  return s;
}

double pair_reference(const std::vector<std::vector<double>>& p, const std::vector<int>& inst, double margin) {
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j) {
      if (inst[i] < 0 || inst[j] < 0) continue;
      if (inst[i] == inst[j])
        total += kl_bins(p[i], p[j]) + kl_bins(p[j], p[i]);
      else
        total += std::max(0.0, margin - kl_bins(p[i], p[j])) + std::max(0.0, margin - kl_bins(p[j], p[i]));
    }
  return total;
}

double bg_reference(const std::vector<std::vector<double>>& p, const std::vector<int>& inst) {
  double total = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double fg = std::accumulate(p[i].begin() + 1, p[i].end(), 0.0);
    total -= std::log(std::clamp(inst[i] < 0 ? p[i][0] : fg, 1e-7, 1.0));
  }
  return total;
}

void loss_oracles() {
  struct Case {
    std::string name;
    double got, want;
  };
  std::vector<Case> cases;
  cases.push_back({"bg all background", loss_bg(rows_tensor({{1, 0, 0}, {1, 0, 0}}), {-1, -1}).item(), 0.0});
  cases.push_back({"bg foreground clamp", loss_bg(rows_tensor({{1 - 1e-7, 1e-7, 0}}), {0}).item(), -std::log(1e-7)});
  cases.push_back({"bg half", loss_bg(rows_tensor({{0.5, 0.25, 0.25}}), {-1}).item(), std::log(2.0)});
  cases.push_back({"pair symmetric kl", loss_pair(rows_tensor({{0, 0.8, 0.2}, {0, 0.2, 0.8}}), {3, 3}).item(),
                   2.0 * (0.8 * std::log(4.0) + 0.2 * std::log(0.25))});
  std::mt19937_64 rng(12);
  const auto rows = random_distributions(7, 5, rng);
  const std::vector<int> inst{0, -1, 1, 1, -1, 0, 2};
  cases.push_back({"clustering sum", loss_clustering(rows_tensor(rows), inst).item(),
                   pair_reference(rows, inst, 2.0) + bg_reference(rows, inst)});
  auto row = [](std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor<double>({1, n}, std::move(v));
  };
  const auto anchor = row({1, 0, 0});
  cases.push_back({"triplet satisfied", triplet_loss(anchor, row({1, 0, 0}), row({0, 1, 0}), 0.6).item(), 0.0});
  cases.push_back({"triplet collapsed", triplet_loss(anchor, anchor, anchor, 0.6).item(), 0.6});
  const auto p = row({1 - 0.125, std::sqrt(1 - 0.875 * 0.875), 0});  // |a - p| = 0.5
  const auto n = row({1 - 0.08, -std::sqrt(1 - 0.92 * 0.92), 0});    // |a - n| = 0.4
  cases.push_back({"triplet violated", triplet_loss(anchor, p, n, 0.6).item(), 0.7});
  double worst = 0;
  std::string which;
  for (const auto& c : cases) {
    const double e = std::abs(c.got - c.want);
    if (e >= worst) {
      worst = e;
      which = c.name;
    }
  }
  report(2, worst <= 1e-6,
         std::to_string(cases.size()) + " hand-computed cases, worst abs error " + fmt("%.3g", worst) + " (" + which +
             ")");
}

// ---------------------------------------------------------------------------------------------

Tensor<double> permute_rows(const Tensor<double>& t, const std::vector<std::size_t>& perm) {
  const std::size_t w = t.dim(1);
  Tensor<double> out({perm.size(), w});
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t c = 0; c < w; ++c) out[i * w + c] = t[perm[i] * w + c];
  return out;
}

void symmetry_suite() {
  std::mt19937_64 rng(31);
  double cluster_gap = 0, descriptor_gap = 0;
  bool relabel_exact = true;
  nn::NoGradGuard guard;
  ClusterNetConfig cc = small_cluster();
  cc.d_geom = 24;
  cc.d_visual = 8;
  cc.d_model = 32;
  cc.d_qk = 8;
  cc.d_ff = 64;
  cc.d_label = 8;
  ClusterNet<double> cnet(cc, 7);
  DescriptorNet<double> dnet(small_descriptor(), kSmallVisual, 5);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 3 + trial * 2;
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    const Tensor<double> g = fixed({n, 15}, rng), v = fixed({n, 8}, rng);
    for (bool training : {false, true}) {
      const Tensor<double> a = cnet.forward(g, v, {}, training);
      const Tensor<double> b = cnet.forward(permute_rows(g, perm), permute_rows(v, perm), {}, training);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < cc.d_label; ++c)
          cluster_gap = std::max(cluster_gap, std::abs(b[i * cc.d_label + c] - a[perm[i] * cc.d_label + c]));
    }
    const Tensor<double> dv = fixed({n, 4}, rng);
    const Tensor<double> e = dnet.describe(g, dv), f = dnet.describe(permute_rows(g, perm), permute_rows(dv, perm));
    for (std::size_t i = 0; i < e.size(); ++i) descriptor_gap = std::max(descriptor_gap, std::abs(e[i] - f[i]));

    const auto rows = random_distributions(n, 6, rng);
    std::vector<int> inst(n), renamed(n);
    std::uniform_int_distribution<int> lab(-1, 3);
    for (std::size_t i = 0; i < n; ++i) {
      inst[i] = lab(rng);
      renamed[i] = inst[i] < 0 ? -1 : 40 - 7 * inst[i];
    }
    relabel_exact = relabel_exact && loss_pair(rows_tensor(rows), inst).item() == loss_pair(rows_tensor(rows), renamed).item();
  }
  report(3, cluster_gap <= 1e-6 && descriptor_gap <= 1e-6 && relabel_exact,
         "clustering equivariance gap " + fmt("%.3g", cluster_gap) + ", descriptor invariance gap " +
             fmt("%.3g", descriptor_gap) + ", relabelled pair loss " + (relabel_exact ? "identical" : "differs"));
}

// ---------------------------------------------------------------------------------------------

double angle_between(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  return std::atan2(a.cross(b).norm(), a.dot(b));
}

void geometry_suite() {
  std::mt19937_64 rng(41);
  std::uniform_real_distribution<double> u(-1, 1);
  double clean = 0, noisy = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Vector3d n = Eigen::Vector3d(u(rng), u(rng), -1.5).normalized();
    const Eigen::Vector3d c0(u(rng), u(rng), 3.0 + u(rng));
    const Eigen::Vector3d e1 = n.unitOrthogonal(), e2 = n.cross(e1);
    PointCloud cloud;
    for (int i = 0; i < 300; ++i) cloud.points.push_back(c0 + u(rng) * e1 + u(rng) * e2);
    const auto plane = fit_plane_ransac(cloud, {}, 100 + trial);
    clean = std::max(clean, plane ? angle_between(plane->normal, n) : M_PI);

    std::normal_distribution<double> noise(0.0, 0.002);
    PointCloud dirty;
    for (int i = 0; i < 270; ++i)
      dirty.points.push_back(c0 + u(rng) * e1 + u(rng) * e2 + noise(rng) * n);
    for (int i = 0; i < 30; ++i) dirty.points.push_back(c0 + Eigen::Vector3d(u(rng), u(rng), 1.5 * u(rng)));
    const auto rough = fit_plane_ransac(dirty, {}, 200 + trial);
    noisy = std::max(noisy, rough ? angle_between(rough->normal, n) : M_PI);
  }

  // Room corners seen from the front: the edge between the two walls.
  double edge = 0;
  bool edges_found = true;
  const auto k = testing_support::small_intrinsics();
  for (double yaw : {0.0, 0.2, -0.35}) {
    const Eigen::Matrix3d r = Eigen::AngleAxisd(yaw, Eigen::Vector3d::UnitY()).toRotationMatrix();
    const Eigen::Vector3d na = r * Eigen::Vector3d(1, 0, 1).normalized();
    const Eigen::Vector3d nb = r * Eigen::Vector3d(-1, 0, 1).normalized();
    const Eigen::Vector3d corner = r * Eigen::Vector3d(0, 0, 2.0);
    const auto f = testing_support::render_planes({{na, na.dot(corner)}, {nb, nb.dot(corner)}}, k);
    const Eigen::Vector2d top = project(corner + Eigen::Vector3d(0, -0.4, 0), k);
    const Eigen::Vector2d bottom = project(corner + Eigen::Vector3d(0, 0.4, 0), k);
    const auto line = reproject_segment(f, Segment2D{top, bottom}, {}, 11);
    if (!line || line->type != LineType::kEdge) {
      edges_found = false;
      continue;
    }
    edge = std::max({edge, std::abs(angle_between(line->direction(), line->normal_left) - M_PI / 2),
                     std::abs(angle_between(line->direction(), line->normal_right) - M_PI / 2)});
  }

  double round_trip = 0;
  CameraIntrinsics cam;
  std::uniform_real_distribution<double> px(0, 639), py(0, 479), depth(0.3, 10.0);
  for (int i = 0; i < 10000; ++i) {
    const double x = px(rng), y = py(rng);
    const Eigen::Vector2d back = project(backproject(x, y, depth(rng), cam), cam);
    round_trip = std::max(round_trip, std::hypot(back.x() - x, back.y() - y));
  }
  const double deg = 180.0 / M_PI;
  report(4, clean <= 1e-6 && noisy * deg <= 2.0 && edges_found && edge <= 1e-6 && round_trip <= 1e-9,
         "noiseless plane " + fmt("%.3g", clean) + " rad, 10% outliers " + fmt("%.3f", noisy * deg) +
             " deg, edge-in-plane residual " + (edges_found ? fmt("%.3g", edge) : std::string("missing")) +
             " rad, round trip " + fmt("%.3g", round_trip) + " px");
}

// ---------------------------------------------------------------------------------------------

struct WorldLine {
  Eigen::Vector3d a, b, n1, n2;
  LineType type;
};

std::vector<WorldLine> scene_lines(const SceneSpec& s) {
  std::vector<WorldLine> out;
  for (const auto& o : s.objects) {
    const Eigen::Matrix3d r = Eigen::AngleAxisd(o.yaw, Eigen::Vector3d::UnitY()).toRotationMatrix();
    const Eigen::Vector3d h = o.half;
    auto at = [&](double x, double y, double z) { return Eigen::Vector3d(o.center + r * Eigen::Vector3d(x, y, z)); };
    for (double sx : {-1.0, 1.0})
      for (double sz : {-1.0, 1.0})
        out.push_back({at(sx * h.x(), -h.y(), sz * h.z()), at(sx * h.x(), h.y(), sz * h.z()),
                       r * Eigen::Vector3d(sx, 0, 0), r * Eigen::Vector3d(0, 0, sz), LineType::kEdge});
    for (double sz : {-1.0, 1.0})
      out.push_back({at(-h.x(), h.y(), sz * h.z()), at(h.x(), h.y(), sz * h.z()), Eigen::Vector3d::UnitY(),
                     r * Eigen::Vector3d(0, 0, sz), LineType::kEdge});
    for (double sx : {-1.0, 1.0})
      out.push_back({at(sx * h.x(), h.y(), -h.z()), at(sx * h.x(), h.y(), h.z()), Eigen::Vector3d::UnitY(),
                     r * Eigen::Vector3d(sx, 0, 0), LineType::kEdge});
  }
  for (const auto& p : s.panels) {
    const int w = static_cast<int>(p.wall);
    const bool x_wall = w <= static_cast<int>(Surface::kWallXMax);
    const bool high = w == static_cast<int>(Surface::kWallXMax) || w == static_cast<int>(Surface::kWallZMax);
    const double plane = x_wall ? (high ? s.room.x() : 0.0) : (high ? s.room.z() : 0.0);
    Eigen::Vector3d n = x_wall ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitZ();
    if (high) n = -n;
    auto at = [&](double wu, double wv) {
      return x_wall ? Eigen::Vector3d(plane, wv, wu) : Eigen::Vector3d(wu, wv, plane);
    };
    out.push_back({at(p.u0, p.v0), at(p.u1, p.v0), n, n, LineType::kTexture});
    out.push_back({at(p.u0, p.v1), at(p.u1, p.v1), n, n, LineType::kTexture});
    out.push_back({at(p.u0, p.v0), at(p.u0, p.v1), n, n, LineType::kTexture});
    out.push_back({at(p.u1, p.v0), at(p.u1, p.v1), n, n, LineType::kTexture});
  }
  return out;
}

// Every sample of the line is inside the image and is the first surface hit from the camera.
bool fully_visible(const SceneSpec& s, const Frame& f, const WorldLine& l) {
  const Eigen::Isometry3d inv = f.pose->inverse();
  const Eigen::Vector3d eye = f.pose->translation();
  const auto& k = f.intrinsics;
  Eigen::Vector2d first, last;
  for (int i = 0; i <= 10; ++i) {
    const double t = 0.05 + 0.09 * i;
    const Eigen::Vector3d x = l.a + t * (l.b - l.a);
    const Eigen::Vector3d xc = inv * x;
    if (xc.z() < 0.1) return false;
    const Eigen::Vector2d uv = project(xc, k);
    if (uv.x() < 4 || uv.y() < 4 || uv.x() > k.width - 5 || uv.y() > k.height - 5) return false;
    const double dist = (x - eye).norm();
    if (cast_ray(s, eye, (x - eye) / dist).t < dist - 0.02) return false;
    if (i == 0) first = uv;
    last = uv;
  }
  return (last - first).norm() >= 20.0;
}

Line3D camera_line(const WorldLine& l, const Frame& f) {
  const Eigen::Isometry3d inv = f.pose->inverse();
  Line3D out;
  out.start = inv * l.a;
  out.end = inv * l.b;
  out.normal_left = inv.linear() * l.n1;
  out.normal_right = inv.linear() * l.n2;
  out.length = (l.b - l.a).norm();
  out.type = l.type;
  return out;
}

void view_invariance(const PipelineConfig& cfg) {
  SynthConfig sc = cfg.synth;
  const std::uint64_t root = derive_seed(cfg.seed, 50);
  std::size_t tested = 0, good = 0, scenes = 0;
  double max_angle = 0;
  for (int s = 0; s < 20; ++s) {
    const SceneSpec scene = generate_scene(derive_seed(root, s, 0), sc, s);
    const std::vector<Frame> base = render_views(scene, 1, derive_seed(root, s, 1), sc);
    const Frame& fa = base.front();
    const auto& k = fa.intrinsics;
    const Eigen::Vector3d eye_a = fa.pose->translation();
    const Eigen::Vector3d pivot = *fa.pose * backproject(k.cx, k.cy, fa.depth.at(static_cast<int>(k.cx), static_cast<int>(k.cy)), k);
    std::optional<Frame> fb;
    std::mt19937_64 rng(derive_seed(root, s, 2));
    std::uniform_real_distribution<double> angle(5.0, 30.0);
    for (int attempt = 0; attempt < 50; ++attempt) {
      const double deg = (attempt % 2 ? -1.0 : 1.0) * angle(rng);
      const Eigen::Matrix3d r = Eigen::AngleAxisd(deg * M_PI / 180.0, Eigen::Vector3d::UnitY()).toRotationMatrix();
      const Eigen::Vector3d eye_b = pivot + r * (eye_a - pivot);
      if (eye_b.x() < 0.3 || eye_b.z() < 0.3 || eye_b.x() > scene.room.x() - 0.3 || eye_b.z() > scene.room.z() - 0.3)
        continue;
      bool free = true;
      for (const auto& o : scene.objects) {
        const Eigen::Vector3d local =
            Eigen::AngleAxisd(-o.yaw, Eigen::Vector3d::UnitY()).toRotationMatrix() * (eye_b - o.center);
        if (std::abs(local.x()) < o.half.x() + 0.3 && std::abs(local.z()) < o.half.z() + 0.3 &&
            local.y() < o.half.y() + 0.3)
          free = false;
      }
      const double dist = (pivot - eye_b).norm();
      if (!free || cast_ray(scene, eye_b, (pivot - eye_b) / dist).t < dist - 0.05) continue;
      fb = render_view(scene, look_at(eye_b, pivot), sc, 1);
      const Eigen::Vector3d fa_dir = fa.pose->linear().col(2), fb_dir = fb->pose->linear().col(2);
      max_angle = std::max(max_angle, angle_between(fa_dir, fb_dir) * 180.0 / M_PI);
      break;
    }
    if (!fb) continue;
    ++scenes;
    const PointCloud ca = frame_point_cloud(fa), cb = frame_point_cloud(*fb);
    for (const auto& l : scene_lines(scene)) {
      if ((l.b - l.a).norm() < 0.15 || !fully_visible(scene, fa, l) || !fully_visible(scene, *fb, l)) continue;
      const double corr = image_correlation(virtual_image(ca, camera_line(l, fa), cfg.extract.view),
                                            virtual_image(cb, camera_line(l, *fb), cfg.extract.view));
      ++tested;
      if (corr >= 0.8) ++good;
    }
  }
  const double share = tested ? static_cast<double>(good) / tested : 0.0;
  report(5, tested >= 20 && share >= 0.9 && max_angle <= 30.0 + 1e-9,
         std::to_string(good) + "/" + std::to_string(tested) + " lines with correlation >= 0.8 (" +
             fmt("%.1f", 100 * share) + "%) over " + std::to_string(scenes) + " view pairs, max angle " +
             fmt("%.1f", max_angle) + " deg");
}

// ---------------------------------------------------------------------------------------------

void retrieval_exactness() {
  std::mt19937_64 rng(81);
  std::normal_distribution<double> g(0, 1);
  const std::size_t n = 10000, dim = 128;
  std::vector<double> pts(n * dim);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (std::size_t c = 0; c < dim; ++c) s += (pts[i * dim + c] = g(rng)) * pts[i * dim + c];
    for (std::size_t c = 0; c < dim; ++c) pts[i * dim + c] /= std::sqrt(s);
  }
  const KdTree tree(pts, dim);
  std::size_t queries = 0, mismatches = 0;
  std::vector<double> q(dim);
  for (int i = 0; i < 300; ++i) {
    if (i % 3 == 0) {
      std::copy_n(pts.begin() + static_cast<long>((i * 37 % n) * dim), dim, q.begin());
    } else {
      double s = 0;
      for (auto& v : q) s += (v = g(rng)) * v;
      for (auto& v : q) v /= std::sqrt(s);
    }
    for (std::size_t k : {1u, 4u, 8u}) {
      const auto a = tree.knn(q.data(), k), b = brute_force_knn(pts, dim, q.data(), k);
      std::set<std::size_t> sa, sb;
      for (const auto& [idx, d] : a) sa.insert(idx);
      for (const auto& [idx, d] : b) sb.insert(idx);
      ++queries;
      if (sa != sb || a.size() != k) ++mismatches;
    }
  }
  report(8, mismatches == 0,
         std::to_string(mismatches) + " mismatches over " + std::to_string(queries) +
             " queries on 10000 x 128 embeddings, k in {1, 4, 8}");
}

// ---------------------------------------------------------------------------------------------

double entropy_of(const std::map<std::vector<int>, double>& counts, double n) {
  double h = 0;
  for (const auto& [key, c] : counts) h -= c / n * std::log(c / n);
  return h;
}

// I(U;V) = H(U) + H(V) - H(U,V), normalized by the geometric mean of the marginals.
double nmi_reference(const std::vector<int>& u, const std::vector<int>& v) {
  std::map<std::vector<int>, double> cu, cv, cj;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cu[{u[i]}] += 1;
    cv[{v[i]}] += 1;
    cj[{u[i], v[i]}] += 1;
  }
  const double n = static_cast<double>(u.size());
  const double hu = entropy_of(cu, n), hv = entropy_of(cv, n), hj = entropy_of(cj, n);
  if (cu.size() == 1 && cv.size() == 1) return 1.0;
  if (hu == 0 || hv == 0) return 0.0;
  return (hu + hv - hj) / std::sqrt(hu * hv);
}

void nmi_oracle() {
  std::mt19937_64 rng(91);
  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int n = std::uniform_int_distribution<int>(1, 50)(rng);
    const int ku = std::uniform_int_distribution<int>(1, 8)(rng), kv = std::uniform_int_distribution<int>(1, 8)(rng);
    std::vector<int> u(n), v(n);
    for (int i = 0; i < n; ++i) {
      u[i] = std::uniform_int_distribution<int>(0, ku - 1)(rng);
      v[i] = t % 4 == 0 ? u[i] * 3 - 5 : std::uniform_int_distribution<int>(0, kv - 1)(rng);
    }
    worst = std::max(worst, std::abs(nmi(u, v) - nmi_reference(u, v)));
  }
  report(9, worst <= 1e-9, "100 random partitions, worst abs difference " + fmt("%.3g", worst));
}

// ---------------------------------------------------------------------------------------------

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> tree_bytes(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).string()] = file_bytes(e.path());
  return out;
}

void determinism(const PipelineConfig& cfg, const fs::path& work) {
  SynthConfig sc = cfg.synth;
  sc.scenes = 3;
  sc.views = 3;
  sc.seed = derive_seed(cfg.seed, 1);
  const fs::path a = work / "det_a", b = work / "det_b";
  synthesize_dataset(a, sc);
  synthesize_dataset(b, sc);
  const auto ta = tree_bytes(a), tb = tree_bytes(b);
  const bool synth_same = ta == tb && !ta.empty();

  const ExtractionReport ea = extract_dataset(a, cfg.extract, derive_seed(cfg.seed, 2), 1);
  const ExtractionReport eb = extract_dataset(b, cfg.extract, derive_seed(cfg.seed, 2), worker_count());
  write_line_dataset(work / "det_a.lines", ea.data);
  write_line_dataset(work / "det_b.lines", eb.data);
  const bool extract_same =
      !ea.data.empty() && file_bytes(work / "det_a.lines") == file_bytes(work / "det_b.lines");

  ClusterNetConfig cc = small_cluster();
  cc.d_geom = 24;
  cc.d_visual = 8;
  cc.d_model = 32;
  cc.d_h = 16;
  cc.d_qk = 8;
  cc.d_ff = 32;
  cc.d_label = 8;
  cc.epochs = 1;
  auto cluster_loss = [&] {
    ClusterNet<float> net(cc, derive_seed(cfg.seed, 3, 0));
    ClusterTrainState s = make_cluster_train_state(net);
    return train_clustering(s, ea.data, {}, {.seed = derive_seed(cfg.seed, 3, 2)}).front().loss;
  };
  const double c1 = cluster_loss(), c2 = cluster_loss();

  DescriptorConfig dc = small_descriptor();
  dc.epochs = 1;
  dc.steps_per_epoch = 3;
  dc.triplets_per_step = 4;
  auto descriptor_loss = [&] {
    DescriptorNet<float> net(dc, kSmallVisual, derive_seed(cfg.seed, 4, 0));
    DescriptorTrainState s = make_descriptor_train_state(net);
    return train_descriptor(s, ea.data, {}, {.seed = derive_seed(cfg.seed, 4, 2)}).front().loss;
  };
  const double d1 = descriptor_loss(), d2 = descriptor_loss();
  fs::remove_all(a);
  fs::remove_all(b);
  report(10, synth_same && extract_same && c1 == c2 && d1 == d2,
         std::string("synth ") + (synth_same ? "identical" : "differs") + " (" + std::to_string(ta.size()) +
             " files), extract " + (extract_same ? "identical" : "differs") + ", first-epoch losses " +
             fmt("%.17g", c1) + "/" + fmt("%.17g", c2) + " and " + fmt("%.17g", d1) + "/" + fmt("%.17g", d2));
}

// ---------------------------------------------------------------------------------------------

void training_and_place_recognition(const PipelineConfig& cfg, const fs::path& work) {
  const auto t0 = Clock::now();
  const unsigned workers = worker_count();
  SynthConfig train_synth = cfg.synth;
  train_synth.scenes = 40;
  train_synth.views = 8;
  train_synth.seed = derive_seed(cfg.seed, 1);
  SynthConfig held_synth = train_synth;
  held_synth.scenes = 20;
  const std::uint64_t held_root = cfg.seed + 1000;
  held_synth.seed = derive_seed(held_root, 1);
  synthesize_dataset(work / "train", train_synth);
  synthesize_dataset(work / "held_out", held_synth);
  const ExtractionReport tr = extract_dataset(work / "train", cfg.extract, derive_seed(cfg.seed, 2), workers);
  const ExtractionReport ho = extract_dataset(work / "held_out", cfg.extract, derive_seed(held_root, 2), workers);
  std::cerr << "extracted " << tr.data.size() << " training and " << ho.data.size() << " held-out frames\n";

  auto train_cluster = [&](bool attention) {
    ClusterNetConfig c = cfg.cluster;
    c.attention_enabled = attention;
    c.epochs = std::min(c.epochs, 40);
    auto net = std::make_unique<ClusterNet<float>>(c, derive_seed(cfg.seed, 3, 0));
    if (c.pretrain_epochs > 0) pretrain_visual(*net, tr.data, derive_seed(cfg.seed, 3, 1));
    ClusterTrainState s = make_cluster_train_state(*net);
    ClusterTrainOptions opts;
    opts.seed = derive_seed(cfg.seed, 3, 2);
    opts.on_epoch = [](const ClusterEpochMetrics& m, ClusterTrainState&) {
      std::cerr << "cluster epoch " << m.epoch << " loss " << m.loss << "\n";
    };
    train_clustering(s, tr.data, {}, opts);
    return net;
  };
  const std::uint64_t eval_seed = derive_seed(cfg.seed, 5);
  auto net = train_cluster(true);
  const double nmi_net = mean_nmi(*net, ho.data, nullptr, eval_seed);
  auto ablation = train_cluster(false);
  const double nmi_ablation = mean_nmi(*ablation, ho.data, nullptr, eval_seed);
  const double nmi_agglo = mean_agglomerative_nmi(ho.data, cfg.retrieval.agglomerative);
  const double t_cluster = seconds_since(t0);
  report(6, nmi_net >= nmi_agglo + 0.05 && nmi_net > nmi_ablation && t_cluster <= 7200.0,
         "held-out NMI " + fmt("%.4f", nmi_net) + " vs agglomerative " + fmt("%.4f", nmi_agglo) + " (margin " +
             fmt("%.4f", nmi_net - nmi_agglo) + ") and no-attention " + fmt("%.4f", nmi_ablation) + ", runtime " +
             fmt("%.0f", t_cluster) + " s");

  DescriptorNet<float> desc(cfg.descriptor, cfg.cluster.visual_shape(), derive_seed(cfg.seed, 4, 0));
  adopt_visual_encoder(desc, *net);
  DescriptorTrainState ds = make_descriptor_train_state(desc);
  DescriptorTrainOptions dopts;
  dopts.seed = derive_seed(cfg.seed, 4, 2);
  dopts.on_epoch = [](const DescriptorEpochMetrics& m, DescriptorTrainState&) {
    std::cerr << "descriptor epoch " << m.epoch << " loss " << m.loss << "\n";
  };
  train_descriptor(ds, tr.data, {}, dopts);
  const auto predicted = leave_one_out_accuracy(embed_frames(desc, net.get(), ho.data, eval_seed),
                                                cfg.retrieval.k_nn, cfg.retrieval.min_lines);
  const auto perfect = leave_one_out_accuracy(embed_frames(desc, nullptr, ho.data, eval_seed), cfg.retrieval.k_nn,
                                              cfg.retrieval.min_lines);
  std::set<int> scene_ids;
  for (const auto& f : ho.data) scene_ids.insert(f.scene_id);
  const double chance = 1.0 / static_cast<double>(scene_ids.size());
  report(7, predicted.accuracy >= 3.0 * chance - 1e-12 && perfect.accuracy >= predicted.accuracy,
         "leave-one-out accuracy " + fmt("%.4f", predicted.accuracy) + " (" + std::to_string(predicted.correct) + "/" +
             std::to_string(predicted.total) + ", chance " + fmt("%.3f", chance) + ", k_nn " +
             std::to_string(cfg.retrieval.k_nn) + "), ground-truth clusters " + fmt("%.4f", perfect.accuracy));
}

}  // namespace

int main() {
  const PipelineConfig cfg = PipelineConfig::load(fs::path(LCD_SOURCE_DIR) / "configs" / "desk.json");
  const char* keep = std::getenv("LCD_ACCEPTANCE_DIR");
  const fs::path work =
      keep ? fs::path(keep) : fs::temp_directory_path() / ("lcd_acceptance_" + std::to_string(::getpid()));
  fs::remove_all(work);
  fs::create_directories(work);

  const auto run = [](std::vector<int> covers, const std::function<void()>& f) {
    try {
      f();
    } catch (const std::exception& e) {
      for (int n : covers)
        if (!reported.count(n)) report(n, false, std::string("error: ") + e.what());
    }
  };
  run({1}, gradient_suite);
  run({2}, loss_oracles);
  run({3}, symmetry_suite);
  run({4}, geometry_suite);
  run({5}, [&] { view_invariance(cfg); });
  run({8}, retrieval_exactness);
  run({9}, nmi_oracle);
  run({10}, [&] { determinism(cfg, work); });
  run({6, 7}, [&] { training_and_place_recognition(cfg, work); });

  if (!keep) fs::remove_all(work);
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
