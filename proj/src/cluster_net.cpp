#include "lcd/cluster_net.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lcd/config.hpp"
#include "lcd/retrieval_eval.hpp"

namespace lcd {

using nn::Mask;
using nn::Tensor;

void ClusterNetConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, "cluster config: " + m); };
  if (d_geom + d_visual != d_model) fail("d_geom + d_visual must equal d_model");
  if (d_label < 2) fail("d_label must be at least 2");
  if (h_dot + h_add == 0 || d_qk == 0) fail("attention needs at least one head");
  if (d_ff == 0 || d_h == 0 || conv_channels1 == 0 || conv_channels2 == 0) fail("layer widths must be positive");
  if (max_lines_train < 2 || max_lines_eval < 1) fail("line caps too small");
  if (!(margin > 0) || !(lr > 0) || !(lr_decay > 0) || epochs < 0 || pretrain_epochs < 0) fail("bad training values");
  if (blackout_probability < 0 || blackout_probability > 1) fail("blackout probability outside [0,1]");
}

nlohmann::json ClusterNetConfig::to_json() const {
  return {{"d_geom", d_geom},
          {"d_visual", d_visual},
          {"d_model", d_model},
          {"d_h", d_h},
          {"n_layers", n_layers},
          {"h_add", h_add},
          {"h_dot", h_dot},
          {"d_qk", d_qk},
          {"d_ff", d_ff},
          {"d_label", d_label},
          {"conv_channels1", conv_channels1},
          {"conv_channels2", conv_channels2},
          {"max_lines_train", max_lines_train},
          {"max_lines_eval", max_lines_eval},
          {"margin", margin},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"epochs", epochs},
          {"attention_enabled", attention_enabled},
          {"detach_reference", detach_reference},
          {"augment", augment},
          {"blackout_probability", blackout_probability},
          {"max_tilt_deg", max_tilt_deg},
          {"pretrain_epochs", pretrain_epochs},
          {"pretrain_lr", pretrain_lr},
          {"frame_statistics", frame_statistics}};
}

ClusterNetConfig ClusterNetConfig::from_json(const nlohmann::json& j, const std::string& path) {
  ClusterNetConfig c;
  StrictReader r(j, path);
  r.read("d_geom", c.d_geom);
  r.read("d_visual", c.d_visual);
  r.read("d_model", c.d_model);
  r.read("d_h", c.d_h);
  r.read("n_layers", c.n_layers);
  r.read("h_add", c.h_add);
  r.read("h_dot", c.h_dot);
  r.read("d_qk", c.d_qk);
  r.read("d_ff", c.d_ff);
  r.read("d_label", c.d_label);
  r.read("conv_channels1", c.conv_channels1);
  r.read("conv_channels2", c.conv_channels2);
  r.read("max_lines_train", c.max_lines_train);
  r.read("max_lines_eval", c.max_lines_eval);
  r.read("margin", c.margin);
  r.read("lr", c.lr);
  r.read("lr_decay", c.lr_decay);
  r.read("epochs", c.epochs);
  r.read("attention_enabled", c.attention_enabled);
  r.read("detach_reference", c.detach_reference);
  r.read("augment", c.augment);
  r.read("blackout_probability", c.blackout_probability);
  r.read("max_tilt_deg", c.max_tilt_deg);
  r.read("pretrain_epochs", c.pretrain_epochs);
  r.read("pretrain_lr", c.pretrain_lr);
  r.read("frame_statistics", c.frame_statistics);
  r.finish();
  c.validate();
  return c;
}

template <typename T>
ClusterNet<T>::ClusterNet(const ClusterNetConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  nn::Rng rng(seed);
  visual_ = nn::VisualEncoder<T>(cfg_.visual_shape(), rng);
  geom_embed_ = nn::Linear<T>(kGeomDim, cfg_.d_geom, rng);
  embed_bn_ = nn::BatchNorm<T>(cfg_.d_model);
  embed_bn_.set_statistics = cfg_.frame_statistics;
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) {
    layers_.emplace_back(cfg_.attention_shape(), cfg_.d_ff, true, rng);
    layers_.back().bn_attention.set_statistics = cfg_.frame_statistics;
    layers_.back().bn_ff.set_statistics = cfg_.frame_statistics;
  }
  label_head_ = nn::Linear<T>(cfg_.d_model, cfg_.d_label, rng);
}

template <typename T>
Tensor<T> ClusterNet<T>::embed(const Tensor<T>& geometry, const Tensor<T>& visual, const Mask& mask, bool training) {
  if (geometry.ndim() != 2 || geometry.dim(1) != static_cast<std::size_t>(kGeomDim))
    throw Error(ErrorCode::kShapeMismatch, "cluster net: geometry must be [N,15]");
  if (visual.ndim() != 2 || visual.dim(0) != geometry.dim(0) || visual.dim(1) != cfg_.d_visual)
    throw Error(ErrorCode::kShapeMismatch, "cluster net: visual encodings must be [N,d_visual]");
  const Tensor<T> g = nn::leaky_relu(geom_embed_(geometry));
  return embed_bn_(nn::concat_cols<T>({g, visual}), training, mask);
}

template <typename T>
Tensor<T> ClusterNet<T>::forward(const Tensor<T>& geometry, const Tensor<T>& visual, const Mask& mask, bool training) {
  const std::size_t n = geometry.ndim() == 2 ? geometry.dim(0) : 0;
  const std::size_t valid = mask.empty() ? n : static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  if (valid == 0) throw Error(ErrorCode::kEmptyInput, "cluster net: no valid lines");
  Tensor<T> x = embed(geometry, visual, mask, training);
  for (auto& layer : layers_) x = layer(x, mask, training, cfg_.attention_enabled);
  return nn::mask_rows(nn::softmax_rows(label_head_(x)), mask);
}

template <typename T>
nn::ParamList<T> ClusterNet<T>::head_parameters() const {
  nn::ParamList<T> out;
  geom_embed_.collect("geom_embed", out);
  embed_bn_.collect("embed_bn", out);
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("layer" + std::to_string(i), out);
  label_head_.collect("label_head", out);
  return out;
}

template <typename T>
nn::ParamList<T> ClusterNet<T>::visual_parameters() const {
  nn::ParamList<T> out;
  visual_.collect("visual", out);
  return out;
}

template <typename T>
nn::ParamList<T> ClusterNet<T>::parameters() const {
  nn::ParamList<T> out = visual_parameters();
  for (auto& p : head_parameters()) out.push_back(p);
  return out;
}

template <typename T>
std::vector<int> predict_labels(const Tensor<T>& p) {
  if (p.ndim() != 2) throw Error(ErrorCode::kShapeMismatch, "predict_labels: expected [N, d_label]");
  const std::size_t n = p.dim(0), l = p.dim(1);
  std::vector<int> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < l; ++k)
      if (p[i * l + k] > p[i * l + best]) best = k;
    out[i] = static_cast<int>(best);
  }
  return out;
}

template <typename T>
Tensor<T> loss_bg(const Tensor<T>& p, const std::vector<int>& instances, const Mask& mask) {
  std::vector<std::uint8_t> flags(instances.size());
  for (std::size_t i = 0; i < instances.size(); ++i) flags[i] = instances[i] < 0 ? 1 : 0;
  return nn::loss_background(p, flags, mask);
}

template <typename T>
Tensor<T> loss_pair(const Tensor<T>& p, const std::vector<int>& instances, const Mask& mask, T margin,
                    bool detach_reference) {
  return nn::loss_pairwise(p, instances, mask, margin, detach_reference);
}

template <typename T>
Tensor<T> loss_clustering(const Tensor<T>& p, const std::vector<int>& instances, const Mask& mask, T margin,
                          bool detach_reference) {
  return nn::add(loss_pair(p, instances, mask, margin, detach_reference), loss_bg(p, instances, mask));
}

Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_tilt_deg) {
  std::uniform_real_distribution<double> yaw(0.0, 2.0 * M_PI);
  const double tilt = max_tilt_deg * M_PI / 180.0;
  std::uniform_real_distribution<double> small(-tilt, tilt);
  const double a = yaw(rng), b = small(rng), c = small(rng);
  return (Eigen::AngleAxisd(a, Eigen::Vector3d::UnitY()) * Eigen::AngleAxisd(b, Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(c, Eigen::Vector3d::UnitZ()))
      .toRotationMatrix();
}

LineFrame rotate_frame(const LineFrame& frame, const Eigen::Matrix3d& r) {
  LineFrame out = frame;
  for (auto& rec : out.lines) {
    rec.line.start = r * rec.line.start;
    rec.line.end = r * rec.line.end;
    rec.line.normal_left = r * rec.line.normal_left;
    rec.line.normal_right = r * rec.line.normal_right;
  }
  return out;
}

VisualCache encode_dataset(ClusterNet<float>& net, const LineDataset& data) {
  return encode_dataset(net.visual_encoder(), data);
}

VisualCache encode_dataset(const nn::VisualEncoder<float>& encoder, const LineDataset& data) {
  nn::NoGradGuard guard;
  VisualCache cache;
  cache.dim = encoder.shape.d_visual;
  constexpr std::size_t kChunk = 64;
  for (const auto& frame : data) {
    std::vector<float> enc;
    enc.reserve(frame.lines.size() * cache.dim);
    for (std::size_t start = 0; start < frame.lines.size(); start += kChunk) {
      std::vector<std::size_t> rows;
      for (std::size_t i = start; i < std::min(frame.lines.size(), start + kChunk); ++i) rows.push_back(i);
      const Tensor<float> e = encoder(image_tensor(frame, rows));
      enc.insert(enc.end(), e.values().begin(), e.values().end());
    }
    cache.frames.push_back(std::move(enc));
  }
  const Tensor<float> black({1, 3, kVirtualHeight, kVirtualWidth}, 0.0f);
  cache.black = encoder(black).values();
  return cache;
}

nlohmann::json ClusterEpochMetrics::to_json() const {
  return {{"epoch", epoch}, {"loss", loss}, {"loss_bg", loss_bg}, {"loss_pair", loss_pair}, {"val_nmi", val_nmi}, {"lr", lr}};
}

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t cap, std::mt19937_64& rng) {
  std::vector<std::size_t> rows(n);
  std::iota(rows.begin(), rows.end(), 0);
  if (n <= cap) return rows;
  // Partial Fisher-Yates, then restore index order.
  for (std::size_t i = 0; i < cap; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(rows[i], rows[pick(rng)]);
  }
  rows.resize(cap);
  std::sort(rows.begin(), rows.end());
  return rows;
}

Tensor<float> visual_rows(const VisualCache& cache, std::size_t frame, const std::vector<std::size_t>& rows,
                          bool blackout) {
  Tensor<float> t({rows.size(), cache.dim});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const float* src = blackout ? cache.black.data() : cache.frames.at(frame).data() + rows[i] * cache.dim;
    std::copy_n(src, cache.dim, t.data() + i * cache.dim);
  }
  return t;
}

namespace {

std::vector<int> instances_of(const LineFrame& frame, const std::vector<std::size_t>& rows) {
  std::vector<int> out;
  for (std::size_t r : rows) out.push_back(frame.lines[r].instance);
  return out;
}

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

}  // namespace

ClusterTrainState make_cluster_train_state(ClusterNet<float>& net) {
  ClusterTrainState s;
  s.net = &net;
  s.adam = nn::Adam<float>(net.head_parameters(), {.lr = net.config().lr});
  return s;
}

std::vector<ClusterEpochMetrics> train_clustering(ClusterTrainState& state, const LineDataset& train,
                                                  const LineDataset& validation, const ClusterTrainOptions& opts) {
  ClusterNet<float>& net = *state.net;
  const ClusterNetConfig& cfg = net.config();
  std::size_t usable = 0;
  for (const auto& f : train) usable += f.lines.size() >= 2 ? 1 : 0;
  if (usable == 0) throw Error(ErrorCode::kEmptyInput, "train_clustering: no frame with at least two lines");
  const VisualCache cache = encode_dataset(net, train);
  const VisualCache val_cache = encode_dataset(net, validation);
  const int epochs = opts.epochs >= 0 ? opts.epochs : cfg.epochs;
  std::vector<ClusterEpochMetrics> log;
  for (int epoch = state.next_epoch; epoch < epochs; ++epoch) {
    std::mt19937_64 rng = epoch_rng(opts.seed, epoch, 1);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    ClusterEpochMetrics m;
    m.epoch = epoch;
    m.lr = state.adam.lr();
    std::size_t steps = 0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (std::size_t fi : order) {
      const LineFrame& frame = train[fi];
      if (frame.lines.size() < 2) continue;
      const auto rows = sample_rows(frame.lines.size(), cfg.max_lines_train, rng);
      Eigen::Matrix3d rot = random_rotation(rng, cfg.max_tilt_deg);
      bool blackout = unit(rng) < cfg.blackout_probability;
      if (!cfg.augment) {
        rot.setIdentity();
        blackout = false;
      }
      const Tensor<float> geometry = geometry_tensor(rotate_frame(frame, rot), rows);
      const Tensor<float> visual = visual_rows(cache, fi, rows, blackout);
      const auto instances = instances_of(frame, rows);
      const Tensor<float> p = net.forward(geometry, visual, {}, true);
      const Tensor<float> lp = loss_pair(p, instances, {}, static_cast<float>(cfg.margin), cfg.detach_reference);
      const Tensor<float> lb = loss_bg(p, instances);
      const Tensor<float> loss = nn::add(lp, lb);
      nn::backward(loss);
      state.adam.step();
      state.adam.zero_grad();
      m.loss += loss.item();
      m.loss_bg += lb.item();
      m.loss_pair += lp.item();
      ++steps;
    }
    m.loss /= static_cast<double>(steps);
    m.loss_bg /= static_cast<double>(steps);
    m.loss_pair /= static_cast<double>(steps);
    state.adam.set_lr(state.adam.lr() * cfg.lr_decay);
    state.next_epoch = epoch + 1;
    m.val_nmi = validation.empty() ? 0.0 : mean_nmi(net, validation, &val_cache, opts.seed);
    log.push_back(m);
    if (opts.on_epoch) opts.on_epoch(m, state);
  }
  return log;
}

double pretrain_visual(ClusterNet<float>& net, const LineDataset& train, std::uint64_t seed) {
  const ClusterNetConfig& cfg = net.config();
  nn::Rng init(seed ^ 0x5bd1e995ULL);
  nn::Linear<float> head(cfg.d_visual, cfg.d_label, init);
  nn::ParamList<float> params = net.visual_parameters();
  head.collect("pretrain_head", params);
  nn::Adam<float> adam(params, {.lr = cfg.pretrain_lr});
  constexpr std::size_t kLinesPerFrame = 32;
  double last = 0.0;
  for (int epoch = 0; epoch < cfg.pretrain_epochs; ++epoch) {
    std::mt19937_64 rng = epoch_rng(seed, epoch, 2);
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t fi : order) {
      const LineFrame& frame = train[fi];
      if (frame.lines.size() < 2) continue;
      const auto rows = sample_rows(frame.lines.size(), kLinesPerFrame, rng);
      const Tensor<float> p = nn::softmax_rows(head(net.encode_visual(image_tensor(frame, rows))));
      const Tensor<float> loss =
          loss_clustering(p, instances_of(frame, rows), {}, static_cast<float>(cfg.margin), cfg.detach_reference);
      nn::backward(loss);
      adam.step();
      adam.zero_grad();
      total += loss.item();
      ++steps;
    }
    last = steps ? total / static_cast<double>(steps) : 0.0;
  }
  return last;
}

FramePrediction predict_frame(ClusterNet<float>& net, const LineFrame& frame, const VisualCache* cache,
                              std::size_t frame_index, std::uint64_t seed) {
  nn::NoGradGuard guard;
  FramePrediction out;
  if (frame.lines.empty()) return out;
  std::mt19937_64 rng = epoch_rng(seed, static_cast<int>(frame_index), 3);
  out.rows = sample_rows(frame.lines.size(), net.config().max_lines_eval, rng);
  const Tensor<float> visual =
      cache ? visual_rows(*cache, frame_index, out.rows, false) : net.encode_visual(image_tensor(frame, out.rows));
  const Tensor<float> p = net.forward(geometry_tensor(frame, out.rows), visual, {}, false);
  out.labels = predict_labels(p);
  return out;
}

double mean_nmi(ClusterNet<float>& net, const LineDataset& data, const VisualCache* cache, std::uint64_t seed) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].lines.empty()) continue;
    const FramePrediction pred = predict_frame(net, data[i], cache, i, seed);
    total += nmi(pred.labels, instances_of(data[i], pred.rows));
    ++count;
  }
  return count ? total / static_cast<double>(count) : 0.0;
}

void save_cluster_checkpoint(const std::filesystem::path& path, ClusterNet<float>& net, ClusterTrainState* state) {
  nn::Checkpoint ck;
  ck.metadata["kind"] = "cluster";
  ck.metadata["config"] = net.config().to_json();
  ck.put_params(net.parameters());
  if (state) {
    ck.metadata["next_epoch"] = state->next_epoch;
    ck.put_optimizer(state->adam, "adam");
  }
  ck.save(path);
}

std::unique_ptr<ClusterNet<float>> load_cluster_checkpoint(const std::filesystem::path& path,
                                                           const std::optional<ClusterNetConfig>& expected,
                                                           nn::Checkpoint* raw) {
  nn::Checkpoint ck = nn::Checkpoint::load(path);
  if (ck.metadata.value("kind", "") != "cluster")
    throw Error(ErrorCode::kShapeMismatch, "checkpoint " + path.string() + " is not a clustering checkpoint");
  const ClusterNetConfig cfg = ClusterNetConfig::from_json(ck.metadata.at("config"));
  if (expected) {
    // Architecture fields must agree; schedule fields may differ.
    for (const char* key : {"d_geom", "d_visual", "d_model", "d_h", "n_layers", "h_add", "h_dot", "d_qk", "d_ff",
                            "d_label", "conv_channels1", "conv_channels2"})
      if (expected->to_json().at(key) != cfg.to_json().at(key))
        throw Error(ErrorCode::kShapeMismatch, std::string("checkpoint config differs in ") + key);
  }
  auto net = std::make_unique<ClusterNet<float>>(expected ? *expected : cfg, 0);
  auto params = net->parameters();
  ck.load_params(params);
  if (raw) *raw = std::move(ck);
  return net;
}

template class ClusterNet<float>;
template class ClusterNet<double>;

#define LCD_INSTANTIATE_CLUSTER(T)                                                                         \
  template std::vector<int> predict_labels(const Tensor<T>&);                                              \
  template Tensor<T> loss_bg(const Tensor<T>&, const std::vector<int>&, const Mask&);                      \
  template Tensor<T> loss_pair(const Tensor<T>&, const std::vector<int>&, const Mask&, T, bool);           \
  template Tensor<T> loss_clustering(const Tensor<T>&, const std::vector<int>&, const Mask&, T, bool);

LCD_INSTANTIATE_CLUSTER(float)
LCD_INSTANTIATE_CLUSTER(double)

}  // namespace lcd
