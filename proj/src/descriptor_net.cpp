#include "lcd/descriptor_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "lcd/config.hpp"

namespace lcd {

using nn::Mask;
using nn::Tensor;

void DescriptorConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::kConfig, "descriptor config: " + m); };
  if (d_geom + d_visual != d_model) fail("d_geom + d_visual must equal d_model");
  if (layer_h_dot + layer_h_add == 0 || global_h_dot + global_h_add == 0) fail("attention needs at least one head");
  if (d_qk == 0 || global_d_qk == 0 || d_ff == 0 || d_global == 0 || d_fc == 0 || d_descriptor == 0)
    fail("layer widths must be positive");
  if (!(margin > 0) || !(lr > 0) || !(lr_decay > 0) || epochs < 0) fail("bad training values");
  if (same_semantic_probability < 0 || same_semantic_probability > 1) fail("same-semantic probability outside [0,1]");
  if (triplets_per_step == 0 || steps_per_epoch == 0 || max_lines == 0) fail("batch sizes must be positive");
  if (blackout_probability < 0 || blackout_probability > 1) fail("blackout probability outside [0,1]");
}

nlohmann::json DescriptorConfig::to_json() const {
  return {{"d_geom", d_geom},
          {"d_visual", d_visual},
          {"d_model", d_model},
          {"n_layers", n_layers},
          {"layer_h_dot", layer_h_dot},
          {"layer_h_add", layer_h_add},
          {"d_qk", d_qk},
          {"d_ff", d_ff},
          {"global_h_dot", global_h_dot},
          {"global_h_add", global_h_add},
          {"global_d_qk", global_d_qk},
          {"d_global", d_global},
          {"d_fc", d_fc},
          {"d_descriptor", d_descriptor},
          {"margin", margin},
          {"lr", lr},
          {"lr_decay", lr_decay},
          {"epochs", epochs},
          {"same_semantic_probability", same_semantic_probability},
          {"triplets_per_step", triplets_per_step},
          {"steps_per_epoch", steps_per_epoch},
          {"validation_triplets", validation_triplets},
          {"max_lines", max_lines},
          {"augment", augment},
          {"blackout_probability", blackout_probability},
          {"max_tilt_deg", max_tilt_deg}};
}

DescriptorConfig DescriptorConfig::from_json(const nlohmann::json& j, const std::string& path) {
  DescriptorConfig c;
  StrictReader r(j, path);
  r.read("d_geom", c.d_geom);
  r.read("d_visual", c.d_visual);
  r.read("d_model", c.d_model);
  r.read("n_layers", c.n_layers);
  r.read("layer_h_dot", c.layer_h_dot);
  r.read("layer_h_add", c.layer_h_add);
  r.read("d_qk", c.d_qk);
  r.read("d_ff", c.d_ff);
  r.read("global_h_dot", c.global_h_dot);
  r.read("global_h_add", c.global_h_add);
  r.read("global_d_qk", c.global_d_qk);
  r.read("d_global", c.d_global);
  r.read("d_fc", c.d_fc);
  r.read("d_descriptor", c.d_descriptor);
  r.read("margin", c.margin);
  r.read("lr", c.lr);
  r.read("lr_decay", c.lr_decay);
  r.read("epochs", c.epochs);
  r.read("same_semantic_probability", c.same_semantic_probability);
  r.read("triplets_per_step", c.triplets_per_step);
  r.read("steps_per_epoch", c.steps_per_epoch);
  r.read("validation_triplets", c.validation_triplets);
  r.read("max_lines", c.max_lines);
  r.read("augment", c.augment);
  r.read("blackout_probability", c.blackout_probability);
  r.read("max_tilt_deg", c.max_tilt_deg);
  r.finish();
  c.validate();
  return c;
}

template <typename T>
DescriptorNet<T>::DescriptorNet(const DescriptorConfig& cfg, const nn::VisualEncoderShape& visual, std::uint64_t seed)
    : cfg_(cfg) {
  cfg_.validate();
  if (visual.d_visual != cfg_.d_visual)
    throw Error(ErrorCode::kShapeMismatch, "descriptor: visual encoder width differs from d_visual");
  nn::Rng rng(seed);
  visual_ = nn::VisualEncoder<T>(visual, rng);
  geom_embed_ = nn::Linear<T>(kGeomDim, cfg_.d_geom, rng);
  for (std::size_t i = 0; i < cfg_.n_layers; ++i) layers_.emplace_back(cfg_.layer_shape(), cfg_.d_ff, false, rng);
  const nn::AttentionShape gs = cfg_.global_shape();
  global1_ = nn::GlobalAttention<T>(gs, rng);
  const std::size_t summary = global1_.out_dim();
  queries1_ = nn::glorot<T>({1, summary}, gs.d_qk, gs.d_qk, rng);
  to_global_ = nn::Linear<T>(summary, cfg_.d_global, rng);
  fc1_ = nn::FeedForward<T>(cfg_.d_global, cfg_.d_fc, rng);
  query_gen_ = nn::Linear<T>(cfg_.d_global, summary, rng);
  global2_ = nn::GlobalAttention<T>(gs, rng);
  fc2_ = nn::FeedForward<T>(summary, cfg_.d_fc, rng);
  head_ = nn::Linear<T>(summary, cfg_.d_descriptor, rng);
}

template <typename T>
Tensor<T> DescriptorNet<T>::line_features(const Tensor<T>& geometry, const Tensor<T>& visual, const Mask& mask) {
  if (geometry.ndim() != 2 || geometry.dim(1) != static_cast<std::size_t>(kGeomDim))
    throw Error(ErrorCode::kShapeMismatch, "descriptor: geometry must be [N,15]");
  if (visual.ndim() != 2 || visual.dim(0) != geometry.dim(0) || visual.dim(1) != cfg_.d_visual)
    throw Error(ErrorCode::kShapeMismatch, "descriptor: visual encodings must be [N,d_visual]");
  const std::size_t n = geometry.dim(0);
  const std::size_t valid = mask.empty() ? n : static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
  if (valid == 0) throw Error(ErrorCode::kEmptyInput, "descriptor: empty cluster");
  Tensor<T> x = nn::mask_rows(nn::concat_cols<T>({nn::leaky_relu(geom_embed_(geometry)), visual}), mask);
  for (auto& layer : layers_) x = layer(x, mask, false, true);
  return x;
}

template <typename T>
Tensor<T> DescriptorNet<T>::first_summary(const Tensor<T>& geometry, const Tensor<T>& visual, const Mask& mask) {
  return global1_(line_features(geometry, visual, mask), queries1_, mask);
}

template <typename T>
Tensor<T> DescriptorNet<T>::describe(const Tensor<T>& geometry, const Tensor<T>& visual, const Mask& mask) {
  const Tensor<T> x = line_features(geometry, visual, mask);
  const Tensor<T> g = nn::residual(to_global_(global1_(x, queries1_, mask)), [&](const Tensor<T>& in) { return fc1_(in); });
  const Tensor<T> s = global2_(x, query_gen_(g), mask);
  const Tensor<T> h = nn::residual(s, [&](const Tensor<T>& in) { return fc2_(in); });
  return nn::l2_normalize_rows(head_(h));
}

template <typename T>
nn::ParamList<T> DescriptorNet<T>::visual_parameters() const {
  nn::ParamList<T> out;
  visual_.collect("visual", out);
  return out;
}

template <typename T>
nn::ParamList<T> DescriptorNet<T>::trainable_parameters() const {
  nn::ParamList<T> out;
  geom_embed_.collect("geom_embed", out);
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("layer" + std::to_string(i), out);
  global1_.collect("global1", out);
  out.push_back({"global1.queries", queries1_, true});
  to_global_.collect("to_global", out);
  fc1_.collect("fc1", out);
  query_gen_.collect("query_gen", out);
  global2_.collect("global2", out);
  fc2_.collect("fc2", out);
  head_.collect("head", out);
  return out;
}

template <typename T>
nn::ParamList<T> DescriptorNet<T>::parameters() const {
  nn::ParamList<T> out = visual_parameters();
  for (auto& p : trainable_parameters()) out.push_back(p);
  return out;
}

template <typename T>
Tensor<T> triplet_loss(const Tensor<T>& a, const Tensor<T>& p, const Tensor<T>& n, T margin) {
  return nn::relu(nn::add_scalar(nn::sub(nn::distance(a, p), nn::distance(a, n)), margin));
}

std::vector<InstanceCluster> instance_clusters(const LineDataset& data, bool include_background) {
  std::vector<InstanceCluster> out;
  for (std::size_t f = 0; f < data.size(); ++f) {
    std::map<int, std::size_t> slot;
    for (std::size_t r = 0; r < data[f].lines.size(); ++r) {
      const LineRecord& rec = data[f].lines[r];
      if (rec.instance == kBackgroundId && !include_background) continue;
      auto it = slot.find(rec.instance);
      if (it == slot.end()) {
        it = slot.emplace(rec.instance, out.size()).first;
        out.push_back({f, data[f].scene_id, rec.instance, rec.semantic, {}});
      }
      out[it->second].rows.push_back(r);
    }
  }
  return out;
}

TripletMiner::TripletMiner(const std::vector<InstanceCluster>& clusters, double same_semantic_probability)
    : clusters_(&clusters), p_same_(same_semantic_probability) {
  std::set<int> scenes;
  for (std::size_t i = 0; i < clusters.size(); ++i) {
    const InstanceCluster& c = clusters[i];
    if (c.rows.empty()) continue;
    by_instance_[{c.scene_id, c.instance}].push_back(i);
    by_semantic_[c.semantic].push_back(i);
    scenes.insert(c.scene_id);
  }
  for (const auto& [key, members] : by_instance_) {
    std::set<std::size_t> frames;
    for (std::size_t m : members) frames.insert(clusters[m].frame);
    if (frames.size() >= 2) anchors_.insert(anchors_.end(), members.begin(), members.end());
  }
  std::sort(anchors_.begin(), anchors_.end());
  if (anchors_.empty()) throw Error(ErrorCode::kEmptyInput, "triplet mining: no instance appears in two frames");
  if (scenes.size() < 2) throw Error(ErrorCode::kEmptyInput, "triplet mining: negatives need a second scene");
}

Triplet TripletMiner::next(std::mt19937_64& rng) const {
  const auto& cl = *clusters_;
  auto pick = [&rng](const std::vector<std::size_t>& v) {
    std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
    return v[d(rng)];
  };
  Triplet t;
  t.anchor = pick(anchors_);
  const InstanceCluster& a = cl[t.anchor];
  std::vector<std::size_t> positives;
  for (std::size_t m : by_instance_.at({a.scene_id, a.instance}))
    if (cl[m].frame != a.frame) positives.push_back(m);
  t.positive = pick(positives);

  // Negatives come from other scenes; the class constraint falls back to any class when empty.
  std::vector<std::size_t> same, other;
  for (std::size_t i = 0; i < cl.size(); ++i) {
    if (cl[i].rows.empty() || cl[i].scene_id == a.scene_id) continue;
    (cl[i].semantic == a.semantic ? same : other).push_back(i);
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool want_same = unit(rng) < p_same_;
  if (want_same && !same.empty()) {
    t.negative = pick(same);
    t.same_semantic_draw = true;
  } else if (!want_same && !other.empty()) {
    t.negative = pick(other);
  } else {
    std::vector<std::size_t> any = same;
    any.insert(any.end(), other.begin(), other.end());
    std::sort(any.begin(), any.end());
    t.negative = pick(any);
    t.same_semantic_draw = cl[t.negative].semantic == a.semantic;
  }
  return t;
}

std::vector<Triplet> mine_triplets(const std::vector<InstanceCluster>& clusters, std::size_t count, std::uint64_t seed,
                                   double same_semantic_probability) {
  const TripletMiner miner(clusters, same_semantic_probability);
  std::mt19937_64 rng(seed);
  std::vector<Triplet> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(miner.next(rng));
  return out;
}

nlohmann::json DescriptorEpochMetrics::to_json() const {
  return {{"epoch", epoch}, {"loss", loss}, {"val_accuracy", val_accuracy}, {"lr", lr}};
}

DescriptorTrainState make_descriptor_train_state(DescriptorNet<float>& net) {
  DescriptorTrainState s;
  s.net = &net;
  s.adam = nn::Adam<float>(net.trainable_parameters(), {.lr = net.config().lr});
  return s;
}

void adopt_visual_encoder(DescriptorNet<float>& net, ClusterNet<float>& source) {
  const auto from = source.visual_parameters();
  auto to = net.visual_parameters();
  if (from.size() != to.size()) throw Error(ErrorCode::kShapeMismatch, "descriptor: visual encoder layouts differ");
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].tensor.shape() != to[i].tensor.shape())
      throw Error(ErrorCode::kShapeMismatch, "descriptor: visual encoder shapes differ at " + from[i].name);
    to[i].tensor.values() = from[i].tensor.values();
  }
}

namespace {

std::mt19937_64 epoch_rng(std::uint64_t seed, int epoch, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(stream)};
  return std::mt19937_64(seq);
}

struct ClusterInput {
  Tensor<float> geometry, visual;
};

ClusterInput cluster_input(const LineDataset& data, const VisualCache& cache, const InstanceCluster& c,
                           std::size_t max_lines, std::mt19937_64* augment, const DescriptorConfig& cfg) {
  std::vector<std::size_t> rows = c.rows;
  if (rows.size() > max_lines) {
    std::mt19937_64 fixed(c.frame * 7919 + static_cast<std::size_t>(c.instance + 1));
    std::mt19937_64& rng = augment ? *augment : fixed;
    const auto pick = sample_rows(rows.size(), max_lines, rng);
    std::vector<std::size_t> kept;
    for (std::size_t i : pick) kept.push_back(rows[i]);
    rows = std::move(kept);
  }
  const LineFrame& frame = data[c.frame];
  if (!augment) return {geometry_tensor(frame, rows), visual_rows(cache, c.frame, rows, false)};
  const Eigen::Matrix3d rot = random_rotation(*augment, cfg.max_tilt_deg);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool blackout = unit(*augment) < cfg.blackout_probability;
  return {geometry_tensor(rotate_frame(frame, rot), rows), visual_rows(cache, c.frame, rows, blackout)};
}

}  // namespace

double triplet_accuracy(DescriptorNet<float>& net, const LineDataset& data, const VisualCache& cache,
                        const std::vector<InstanceCluster>& clusters, const std::vector<Triplet>& triplets) {
  if (triplets.empty()) return 0.0;
  nn::NoGradGuard guard;
  std::map<std::size_t, std::vector<float>> memo;
  auto embed = [&](std::size_t i) -> const std::vector<float>& {
    auto it = memo.find(i);
    if (it == memo.end()) {
      const ClusterInput in = cluster_input(data, cache, clusters[i], net.config().max_lines, nullptr, net.config());
      it = memo.emplace(i, net.describe(in.geometry, in.visual).values()).first;
    }
    return it->second;
  };
  auto dist = [](const std::vector<float>& x, const std::vector<float>& y) {
    double s = 0;
    for (std::size_t k = 0; k < x.size(); ++k) s += (double(x[k]) - y[k]) * (double(x[k]) - y[k]);
    return std::sqrt(s);
  };
  std::size_t correct = 0;
  for (const Triplet& t : triplets) {
    const auto& a = embed(t.anchor);
    correct += dist(a, embed(t.positive)) < dist(a, embed(t.negative)) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(triplets.size());
}

std::vector<DescriptorEpochMetrics> train_descriptor(DescriptorTrainState& state, const LineDataset& train,
                                                     const LineDataset& validation, const DescriptorTrainOptions& opts) {
  DescriptorNet<float>& net = *state.net;
  const DescriptorConfig& cfg = net.config();
  const auto clusters = instance_clusters(train);
  const TripletMiner miner(clusters, cfg.same_semantic_probability);
  const VisualCache cache = encode_dataset(net.visual_encoder(), train);

  std::vector<InstanceCluster> val_clusters;
  std::vector<Triplet> val_triplets;
  VisualCache val_cache;
  if (!validation.empty()) {
    val_clusters = instance_clusters(validation);
    val_triplets = mine_triplets(val_clusters, cfg.validation_triplets, opts.seed ^ 0x9e3779b97f4a7c15ULL,
                                 cfg.same_semantic_probability);
    val_cache = encode_dataset(net.visual_encoder(), validation);
  }

  const int epochs = opts.epochs >= 0 ? opts.epochs : cfg.epochs;
  std::vector<DescriptorEpochMetrics> log;
  for (int epoch = state.next_epoch; epoch < epochs; ++epoch) {
    std::mt19937_64 rng = epoch_rng(opts.seed, epoch, 4);
    DescriptorEpochMetrics m;
    m.epoch = epoch;
    m.lr = state.adam.lr();
    for (std::size_t step = 0; step < cfg.steps_per_epoch; ++step) {
      std::vector<Tensor<float>> losses;
      for (std::size_t b = 0; b < cfg.triplets_per_step; ++b) {
        const Triplet t = miner.next(rng);
        std::mt19937_64* aug = cfg.augment ? &rng : nullptr;
        const ClusterInput a = cluster_input(train, cache, clusters[t.anchor], cfg.max_lines, aug, cfg);
        const ClusterInput p = cluster_input(train, cache, clusters[t.positive], cfg.max_lines, aug, cfg);
        const ClusterInput n = cluster_input(train, cache, clusters[t.negative], cfg.max_lines, aug, cfg);
        losses.push_back(triplet_loss(net.describe(a.geometry, a.visual), net.describe(p.geometry, p.visual),
                                      net.describe(n.geometry, n.visual), static_cast<float>(cfg.margin)));
      }
      Tensor<float> total = losses[0];
      for (std::size_t b = 1; b < losses.size(); ++b) total = nn::add(total, losses[b]);
      const Tensor<float> loss = nn::scale(total, 1.0f / static_cast<float>(losses.size()));
      nn::backward(loss);
      state.adam.step();
      state.adam.zero_grad();
      m.loss += loss.item();
    }
    m.loss /= static_cast<double>(cfg.steps_per_epoch);
    state.adam.set_lr(state.adam.lr() * cfg.lr_decay);
    state.next_epoch = epoch + 1;
    m.val_accuracy = val_triplets.empty() ? 0.0 : triplet_accuracy(net, validation, val_cache, val_clusters, val_triplets);
    log.push_back(m);
    if (opts.on_epoch) opts.on_epoch(m, state);
  }
  return log;
}

std::vector<double> describe_rows(DescriptorNet<float>& net, const LineFrame& frame, const VisualCache* cache,
                                  std::size_t frame_index, const std::vector<std::size_t>& rows) {
  nn::NoGradGuard guard;
  const Tensor<float> visual =
      cache ? visual_rows(*cache, frame_index, rows, false) : net.encode_visual(image_tensor(frame, rows));
  const Tensor<float> e = net.describe(geometry_tensor(frame, rows), visual);
  return {e.values().begin(), e.values().end()};
}

std::vector<ClusterEmbedding> describe_frame(DescriptorNet<float>& net, const LineFrame& frame, const VisualCache* cache,
                                             std::size_t frame_index, const std::vector<std::size_t>& rows,
                                             const std::vector<int>& labels) {
  if (rows.size() != labels.size()) throw Error(ErrorCode::kShapeMismatch, "describe_frame: one label per row");
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < rows.size(); ++i) groups[labels[i]].push_back(rows[i]);
  std::vector<ClusterEmbedding> out;
  for (const auto& [label, members] : groups) {
    ClusterEmbedding e;
    e.values = describe_rows(net, frame, cache, frame_index, members);
    e.scene_id = frame.scene_id;
    e.frame_id = frame.frame_id;
    e.cluster_id = label;
    e.line_count = members.size();
    out.push_back(std::move(e));
  }
  return out;
}

namespace {
constexpr char kEmbeddingMagic[8] = {'L', 'C', 'D', 'E', 'M', 'B', 'E', 'D'};
constexpr std::uint32_t kEmbeddingVersion = 1;

template <typename V>
void put(std::ostream& os, V v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V get(std::istream& is) {
  V v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw Error(ErrorCode::kParse, "embeddings: truncated file");
  return v;
}
}  // namespace

void write_embeddings(const std::filesystem::path& path, const std::vector<ClusterEmbedding>& embeddings) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  const std::uint32_t dim = embeddings.empty() ? 0 : static_cast<std::uint32_t>(embeddings[0].values.size());
  os.write(kEmbeddingMagic, sizeof kEmbeddingMagic);
  put(os, kEmbeddingVersion);
  put(os, dim);
  put(os, static_cast<std::uint64_t>(embeddings.size()));
  for (const auto& e : embeddings) {
    if (e.values.size() != dim) throw Error(ErrorCode::kShapeMismatch, "embeddings: sizes differ");
    put(os, static_cast<std::int32_t>(e.scene_id));
    put(os, static_cast<std::int32_t>(e.frame_id));
    put(os, static_cast<std::int32_t>(e.cluster_id));
    put(os, static_cast<std::uint32_t>(e.line_count));
    for (double v : e.values) put(os, v);
  }
  if (!os) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

std::vector<ClusterEmbedding> read_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::kIo, "cannot read " + path.string());
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, kEmbeddingMagic, 8) != 0)
    throw Error(ErrorCode::kParse, path.string() + " is not an embedding dump");
  if (get<std::uint32_t>(is) != kEmbeddingVersion)
    throw Error(ErrorCode::kVersionMismatch, "unsupported embedding dump version");
  const auto dim = get<std::uint32_t>(is);
  const auto count = get<std::uint64_t>(is);
  std::vector<ClusterEmbedding> out(count);
  for (auto& e : out) {
    e.scene_id = get<std::int32_t>(is);
    e.frame_id = get<std::int32_t>(is);
    e.cluster_id = get<std::int32_t>(is);
    e.line_count = get<std::uint32_t>(is);
    e.values.resize(dim);
    for (auto& v : e.values) v = get<double>(is);
  }
  return out;
}

void save_descriptor_checkpoint(const std::filesystem::path& path, DescriptorNet<float>& net,
                                DescriptorTrainState* state) {
  nn::Checkpoint ck;
  ck.metadata["kind"] = "descriptor";
  ck.metadata["config"] = net.config().to_json();
  const nn::VisualEncoderShape& v = net.visual_encoder().shape;
  ck.metadata["visual"] = {{"conv_channels1", v.channels1}, {"conv_channels2", v.channels2}, {"d_h", v.d_h},
                           {"d_visual", v.d_visual}};
  ck.put_params(net.parameters());
  if (state) {
    ck.metadata["next_epoch"] = state->next_epoch;
    ck.put_optimizer(state->adam, "adam");
  }
  ck.save(path);
}

std::unique_ptr<DescriptorNet<float>> load_descriptor_checkpoint(const std::filesystem::path& path,
                                                                 const std::optional<DescriptorConfig>& expected,
                                                                 nn::Checkpoint* raw) {
  nn::Checkpoint ck = nn::Checkpoint::load(path);
  if (ck.metadata.value("kind", "") != "descriptor")
    throw Error(ErrorCode::kShapeMismatch, "checkpoint " + path.string() + " is not a descriptor checkpoint");
  const DescriptorConfig cfg = DescriptorConfig::from_json(ck.metadata.at("config"));
  if (expected) {
    for (const char* key : {"d_geom", "d_visual", "d_model", "n_layers", "layer_h_dot", "layer_h_add", "d_qk", "d_ff",
                            "global_h_dot", "global_h_add", "global_d_qk", "d_global", "d_fc", "d_descriptor"})
      if (expected->to_json().at(key) != cfg.to_json().at(key))
        throw Error(ErrorCode::kShapeMismatch, std::string("checkpoint config differs in ") + key);
  }
  const auto& v = ck.metadata.at("visual");
  nn::VisualEncoderShape shape{v.at("conv_channels1").get<std::size_t>(), v.at("conv_channels2").get<std::size_t>(),
                               v.at("d_h").get<std::size_t>(), v.at("d_visual").get<std::size_t>()};
  auto net = std::make_unique<DescriptorNet<float>>(expected ? *expected : cfg, shape, 0);
  auto params = net->parameters();
  ck.load_params(params);
  if (raw) *raw = std::move(ck);
  return net;
}

template class DescriptorNet<float>;
template class DescriptorNet<double>;
template Tensor<float> triplet_loss(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, float);
template Tensor<double> triplet_loss(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, double);

}  // namespace lcd
