#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <vector>

#include "json.hpp"
#include "lcd/cluster_net.hpp"
#include "lcd/line_dataset.hpp"
#include "lcd/nn/adam.hpp"
#include "lcd/nn/layers.hpp"
#include "lcd/retrieval_eval.hpp"

namespace lcd {

struct DescriptorConfig {
  std::size_t d_geom = 384;
  std::size_t d_visual = 128;
  std::size_t d_model = 512;
  std::size_t n_layers = 5;
  std::size_t layer_h_dot = 4;
  std::size_t layer_h_add = 4;
  std::size_t d_qk = 64;
  std::size_t d_ff = 2048;
  std::size_t global_h_dot = 8;
  std::size_t global_h_add = 8;
  std::size_t global_d_qk = 64;
  std::size_t d_global = 1024;
  std::size_t d_fc = 4096;
  std::size_t d_descriptor = 128;
  double margin = 0.6;
  double lr = 1e-4;
  double lr_decay = 0.96;
  int epochs = 50;
  double same_semantic_probability = 0.5;
  std::size_t triplets_per_step = 32;
  std::size_t steps_per_epoch = 50;
  std::size_t validation_triplets = 200;
  std::size_t max_lines = 220;
  bool augment = true;
  double blackout_probability = 0.2;
  double max_tilt_deg = 10.0;

  void validate() const;
  nlohmann::json to_json() const;
  static DescriptorConfig from_json(const nlohmann::json& j, const std::string& path = "descriptor");
  nn::AttentionShape layer_shape() const { return {d_model, d_qk, layer_h_dot, layer_h_add}; }
  nn::AttentionShape global_shape() const { return {d_model, global_d_qk, global_h_dot, global_h_add}; }
};

/// Maps a set of lines to a unit vector. The visual encoder is copied from a clustering network
/// and never trained here.
template <typename T>
class DescriptorNet {
 public:
  DescriptorNet(const DescriptorConfig& cfg, const nn::VisualEncoderShape& visual, std::uint64_t seed);

  const DescriptorConfig& config() const { return cfg_; }

  /// geometry [N,15], visual [N,d_visual] -> [1, d_descriptor], unit norm.
  nn::Tensor<T> describe(const nn::Tensor<T>& geometry, const nn::Tensor<T>& visual, const nn::Mask& mask = {});

  /// Output of the first global module, [1, heads * d_qk]; exposed for inspection.
  nn::Tensor<T> first_summary(const nn::Tensor<T>& geometry, const nn::Tensor<T>& visual, const nn::Mask& mask = {});

  nn::Tensor<T> encode_visual(const nn::Tensor<T>& images) const { return visual_(images); }

  nn::ParamList<T> parameters() const;           // everything
  nn::ParamList<T> trainable_parameters() const;  // everything except the visual encoder
  nn::ParamList<T> visual_parameters() const;
  nn::VisualEncoder<T>& visual_encoder() { return visual_; }

 private:
  nn::Tensor<T> line_features(const nn::Tensor<T>& geometry, const nn::Tensor<T>& visual, const nn::Mask& mask);

  DescriptorConfig cfg_;
  nn::VisualEncoder<T> visual_;
  nn::Linear<T> geom_embed_;
  std::vector<nn::EncoderLayer<T>> layers_;
  nn::GlobalAttention<T> global1_;
  nn::Tensor<T> queries1_;
  nn::Linear<T> to_global_;
  nn::FeedForward<T> fc1_;
  nn::Linear<T> query_gen_;
  nn::GlobalAttention<T> global2_;
  nn::FeedForward<T> fc2_;
  nn::Linear<T> head_;
};

/// max(0, |a - p| - |a - n| + m)
template <typename T>
nn::Tensor<T> triplet_loss(const nn::Tensor<T>& a, const nn::Tensor<T>& p, const nn::Tensor<T>& n, T margin = T(0.6));

/// Lines of one instance in one frame.
struct InstanceCluster {
  std::size_t frame = 0;  // index into the dataset
  int scene_id = 0;
  int instance = kBackgroundId;
  int semantic = -1;
  std::vector<std::size_t> rows;
};

/// Ground-truth instance clusters of every frame; background lines are skipped unless asked for.
std::vector<InstanceCluster> instance_clusters(const LineDataset& data, bool include_background = false);

struct Triplet {
  std::size_t anchor = 0, positive = 0, negative = 0;  // indices into the cluster list
  bool same_semantic_draw = false;                     // negative drawn from the anchor's class
};

class TripletMiner {
 public:
  /// Throws kEmptyInput when no instance appears in two frames or only one scene exists.
  TripletMiner(const std::vector<InstanceCluster>& clusters, double same_semantic_probability);
  Triplet next(std::mt19937_64& rng) const;
  /// Anchors are clusters of instances seen in at least two frames of their scene.
  const std::vector<std::size_t>& anchors() const { return anchors_; }

 private:
  const std::vector<InstanceCluster>* clusters_;
  double p_same_;
  std::vector<std::size_t> anchors_;
  std::map<std::pair<int, int>, std::vector<std::size_t>> by_instance_;  // (scene, instance) -> clusters
  std::map<int, std::vector<std::size_t>> by_semantic_;
};

std::vector<Triplet> mine_triplets(const std::vector<InstanceCluster>& clusters, std::size_t count,
                                   std::uint64_t seed, double same_semantic_probability = 0.5);

struct DescriptorEpochMetrics {
  int epoch = 0;
  double loss = 0;
  double val_accuracy = 0;
  double lr = 0;
  nlohmann::json to_json() const;
};

struct DescriptorTrainState {
  DescriptorNet<float>* net = nullptr;
  nn::Adam<float> adam;
  int next_epoch = 0;
};

struct DescriptorTrainOptions {
  std::uint64_t seed = 0;
  int epochs = -1;
  std::function<void(const DescriptorEpochMetrics&, DescriptorTrainState&)> on_epoch;
};

DescriptorTrainState make_descriptor_train_state(DescriptorNet<float>& net);

/// Copies the visual encoder weights of a clustering network.
void adopt_visual_encoder(DescriptorNet<float>& net, ClusterNet<float>& source);

std::vector<DescriptorEpochMetrics> train_descriptor(DescriptorTrainState& state, const LineDataset& train,
                                                     const LineDataset& validation, const DescriptorTrainOptions& opts);

/// Fraction of triplets with d(a,p) < d(a,n).
double triplet_accuracy(DescriptorNet<float>& net, const LineDataset& data, const VisualCache& cache,
                        const std::vector<InstanceCluster>& clusters, const std::vector<Triplet>& triplets);

/// Embedding of a set of rows of one frame, evaluation mode.
std::vector<double> describe_rows(DescriptorNet<float>& net, const LineFrame& frame, const VisualCache* cache,
                                  std::size_t frame_index, const std::vector<std::size_t>& rows);

/// Groups rows by label and describes every group, background included.
std::vector<ClusterEmbedding> describe_frame(DescriptorNet<float>& net, const LineFrame& frame,
                                             const VisualCache* cache, std::size_t frame_index,
                                             const std::vector<std::size_t>& rows, const std::vector<int>& labels);

void write_embeddings(const std::filesystem::path& path, const std::vector<ClusterEmbedding>& embeddings);
std::vector<ClusterEmbedding> read_embeddings(const std::filesystem::path& path);

void save_descriptor_checkpoint(const std::filesystem::path& path, DescriptorNet<float>& net,
                                DescriptorTrainState* state);
std::unique_ptr<DescriptorNet<float>> load_descriptor_checkpoint(const std::filesystem::path& path,
                                                                 const std::optional<DescriptorConfig>& expected,
                                                                 nn::Checkpoint* raw = nullptr);

}  // namespace lcd
