#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lcd/line_dataset.hpp"
#include "lcd/nn/adam.hpp"
#include "lcd/nn/checkpoint.hpp"
#include "lcd/nn/layers.hpp"

namespace lcd {

struct ClusterNetConfig {
  std::size_t d_geom = 472;
  std::size_t d_visual = 128;
  std::size_t d_model = 600;
  std::size_t d_h = 2048;
  std::size_t n_layers = 7;
  std::size_t h_add = 4;
  std::size_t h_dot = 4;
  std::size_t d_qk = 150;
  std::size_t d_ff = 2400;
  std::size_t d_label = 16;
  std::size_t conv_channels1 = 16;
  std::size_t conv_channels2 = 32;
  std::size_t max_lines_train = 160;
  std::size_t max_lines_eval = 220;
  double margin = 2.0;
  double lr = 5e-5;
  double lr_decay = 0.96;
  int epochs = 40;
  bool attention_enabled = true;
  bool detach_reference = true;
  bool augment = true;  // random rotation and blackout during training
  double blackout_probability = 0.2;
  double max_tilt_deg = 10.0;
  int pretrain_epochs = 0;
  double pretrain_lr = 1e-3;
  bool frame_statistics = true;  // batch norm uses each frame's statistics at inference

  void validate() const;
  nlohmann::json to_json() const;
  static ClusterNetConfig from_json(const nlohmann::json& j, const std::string& path = "cluster");
  nn::AttentionShape attention_shape() const { return {d_model, d_qk, h_dot, h_add}; }
  nn::VisualEncoderShape visual_shape() const { return {conv_channels1, conv_channels2, d_h, d_visual}; }
};

/// Line embedding, residual mixed-attention stack and label head. The visual encoder is a
/// separate member so its encodings can be cached while it is frozen.
template <typename T>
class ClusterNet {
 public:
  ClusterNet(const ClusterNetConfig& cfg, std::uint64_t seed);

  const ClusterNetConfig& config() const { return cfg_; }

  /// [N,3,64,96] -> [N, d_visual]
  nn::Tensor<T> encode_visual(const nn::Tensor<T>& images) const { return visual_(images); }

  /// [N,15] + [N,d_visual] -> [N, d_model]; masked rows are zero.
  nn::Tensor<T> embed(const nn::Tensor<T>& geometry, const nn::Tensor<T>& visual, const nn::Mask& mask,
                      bool training);

  /// Label distributions [N, d_label]; masked rows are zero.
  nn::Tensor<T> forward(const nn::Tensor<T>& geometry, const nn::Tensor<T>& visual, const nn::Mask& mask,
                        bool training);

  nn::ParamList<T> parameters() const;         // everything, visual encoder included
  nn::ParamList<T> head_parameters() const;    // everything except the visual encoder
  nn::ParamList<T> visual_parameters() const;  // visual encoder only

  nn::VisualEncoder<T>& visual_encoder() { return visual_; }

 private:
  ClusterNetConfig cfg_;
  nn::VisualEncoder<T> visual_;
  nn::Linear<T> geom_embed_;
  nn::BatchNorm<T> embed_bn_;
  std::vector<nn::EncoderLayer<T>> layers_;
  nn::Linear<T> label_head_;
};

/// argmax per row, ties to the lowest bin; bin 0 is background.
template <typename T>
std::vector<int> predict_labels(const nn::Tensor<T>& distributions);

/// Background cross-entropy. `instances` holds kBackgroundId for background lines.
template <typename T>
nn::Tensor<T> loss_bg(const nn::Tensor<T>& p, const std::vector<int>& instances, const nn::Mask& mask = {});

template <typename T>
nn::Tensor<T> loss_pair(const nn::Tensor<T>& p, const std::vector<int>& instances, const nn::Mask& mask = {},
                        T margin = T(2), bool detach_reference = true);

template <typename T>
nn::Tensor<T> loss_clustering(const nn::Tensor<T>& p, const std::vector<int>& instances, const nn::Mask& mask = {},
                              T margin = T(2), bool detach_reference = true);

/// Random rigid rotation used for augmentation: yaw about the camera's vertical axis,
/// small pitch and roll.
Eigen::Matrix3d random_rotation(std::mt19937_64& rng, double max_tilt_deg);
LineFrame rotate_frame(const LineFrame& frame, const Eigen::Matrix3d& r);

/// Cached visual encodings per frame, row-major [N, d_visual].
struct VisualCache {
  std::vector<std::vector<float>> frames;
  std::vector<float> black;  // encoding of an all-black image
  std::size_t dim = 0;
};

VisualCache encode_dataset(const nn::VisualEncoder<float>& encoder, const LineDataset& data);
VisualCache encode_dataset(ClusterNet<float>& net, const LineDataset& data);
/// Encodings of the selected rows as [rows, dim]; `blackout` substitutes the black-image encoding.
nn::Tensor<float> visual_rows(const VisualCache& cache, std::size_t frame, const std::vector<std::size_t>& rows,
                              bool blackout);

struct ClusterEpochMetrics {
  int epoch = 0;
  double loss = 0, loss_bg = 0, loss_pair = 0;
  double val_nmi = 0;
  double lr = 0;
  nlohmann::json to_json() const;
};

struct ClusterTrainState {
  ClusterNet<float>* net = nullptr;
  nn::Adam<float> adam;
  int next_epoch = 0;
};

struct ClusterTrainOptions {
  std::uint64_t seed = 0;
  int epochs = -1;  // -1: take the config value
  std::function<void(const ClusterEpochMetrics&, ClusterTrainState&)> on_epoch;
};

ClusterTrainState make_cluster_train_state(ClusterNet<float>& net);

/// Runs the remaining epochs from state.next_epoch. Per-epoch randomness is derived from
/// (seed, epoch) so a resumed run matches an uninterrupted one.
std::vector<ClusterEpochMetrics> train_clustering(ClusterTrainState& state, const LineDataset& train,
                                                  const LineDataset& validation, const ClusterTrainOptions& opts);

/// Visual-only stage: trains the encoder with a per-line label head on the clustering loss.
double pretrain_visual(ClusterNet<float>& net, const LineDataset& train, std::uint64_t seed);

/// Evaluation-mode predictions for a whole frame, capped at max_lines_eval by seeded sampling.
/// Returns the selected rows and their labels.
struct FramePrediction {
  std::vector<std::size_t> rows;
  std::vector<int> labels;
};
FramePrediction predict_frame(ClusterNet<float>& net, const LineFrame& frame, const VisualCache* cache,
                              std::size_t frame_index, std::uint64_t seed);

/// Mean NMI over frames, ground-truth background treated as one cluster.
double mean_nmi(ClusterNet<float>& net, const LineDataset& data, const VisualCache* cache, std::uint64_t seed);

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t cap, std::mt19937_64& rng);

void save_cluster_checkpoint(const std::filesystem::path& path, ClusterNet<float>& net,
                             ClusterTrainState* state);
/// Restores weights (and optimizer state when `state` is given). Throws on config mismatch.
std::unique_ptr<ClusterNet<float>> load_cluster_checkpoint(const std::filesystem::path& path,
                                                           const std::optional<ClusterNetConfig>& expected,
                                                           nn::Checkpoint* raw = nullptr);

}  // namespace lcd
