#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "lcd/nn/ops.hpp"

namespace lcd::nn {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool trainable = true;
};

template <typename T>
using ParamList = std::vector<NamedTensor<T>>;

using Rng = std::mt19937_64;

/// Glorot-uniform weights for a layer with the given fan-in/fan-out.
template <typename T>
Tensor<T> glorot(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-a, a);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<T>(dist(rng));
  return t.set_requires_grad(true);
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  Tensor<T> t(std::move(shape), value);
  return t.set_requires_grad(true);
}

template <typename T>
struct Linear {
  Tensor<T> w;  // [in, out]
  Tensor<T> b;  // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng)
      : w(glorot<T>({in, out}, in, out, rng)), b(constant_param<T>({out}, T(0))) {}

  std::size_t in() const { return w.dim(0); }
  std::size_t out() const { return w.dim(1); }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, w, b); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".w", w, true});
    out.push_back({prefix + ".b", b, true});
  }
};

template <typename T>
struct BatchNorm {
  Tensor<T> gamma, beta, running_mean, running_var;

  BatchNorm() = default;
  explicit BatchNorm(std::size_t d)
      : gamma(constant_param<T>({d}, T(1))),
        beta(constant_param<T>({d}, T(0))),
        running_mean(Shape{d}, T(0)),
        running_var(Shape{d}, T(1)) {}

  // When set, inference normalizes each input set with its own statistics and leaves the
  // running estimates untouched.
  bool set_statistics = false;

  Tensor<T> operator()(const Tensor<T>& x, bool training, const Mask& mask) {
    if (!training && set_statistics && valid_rows(x, mask) >= 2) {
      Tensor<T> scratch_mean(Shape{running_mean.size()}, T(0)), scratch_var(Shape{running_var.size()}, T(1));
      return batch_norm(x, gamma, beta, scratch_mean, scratch_var, true, mask);
    }
    return batch_norm(x, gamma, beta, running_mean, running_var, training, mask);
  }

  static std::size_t valid_rows(const Tensor<T>& x, const Mask& mask) {
    if (mask.empty()) return x.ndim() == 2 ? x.dim(0) : 0;
    std::size_t n = 0;
    for (auto v : mask) n += v ? 1 : 0;
    return n;
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".gamma", gamma, true});
    out.push_back({prefix + ".beta", beta, true});
    out.push_back({prefix + ".running_mean", running_mean, false});
    out.push_back({prefix + ".running_var", running_var, false});
  }
};

/// y = leaky_relu(x + sub(x))
template <typename T, typename Sub>
Tensor<T> residual(const Tensor<T>& x, Sub&& sublayer, T alpha = T(0.3)) {
  Tensor<T> s = sublayer(x);
  if (s.shape() != x.shape()) throw Error(ErrorCode::kShapeMismatch, "residual: sub-layer changed the shape");
  return leaky_relu(add(x, s), alpha);
}

/// Two-layer position-wise feed-forward block with a leaky hidden layer.
template <typename T>
struct FeedForward {
  Linear<T> inner, outer;

  FeedForward() = default;
  FeedForward(std::size_t d, std::size_t hidden, Rng& rng) : inner(d, hidden, rng), outer(hidden, d, rng) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return outer(leaky_relu(inner(x))); }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    inner.collect(prefix + ".inner", out);
    outer.collect(prefix + ".outer", out);
  }
};

struct AttentionShape {
  std::size_t d_model = 0;
  std::size_t d_qk = 0;
  std::size_t h_dot = 0;
  std::size_t h_add = 0;
  std::size_t heads() const { return h_dot + h_add; }
};

/// Mixed dot-product / additive self-attention. Keys double as values; head outputs are
/// concatenated and projected back to d_model.
template <typename T>
struct SelfAttention {
  AttentionShape shape;
  Tensor<T> wq;                 // [d_model, heads * d_qk]
  Tensor<T> wk;                 // [d_model, heads * d_qk]
  std::vector<Tensor<T>> w_add;  // per additive head, [d_qk]
  Linear<T> out;

  SelfAttention() = default;
  SelfAttention(const AttentionShape& s, Rng& rng) : shape(s) {
    const std::size_t hd = s.heads() * s.d_qk;
    wq = glorot<T>({s.d_model, hd}, s.d_model, s.d_qk, rng);
    wk = glorot<T>({s.d_model, hd}, s.d_model, s.d_qk, rng);
    for (std::size_t h = 0; h < s.h_add; ++h) w_add.push_back(glorot<T>({s.d_qk}, s.d_qk, 1, rng));
    out = Linear<T>(hd, s.d_model, rng);
  }

  Tensor<T> operator()(const Tensor<T>& x, const Mask& key_mask) const {
    const Tensor<T> q = matmul(x, wq);
    const Tensor<T> k = matmul(x, wk);
    std::vector<Tensor<T>> heads;
    for (std::size_t h = 0; h < shape.heads(); ++h) {
      const Tensor<T> qh = slice_cols(q, h * shape.d_qk, shape.d_qk);
      const Tensor<T> kh = slice_cols(k, h * shape.d_qk, shape.d_qk);
      if (h < shape.h_dot) {
        heads.push_back(dot_attention_head(qh, kh, kh, key_mask));
      } else {
        const Tensor<T> weights = softmax_rows(additive_scores(qh, kh, w_add[h - shape.h_dot]), key_mask);
        heads.push_back(matmul(weights, kh));
      }
    }
    return out(concat_cols(heads));
  }

  void collect(const std::string& prefix, ParamList<T>& out_list) const {
    out_list.push_back({prefix + ".wq", wq, true});
    out_list.push_back({prefix + ".wk", wk, true});
    for (std::size_t h = 0; h < w_add.size(); ++h)
      out_list.push_back({prefix + ".w_add" + std::to_string(h), w_add[h], true});
    out.collect(prefix + ".out", out_list);
  }
};

/// Learned (or supplied) queries summarizing a variable-size set. queries: [1, heads * d_qk].
/// Output: [1, heads * d_qk], head outputs concatenated.
template <typename T>
struct GlobalAttention {
  AttentionShape shape;
  Tensor<T> wk;                  // [d_model, heads * d_qk]
  std::vector<Tensor<T>> w_add;  // per additive head, [d_qk]

  GlobalAttention() = default;
  GlobalAttention(const AttentionShape& s, Rng& rng) : shape(s) {
    wk = glorot<T>({s.d_model, s.heads() * s.d_qk}, s.d_model, s.d_qk, rng);
    for (std::size_t h = 0; h < s.h_add; ++h) w_add.push_back(glorot<T>({s.d_qk}, s.d_qk, 1, rng));
  }

  std::size_t out_dim() const { return shape.heads() * shape.d_qk; }

  Tensor<T> operator()(const Tensor<T>& x, const Tensor<T>& queries, const Mask& key_mask) const {
    if (queries.size() != out_dim()) throw Error(ErrorCode::kShapeMismatch, "global attention: query size");
    const Tensor<T> q = queries.ndim() == 2 ? queries : reshape(queries, {1, out_dim()});
    const Tensor<T> k = matmul(x, wk);
    std::vector<Tensor<T>> heads;
    for (std::size_t h = 0; h < shape.heads(); ++h) {
      const Tensor<T> qh = slice_cols(q, h * shape.d_qk, shape.d_qk);
      const Tensor<T> kh = slice_cols(k, h * shape.d_qk, shape.d_qk);
      if (h < shape.h_dot) {
        heads.push_back(dot_attention_head(qh, kh, kh, key_mask));
      } else {
        const Tensor<T> weights = softmax_rows(additive_scores(qh, kh, w_add[h - shape.h_dot]), key_mask);
        heads.push_back(matmul(weights, kh));
      }
    }
    return concat_cols(heads);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    out.push_back({prefix + ".wk", wk, true});
    for (std::size_t h = 0; h < w_add.size(); ++h)
      out.push_back({prefix + ".w_add" + std::to_string(h), w_add[h], true});
  }
};

/// Attention sub-layer followed by a feed-forward sub-layer, both residual, each optionally
/// batch-normalized. Masked rows stay zero.
template <typename T>
struct EncoderLayer {
  SelfAttention<T> attention;
  FeedForward<T> ff;
  BatchNorm<T> bn_attention, bn_ff;
  bool use_batch_norm = true;

  EncoderLayer() = default;
  EncoderLayer(const AttentionShape& s, std::size_t d_ff, bool batch_norm, Rng& rng)
      : attention(s, rng), ff(s.d_model, d_ff, rng), bn_attention(s.d_model), bn_ff(s.d_model),
        use_batch_norm(batch_norm) {}

  Tensor<T> operator()(const Tensor<T>& x, const Mask& mask, bool training, bool attention_enabled) {
    Tensor<T> h = x;
    if (attention_enabled) {
      h = residual(h, [&](const Tensor<T>& in) { return attention(in, mask); });
      h = use_batch_norm ? bn_attention(h, training, mask) : mask_rows(h, mask);
    }
    h = residual(h, [&](const Tensor<T>& in) { return ff(in); });
    return use_batch_norm ? bn_ff(h, training, mask) : mask_rows(h, mask);
  }

  void collect(const std::string& prefix, ParamList<T>& out) const {
    attention.collect(prefix + ".attention", out);
    ff.collect(prefix + ".ff", out);
    if (use_batch_norm) {
      bn_attention.collect(prefix + ".bn_attention", out);
      bn_ff.collect(prefix + ".bn_ff", out);
    }
  }
};

struct VisualEncoderShape {
  std::size_t channels1 = 16;
  std::size_t channels2 = 32;
  std::size_t d_h = 2048;
  std::size_t d_visual = 128;
};

/// Four 3x3 convolutions with two 2x2 pooling stages, a final 4x4 pooling, a hidden layer
/// of d_h units and a d_visual output. Input [N, 3, 64, 96] in [0, 1].
template <typename T>
struct VisualEncoder {
  VisualEncoderShape shape;
  Tensor<T> w1, b1, w2, b2, w3, b3, w4, b4;
  Linear<T> hidden, out;

  static constexpr std::size_t kInHeight = 64;
  static constexpr std::size_t kInWidth = 96;

  VisualEncoder() = default;
  VisualEncoder(const VisualEncoderShape& s, Rng& rng) : shape(s) {
    auto kernel = [&](std::size_t o, std::size_t c) { return glorot<T>({o, c, 3, 3}, c * 9, o * 9, rng); };
    w1 = kernel(s.channels1, 3);
    b1 = constant_param<T>({s.channels1}, T(0));
    w2 = kernel(s.channels1, s.channels1);
    b2 = constant_param<T>({s.channels1}, T(0));
    w3 = kernel(s.channels2, s.channels1);
    b3 = constant_param<T>({s.channels2}, T(0));
    w4 = kernel(s.channels2, s.channels2);
    b4 = constant_param<T>({s.channels2}, T(0));
    hidden = Linear<T>(flat_dim(), s.d_h, rng);
    out = Linear<T>(s.d_h, s.d_visual, rng);
  }

  std::size_t flat_dim() const { return shape.channels2 * (kInHeight / 16) * (kInWidth / 16); }

  Tensor<T> operator()(const Tensor<T>& images) const {
    if (images.ndim() != 4 || images.dim(1) != 3 || images.dim(2) != kInHeight || images.dim(3) != kInWidth)
      throw Error(ErrorCode::kShapeMismatch, "visual encoder: expected [N,3,64,96], got " + shape_string(images.shape()));
    Tensor<T> h = leaky_relu(conv2d(images, w1, b1, 1));
    h = maxpool2d(leaky_relu(conv2d(h, w2, b2, 1)), 2);
    h = leaky_relu(conv2d(h, w3, b3, 1));
    h = maxpool2d(leaky_relu(conv2d(h, w4, b4, 1)), 2);
    h = maxpool2d(h, 4);
    h = reshape(h, {images.dim(0), flat_dim()});
    return out(leaky_relu(hidden(h)));
  }

  void collect(const std::string& prefix, ParamList<T>& list) const {
    const std::pair<const char*, const Tensor<T>*> convs[] = {{"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2},
                                                              {"w3", &w3}, {"b3", &b3}, {"w4", &w4}, {"b4", &b4}};
    for (const auto& [n, t] : convs) list.push_back({prefix + "." + n, *t, true});
    hidden.collect(prefix + ".hidden", list);
    out.collect(prefix + ".out", list);
  }
};

}  // namespace lcd::nn
