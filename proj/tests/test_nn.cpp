#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "gradcheck.hpp"
#include "lcd/nn/adam.hpp"
#include "lcd/nn/checkpoint.hpp"
#include "lcd/nn/layers.hpp"
#include "lcd/nn/ops.hpp"

using namespace lcd::nn;
using testing_support::gradient_error;
using testing_support::random_tensor;

namespace {

// Weighted sum so that every output element carries a distinct upstream gradient.
Tensor<double> probe(const Tensor<double>& out, const Tensor<double>& weights) {
  return sum(mul(reshape(out, weights.shape()), weights));
}

Tensor<double> fixed(Shape shape, std::mt19937_64& rng) {
  Tensor<double> t = random_tensor(std::move(shape), rng);
  return t.set_requires_grad(false);
}

}  // namespace

TEST(Linear, IdentityWeightsPassThrough) {
  Tensor<double> x({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tensor<double> b({3}, 0.0);
  EXPECT_EQ(linear(x, w, b).values(), x.values());
}

TEST(Linear, SmallProduct) {
  Tensor<double> x({1, 2}, {1, 2});
  Tensor<double> w({2, 1}, {1, 1});
  Tensor<double> b({1}, 0.0);
  EXPECT_DOUBLE_EQ(linear(x, w, b).item(), 3.0);
}

TEST(Linear, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(1);
  auto x = random_tensor({4, 3}, rng), w = random_tensor({3, 5}, rng), b = random_tensor({5}, rng);
  auto r = fixed({4, 5}, rng);
  EXPECT_LT(gradient_error({x, w, b}, [&] { return probe(linear(x, w, b), r); }), 1e-6);
}

TEST(Linear, ShapeMismatchThrows) {
  Tensor<double> x({1, 2}), w({3, 1}), b({1});
  EXPECT_THROW(linear(x, w, b), lcd::Error);
}

TEST(LeakyRelu, Values) {
  Tensor<double> x({2}, {2.0, -2.0});
  auto y = leaky_relu(x, 0.3);
  EXPECT_DOUBLE_EQ(y[0], 2.0);
  EXPECT_NEAR(y[1], -0.6, 1e-15);
}

TEST(LeakyRelu, SlopeBelowZero) {
  Tensor<double> x({1}, {-1.0});
  x.set_requires_grad(true);
  const double err = gradient_error({x}, [&] { return sum(leaky_relu(x, 0.3)); });
  EXPECT_LT(err, 1e-8);
  EXPECT_NEAR(x.grad()[0], 0.3, 1e-12);
}

TEST(Softmax, UniformAndStable) {
  Tensor<double> a({1, 2}, {0.0, 0.0});
  Tensor<double> b({1, 2}, {1000.0, 1000.0});
  for (const auto& t : {softmax_rows(a), softmax_rows(b)}) {
    EXPECT_DOUBLE_EQ(t[0], 0.5);
    EXPECT_DOUBLE_EQ(t[1], 0.5);
  }
}

TEST(Softmax, RowsSumToOne) {
  std::mt19937_64 rng(2);
  auto x = fixed({5, 7}, rng);
  auto y = softmax_rows(x);
  for (int i = 0; i < 5; ++i) {
    double s = 0;
    for (int j = 0; j < 7; ++j) s += y[i * 7 + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Softmax, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({3, 4}, rng);
  auto r = fixed({3, 4}, rng);
  EXPECT_LT(gradient_error({x}, [&] { return probe(softmax_rows(x), r); }), 1e-6);
  EXPECT_LT(gradient_error({x}, [&] { return probe(softmax_rows(x, {1, 0, 1, 1}), r); }), 1e-6);
}

TEST(BatchNorm, NormalizesFeature) {
  // Feature with mean 5 and variance 4.
  Tensor<double> x({4, 1}, {3, 7, 3, 7});
  Tensor<double> g({1}, 1.0), b({1}, 0.0), rm({1}, 0.0), rv({1}, 1.0);
  auto y = batch_norm(x, g, b, rm, rv, true);
  double m = 0, v = 0;
  for (double e : y.values()) m += e / 4;
  for (double e : y.values()) v += (e - m) * (e - m) / 4;
  EXPECT_NEAR(m, 0.0, 1e-6);
  EXPECT_NEAR(v, 1.0, 1e-4);
  EXPECT_NEAR(rm[0], 0.5, 1e-12);
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 4.0, 1e-12);
}

TEST(BatchNorm, AffineParameters) {
  Tensor<double> x({4, 1}, {3, 7, 3, 7});
  Tensor<double> g({1}, 2.0), b({1}, 3.0), rm({1}, 0.0), rv({1}, 1.0);
  auto y = batch_norm(x, g, b, rm, rv, true);
  double m = 0, v = 0;
  for (double e : y.values()) m += e / 4;
  for (double e : y.values()) v += (e - m) * (e - m) / 4;
  EXPECT_NEAR(m, 3.0, 1e-6);
  EXPECT_NEAR(std::sqrt(v), 2.0, 1e-4);
}

TEST(BatchNorm, TrainingNeedsTwoRows) {
  Tensor<double> x({1, 2}), g({2}, 1.0), b({2}, 0.0), rm({2}, 0.0), rv({2}, 1.0);
  EXPECT_THROW(batch_norm(x, g, b, rm, rv, true), lcd::Error);
  EXPECT_NO_THROW(batch_norm(x, g, b, rm, rv, false));
}

TEST(BatchNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({4, 3}, rng), g = random_tensor({3}, rng), b = random_tensor({3}, rng);
  Tensor<double> rm({3}, 0.0), rv({3}, 1.0);
  auto r = fixed({4, 3}, rng);
  EXPECT_LT(gradient_error({x, g, b}, [&] { return probe(batch_norm(x, g, b, rm, rv, true), r); }), 1e-5);
  const Mask mask{1, 0, 1, 1};
  EXPECT_LT(gradient_error({x, g, b}, [&] { return probe(batch_norm(x, g, b, rm, rv, true, mask), r); }), 1e-5);
  EXPECT_LT(gradient_error({x, g, b}, [&] { return probe(batch_norm(x, g, b, rm, rv, false), r); }), 1e-5);
}

TEST(BatchNorm, MaskedRowsIgnored) {
  Tensor<double> x({3, 1}, {3, 7, 1000});
  Tensor<double> g({1}, 1.0), b({1}, 0.0), rm({1}, 0.0), rv({1}, 1.0);
  auto y = batch_norm(x, g, b, rm, rv, true, {1, 1, 0});
  EXPECT_NEAR(y[0], -1.0, 1e-5);
  EXPECT_NEAR(y[1], 1.0, 1e-5);
  EXPECT_EQ(y[2], 0.0);
}

TEST(BatchNorm, EvalIsDeterministic) {
  std::mt19937_64 rng(5);
  auto x = fixed({5, 3}, rng);
  Tensor<double> g({3}, 1.5), b({3}, 0.2), rm({3}, 0.1), rv({3}, 2.0);
  EXPECT_EQ(batch_norm(x, g, b, rm, rv, false).values(), batch_norm(x, g, b, rm, rv, false).values());
}

TEST(DotAttention, SingleValidKeyReturnsItsValue) {
  std::mt19937_64 rng(6);
  auto q = fixed({2, 4}, rng), k = fixed({3, 4}, rng), v = fixed({3, 5}, rng);
  auto out = dot_attention_head(q, k, v, {0, 1, 0});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_DOUBLE_EQ(out[i * 5 + j], v[5 + j]);
}

TEST(DotAttention, IdenticalKeysGiveSharedValue) {
  Tensor<double> q({1, 2}, {0.3, -0.7});
  Tensor<double> k({2, 2}, {1, 2, 1, 2});
  Tensor<double> v({2, 3}, {4, 5, 6, 4, 5, 6});
  auto out = dot_attention_head(q, k, v);
  EXPECT_NEAR(out[0], 4, 1e-12);
  EXPECT_NEAR(out[1], 5, 1e-12);
  EXPECT_NEAR(out[2], 6, 1e-12);
}

TEST(DotAttention, AllKeysMaskedIsAnError) {
  Tensor<double> q({1, 2}), k({2, 2}), v({2, 2});
  EXPECT_THROW(dot_attention_head(q, k, v, {0, 0}), lcd::Error);
}

TEST(DotAttention, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(7);
  auto q = random_tensor({3, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 2}, rng);
  auto r = fixed({3, 2}, rng);
  EXPECT_LT(gradient_error({q, k, v}, [&] { return probe(dot_attention_head(q, k, v, {1, 1, 0}), r); }), 1e-5);
}

TEST(DotAttention, MaskedRowsDoNotMatter) {
  std::mt19937_64 rng(8);
  auto q = fixed({2, 3}, rng), k = fixed({4, 3}, rng), v = fixed({4, 2}, rng);
  const Mask mask{1, 0, 1, 0};
  auto base = dot_attention_head(q, k, v, mask);
  k[3] = 100.0;
  v[2] = -50.0;
  EXPECT_EQ(dot_attention_head(q, k, v, mask).values(), base.values());
}

TEST(AdditiveAttention, SingleValidKeyReturnsItsValue) {
  std::mt19937_64 rng(9);
  auto q = fixed({2, 4}, rng), k = fixed({3, 4}, rng), v = fixed({3, 2}, rng);
  auto wq = fixed({4, 3}, rng), wk = fixed({4, 3}, rng), w = fixed({3}, rng);
  auto out = additive_attention_head(q, k, v, wq, wk, w, {0, 0, 1});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(out[i * 2 + j], v[4 + j]);
}

TEST(AdditiveAttention, KeyValuePermutationInvariance) {
  std::mt19937_64 rng(10);
  auto q = fixed({2, 4}, rng), k = fixed({3, 4}, rng), v = fixed({3, 2}, rng);
  auto wq = fixed({4, 3}, rng), wk = fixed({4, 3}, rng), w = fixed({3}, rng);
  const int perm[3] = {2, 0, 1};
  Tensor<double> kp({3, 4}), vp({3, 2});
  for (int i = 0; i < 3; ++i) {
    for (int c = 0; c < 4; ++c) kp[i * 4 + c] = k[perm[i] * 4 + c];
    for (int c = 0; c < 2; ++c) vp[i * 2 + c] = v[perm[i] * 2 + c];
  }
  auto a = additive_attention_head(q, k, v, wq, wk, w);
  auto b = additive_attention_head(q, kp, vp, wq, wk, w);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(AdditiveAttention, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  auto q = random_tensor({3, 4}, rng), k = random_tensor({3, 4}, rng), v = random_tensor({3, 2}, rng);
  auto wq = random_tensor({4, 3}, rng), wk = random_tensor({4, 3}, rng), w = random_tensor({3}, rng);
  auto r = fixed({3, 2}, rng);
  EXPECT_LT(gradient_error({q, k, v, wq, wk, w},
                           [&] { return probe(additive_attention_head(q, k, v, wq, wk, w, {1, 0, 1}), r); }),
            1e-5);
}

TEST(Residual, ZeroSublayer) {
  Tensor<double> x({1, 2}, {2.0, -1.0});
  auto y = residual<double>(x, [](const Tensor<double>& in) { return scale(in, 0.0); });
  EXPECT_DOUBLE_EQ(y[0], 2.0);
  EXPECT_NEAR(y[1], -0.3, 1e-15);
}

TEST(Residual, GradientFlowsThroughBothPaths) {
  std::mt19937_64 rng(12);
  auto x = random_tensor({3, 4}, rng), w = random_tensor({4, 4}, rng), b = random_tensor({4}, rng);
  auto r = fixed({3, 4}, rng);
  EXPECT_LT(gradient_error({x, w, b},
                           [&] {
                             return probe(residual<double>(x, [&](const Tensor<double>& in) { return linear(in, w, b); }),
                                          r);
                           }),
            1e-6);
}

TEST(Residual, ShapeChangeThrows) {
  Tensor<double> x({1, 2});
  Tensor<double> w({2, 3}), b({3});
  EXPECT_THROW(residual<double>(x, [&](const Tensor<double>& in) { return linear(in, w, b); }), lcd::Error);
}

TEST(L2Normalize, Values) {
  Tensor<double> x({2}, {3.0, 4.0});
  auto y = l2_normalize_rows(x);
  EXPECT_DOUBLE_EQ(y[0], 0.6);
  EXPECT_DOUBLE_EQ(y[1], 0.8);
  Tensor<double> u({3}, {0.0, 1.0, 0.0});
  EXPECT_EQ(l2_normalize_rows(u).values(), u.values());
  Tensor<double> z({2}, 0.0);
  EXPECT_THROW(l2_normalize_rows(z), lcd::Error);
}

TEST(L2Normalize, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(13);
  auto x = random_tensor({2, 5}, rng);
  auto r = fixed({2, 5}, rng);
  EXPECT_LT(gradient_error({x}, [&] { return probe(l2_normalize_rows(x), r); }), 1e-6);
}

TEST(Conv2d, IdentityKernel) {
  std::mt19937_64 rng(14);
  auto x = fixed({1, 1, 4, 5}, rng);
  Tensor<double> w({1, 1, 1, 1}, 1.0), b({1}, 0.0);
  EXPECT_EQ(conv2d(x, w, b, 0).values(), x.values());
}

TEST(Conv2d, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(15);
  auto x = random_tensor({2, 2, 4, 5}, rng), w = random_tensor({3, 2, 3, 3}, rng), b = random_tensor({3}, rng);
  auto r = fixed({2, 3, 4, 5}, rng);
  EXPECT_LT(gradient_error({x, w, b}, [&] { return probe(conv2d(x, w, b, 1), r); }), 1e-6);
}

TEST(MaxPool, WindowMaximum) {
  Tensor<double> x({1, 1, 2, 2}, {1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(maxpool2d(x, 2).item(), 4.0);
}

TEST(MaxPool, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(16);
  auto x = random_tensor({1, 2, 4, 6}, rng);
  auto r = fixed({1, 2, 2, 3}, rng);
  EXPECT_LT(gradient_error({x}, [&] { return probe(maxpool2d(x, 2), r); }), 1e-6);
}

TEST(Ops, RemainingGradients) {
  std::mt19937_64 rng(17);
  auto a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng), c = random_tensor({5, 4}, rng);
  auto r = fixed({3, 5}, rng), r2 = fixed({3, 8}, rng), r3 = fixed({3, 2}, rng), r4 = fixed({3, 4}, rng);
  EXPECT_LT(gradient_error({a, c}, [&] { return probe(matmul_nt(a, c), r); }), 1e-6);
  EXPECT_LT(gradient_error({a, b}, [&] { return probe(concat_cols<double>({a, b}), r2); }), 1e-6);
  EXPECT_LT(gradient_error({a}, [&] { return probe(slice_cols(a, 1, 2), r3); }), 1e-6);
  EXPECT_LT(gradient_error({a, b}, [&] { return probe(sub(mul(a, b), tanh(a)), r4); }), 1e-6);
  EXPECT_LT(gradient_error({a}, [&] { return probe(mask_rows(relu(a), {1, 0, 1}), r4); }), 1e-6);
  EXPECT_LT(gradient_error({a, b}, [&] { return distance(a, b); }), 1e-6);
  EXPECT_LT(gradient_error({a}, [&] { return mean(add_scalar(a, 2.0)); }), 1e-6);
}

TEST(Adam, ZeroGradientLeavesParameters) {
  Tensor<double> p({3}, {1.0, -2.0, 0.5});
  p.set_requires_grad(true);
  Adam<double> opt({{"p", p, true}}, {.lr = 0.1});
  p.grad().assign(3, 0.0);
  opt.step();
  EXPECT_EQ(p.values(), (std::vector<double>{1.0, -2.0, 0.5}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  Tensor<double> p({2}, {0.0, 0.0});
  p.set_requires_grad(true);
  Adam<double> opt({{"p", p, true}}, {.lr = 0.01});
  p.grad() = {3.0, -0.2};
  opt.step();
  EXPECT_NEAR(p[0], -0.01, 1e-8);
  EXPECT_NEAR(p[1], 0.01, 1e-7);
}

TEST(Adam, ConvergesOnQuadratic) {
  // minimize (p - 3)^2
  Tensor<double> p({1}, {0.0});
  p.set_requires_grad(true);
  Adam<double> opt({{"p", p, true}}, {.lr = 0.1});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    auto d = add_scalar(p, -3.0);
    backward(sum(mul(d, d)));
    opt.step();
  }
  EXPECT_NEAR(p[0], 3.0, 1e-3);
}

TEST(Tape, VisitsSharedNodesOnce) {
  Tensor<double> x({1}, {2.0});
  x.set_requires_grad(true);
  auto y = mul(x, x);
  auto z = add(y, y);
  Tape<double> tape(sum(z));
  std::set<Node<double>*> unique(tape.order().begin(), tape.order().end());
  EXPECT_EQ(unique.size(), tape.order().size());
  tape.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
}

TEST(Checkpoint, BitExactRoundTrip) {
  std::mt19937_64 rng(18);
  Linear<float> layer(7, 5, rng);
  BatchNorm<float> bn(5);
  ParamList<float> params;
  layer.collect("lin", params);
  bn.collect("bn", params);
  Checkpoint ck;
  ck.metadata["kind"] = "test";
  ck.put_params(params);
  Tensor<double> extra({2}, {1.0 / 3.0, -7.25});
  ck.put("extra", extra);
  const auto path = std::filesystem::temp_directory_path() / "lcd_ckpt_roundtrip.bin";
  ck.save(path);
  Checkpoint back = Checkpoint::load(path);
  EXPECT_TRUE(back == ck);

  Linear<float> other(7, 5, rng);
  ParamList<float> other_params;
  other.collect("lin", other_params);
  back.load_params(other_params);
  EXPECT_EQ(other.w.values(), layer.w.values());
  Tensor<double> extra_back({2});
  back.load_into("extra", extra_back);
  EXPECT_EQ(extra_back.values(), extra.values());

  Linear<float> wrong(6, 5, rng);
  ParamList<float> wrong_params;
  wrong.collect("lin", wrong_params);
  EXPECT_THROW(back.load_params(wrong_params), lcd::Error);
  std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto path = std::filesystem::temp_directory_path() / "lcd_ckpt_garbage.bin";
  {
    std::ofstream out(path, std::ios::binary);
    out << "not a checkpoint";
  }
  EXPECT_THROW(Checkpoint::load(path), lcd::Error);
  std::filesystem::remove(path);
}
