#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "xai_triage/network.hpp"

using namespace xai_triage;
using testing_support::Rng;
using testing_support::random_tensor;

namespace {

Layer identity_dense(std::size_t n) {
  Tensor w(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) w[i * n + i] = 1.0;
  return Layer::dense(std::move(w), Tensor(Shape{n}));
}

// Independent direct convolution: loops over output pixels, zero padding.
Tensor conv_oracle(const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
                   std::size_t pad) {
  const std::size_t oc = w.dim(0), ic = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  const std::size_t H = x.dim(1), W = x.dim(2);
  const std::size_t oh = (H + 2 * pad - kh) / stride + 1, ow = (W + 2 * pad - kw) / stride + 1;
  Tensor out(Shape{oc, oh, ow});
  for (std::size_t o = 0; o < oc; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        double acc = b[o];
        for (std::size_t c = 0; c < ic; ++c)
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              const long py = static_cast<long>(y * stride + i) - static_cast<long>(pad);
              const long px = static_cast<long>(xx * stride + j) - static_cast<long>(pad);
              if (py < 0 || px < 0 || py >= static_cast<long>(H) || px >= static_cast<long>(W))
                continue;
              acc += w[((o * ic + c) * kh + i) * kw + j] *
                     x.at(c, static_cast<std::size_t>(py), static_cast<std::size_t>(px));
            }
        out[(o * oh + y) * ow + xx] = acc;
      }
  return out;
}

}  // namespace

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), Error);
  const Tensor t(Shape{2, 3}, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.reshaped({3, 2}).shape(), (Shape{3, 2}));
  EXPECT_THROW(t.reshaped({4, 2}), Error);
}

TEST(Forward, IdentityDense) {
  const Network net({identity_dense(2)}, {2});
  const auto r = forward(net, Tensor::vector({2, 3}));
  EXPECT_EQ(r.logits.data(), (std::vector<double>{2, 3}));
}

TEST(Forward, ReluClampsNegatives) {
  const Network net({Layer::relu(), identity_dense(2)}, {2});
  EXPECT_EQ(forward(net, Tensor::vector({-1, 5})).logits.data(), (std::vector<double>{0, 5}));
}

TEST(Forward, BoxFilterOnConstantImage) {
  Tensor w(Shape{1, 1, 3, 3}, 1.0 / 9.0);
  const Layer conv = Layer::conv2d(w, Tensor(Shape{1}), 1, 0);
  const Tensor out = apply_layer(conv, Tensor(Shape{1, 5, 5}, 9.0), 0);
  ASSERT_EQ(out.shape(), (Shape{1, 3, 3}));
  for (double v : out.values()) EXPECT_NEAR(v, 9.0, 1e-12);
}

TEST(Forward, ConvMatchesDirectOracle) {
  Rng rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t ic = rng.between(1, 3), oc = rng.between(1, 3);
    const std::size_t kh = rng.between(1, 3), kw = rng.between(1, 3);
    const std::size_t stride = rng.between(1, 2), pad = rng.between(0, 2);
    const std::size_t H = rng.between(kh, 7), W = rng.between(kw, 7);
    const Tensor x = random_tensor(rng, {ic, H, W}, -1, 1);
    const Tensor w = random_tensor(rng, {oc, ic, kh, kw}, -1, 1);
    const Tensor b = random_tensor(rng, {oc}, -1, 1);
    const Tensor got = apply_layer(Layer::conv2d(w, b, stride, pad), x, 0);
    const Tensor want = conv_oracle(x, w, b, stride, pad);
    ASSERT_EQ(got.shape(), want.shape());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
  }
}

TEST(Forward, ConvOutputExtentProperty) {
  Rng rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t kh = rng.between(1, 5), kw = rng.between(1, 5);
    const std::size_t stride = rng.between(1, 3), pad = rng.between(0, 3);
    const std::size_t H = rng.between(1, 12), W = rng.between(1, 12);
    const Layer conv = Layer::conv2d(Tensor(Shape{2, 1, kh, kw}), Tensor(Shape{2}), stride, pad);
    if (H + 2 * pad < kh || W + 2 * pad < kw) {
      EXPECT_THROW(layer_output_shape(conv, {1, H, W}, 0), ShapeError);
      continue;
    }
    const Shape s = layer_output_shape(conv, {1, H, W}, 0);
    EXPECT_EQ(s[1], (H + 2 * pad - kh) / stride + 1);
    EXPECT_EQ(s[2], (W + 2 * pad - kw) / stride + 1);
    EXPECT_EQ(apply_layer(conv, Tensor(Shape{1, H, W}), 0).shape(), s);
  }
}

TEST(Forward, PoolingExamples) {
  const Tensor x(Shape{1, 2, 2}, std::vector<double>{5, 1, 1, 1});
  EXPECT_EQ(apply_layer(Layer::maxpool(2, 2), x, 0).data(), (std::vector<double>{5}));
  EXPECT_EQ(apply_layer(Layer::avgpool(2, 2), x, 0).data(), (std::vector<double>{2}));
}

TEST(Forward, ShapeMismatchNamesLayer) {
  const Network net({identity_dense(2)}, {2});
  try {
    forward(net, Tensor::vector({1, 2, 3}));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.layer_index(), 0u);
  }
  try {
    Network({Layer::relu(), Layer::dense(Tensor(Shape{2, 3}), Tensor(Shape{2}))}, {2});
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_EQ(e.layer_index(), 1u);
  }
}

TEST(Network, FinalLayerMustBeDense) {
  EXPECT_THROW(Network({Layer::relu()}, {2}), ShapeError);
  EXPECT_THROW(Network({}, {2}), Error);
  EXPECT_THROW(Network({identity_dense(2)}, {2}, {"one"}), Error);
}

TEST(Network, RejectsNonFiniteParameters) {
  Tensor w(Shape{2, 2});
  w[0] = std::nan("");
  EXPECT_THROW(Network({Layer::dense(w, Tensor(Shape{2}))}, {2}), Error);
}

TEST(Network, ZeroStrideRejected) {
  const Layer bad = Layer::conv2d(Tensor(Shape{1, 1, 2, 2}), Tensor(Shape{1}), 0, 0);
  EXPECT_THROW(layer_output_shape(bad, {1, 4, 4}, 3), ShapeError);
}

TEST(PredictClass, Argmax) {
  EXPECT_EQ(argmax(std::vector<double>{0.1, 0.9, 0.3}), 1u);
  EXPECT_EQ(argmax(std::vector<double>{0.5, 0.5, 0.1}), 0u);
  const Network net({identity_dense(3)}, {3});
  const Prediction p = predict_class(net, Tensor::vector({3, 1, 2}));
  EXPECT_EQ(p.label, 0u);
  EXPECT_EQ(p.logits.data(), (std::vector<double>{3, 1, 2}));
}

TEST(Forward, DeterministicAndTraceConsistent) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Network net = testing_support::random_small_net(rng);
    const Tensor x = random_tensor(rng, net.input_shape(), -1, 1);
    const auto a = forward(net, x, true);
    const auto b = forward(net, x, true);
    EXPECT_EQ(a.logits, b.logits);
    const ActivationTrace& t = *a.trace;
    ASSERT_EQ(t.per_layer_inputs.size(), net.num_layers() + 1);
    EXPECT_EQ(t.per_layer_inputs[0], x);
    for (std::size_t i = 0; i < net.num_layers(); ++i) {
      EXPECT_EQ(apply_layer(net.layer(i), t.per_layer_inputs[i], i), t.per_layer_inputs[i + 1]);
    }
    EXPECT_EQ(t.logits(), a.logits);
  }
}

TEST(Forward, LinearNetsAreHomogeneous) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t in = rng.between(1, 6), hid = rng.between(1, 6), out = rng.between(1, 4);
    const Network net({Layer::dense(random_tensor(rng, {hid, in}, -1, 1), Tensor(Shape{hid})),
                       Layer::dense(random_tensor(rng, {out, hid}, -1, 1), Tensor(Shape{out}))},
                      {in});
    const Tensor x = random_tensor(rng, {in}, -1, 1);
    const double a = rng.uniform(-3, 3);
    const Tensor lhs = forward(net, scaled(x, a)).logits;
    const Tensor rhs = scaled(forward(net, x).logits, a);
    for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs[i], rhs[i], 1e-12);
  }
}

TEST(Network, ParametersStoredAtSinglePrecision) {
  Tensor w(Shape{1, 1}, std::vector<double>{0.1});
  const Network net({Layer::dense(w, Tensor(Shape{1}))}, {1});
  EXPECT_EQ(net.layer(0).weights[0], static_cast<double>(0.1f));
}
