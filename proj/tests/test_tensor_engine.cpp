#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace mtpn;

namespace {

std::vector<float> bias_of(const Tensor<float>& b) { return {b.data().begin(), b.data().end()}; }

Tensor<float> conv(const Tensor<float>& x, const Tensor<float>& w, std::span<const float> b, ops::Conv2dParams p) {
  return ops::conv2d<float>(x, w, b, p);
}

}  // namespace

// Mixed precision is rejected when the program is compiled.
template <class A, class B>
concept Addable = requires(A a, B b) { ops::add(a, b); };
static_assert(Addable<Tensor<float>, Tensor<float>>);
static_assert(!Addable<Tensor<float>, Tensor<double>>);
static_assert(Tensor<double>::precision() == Precision::double_);

TEST(Tensor, DataLengthMustMatchShape) {
  EXPECT_THROW(Tensor<float>(Shape{1, 2, 2, 2}, std::vector<float>(7)), ShapeError);
  EXPECT_THROW(Tensor<float>(Shape{1, 0, 2, 2}), ShapeError);
  Tensor<float> t(Shape{2, 3, 4, 5});
  EXPECT_EQ(t.numel(), 120);
  EXPECT_EQ(t.index(1, 2, 3, 4), 119u);
}

TEST(Conv2d, SingleMultiply) {
  const Tensor<float> x(Shape{1, 1, 1, 1}, 3.0f), w(Shape{1, 1, 1, 1}, 2.0f);
  auto [y, tally] = tally_scope([&] { return conv(x, w, {}, {}); });
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y[0], 6.0f);
  EXPECT_EQ(tally.macs, 1u);
  EXPECT_EQ(tally.flops, 2u);
}

TEST(Conv2d, ClosedFormMacCount) {
  const Tensor<float> x(Shape{1, 3, 64, 64}, 0.5f), w(Shape{16, 3, 3, 3}, 0.1f);
  auto [y, tally] = tally_scope([&] { return conv(x, w, {}, {1, 1, 1, 1, 1}); });
  EXPECT_EQ(y.shape(), (Shape{1, 16, 64, 64}));
  EXPECT_EQ(tally.macs, 1'769'472u);
  EXPECT_EQ(tally.flops, 3'538'944u);
}

TEST(Conv2d, BiasAddsOneFlopPerOutput) {
  std::mt19937_64 rng(3);
  const auto x = oracle::random_tensor<float>({2, 4, 5, 5}, rng), w = oracle::random_tensor<float>({3, 4, 3, 3}, rng);
  const auto b = oracle::random_tensor<float>({1, 3, 1, 1}, rng);
  auto [y, tally] = tally_scope([&] { return conv(x, w, b.data(), {1, 1, 0, 0, 1}); });
  const std::uint64_t outs = static_cast<std::uint64_t>(y.numel());
  EXPECT_EQ(tally.macs, outs * 4 * 9);
  EXPECT_EQ(tally.flops, 2 * tally.macs + outs);
}

TEST(Conv2d, MatchesNaiveOracleStride2) {
  std::mt19937_64 rng(11);
  const auto x = oracle::random_tensor<float>({1, 4, 8, 8}, rng), w = oracle::random_tensor<float>({6, 4, 3, 3}, rng);
  const auto y = conv(x, w, {}, {2, 2, 1, 1, 1});
  const auto ref = oracle::conv2d<float>(x, w, {}, 2, 2, 1, 1, 1);
  ASSERT_EQ(y.shape(), ref.shape());
  for (std::size_t i = 0; i < std::size_t(y.numel()); ++i) EXPECT_LE(oracle::rel_err(y[i], ref[i]), 1e-5) << i;
}

// Shape law and oracle agreement over sampled (k, s, p, groups), including
// depthwise layers, asymmetric stride/pad and inputs large enough to be
// processed in several column chunks.
TEST(Conv2d, ShapeLawAndOracleSweep) {
  std::mt19937_64 rng(12);
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  for (int t = 0; t < 60; ++t) {
    const int groups = t % 3 == 0 ? pick(1, 4) : 1;
    const bool depthwise = t % 6 == 0;
    const int cin = depthwise ? groups : groups * pick(1, 3);
    const int cout = depthwise ? groups : groups * pick(1, 3);
    const int kh = pick(1, 4), kw = pick(1, 4), sh = pick(1, 3), sw = pick(1, 3), ph = pick(0, 2), pw = pick(0, 2);
    const int h = pick(std::max(1, kh - 2 * ph), 11), w = pick(std::max(1, kw - 2 * pw), 11);
    const auto x = oracle::random_tensor<float>({pick(1, 2), cin, h, w}, rng);
    const auto wt = oracle::random_tensor<float>({cout, cin / groups, kh, kw}, rng);
    const auto b = oracle::random_tensor<float>({1, cout, 1, 1}, rng);
    const bool with_bias = pick(0, 1);
    const auto y = conv(x, wt, with_bias ? b.data() : std::span<const float>{}, {sh, sw, ph, pw, groups});
    EXPECT_EQ(y.shape().h, (h + 2 * ph - kh) / sh + 1);
    EXPECT_EQ(y.shape().w, (w + 2 * pw - kw) / sw + 1);
    EXPECT_EQ(y.shape().c, cout);
    const auto ref = oracle::conv2d<float>(x, wt, with_bias ? bias_of(b) : std::vector<float>{}, sh, sw, ph, pw, groups);
    for (std::size_t i = 0; i < std::size_t(y.numel()); ++i) ASSERT_LE(std::abs(y[i] - ref[i]), 1e-4f) << "case " << t;
  }
  // Enough im2col work to span several chunks.
  const auto x = oracle::random_tensor<float>({1, 64, 96, 96}, rng), wt = oracle::random_tensor<float>({4, 64, 3, 3}, rng);
  const auto y = conv(x, wt, {}, {1, 1, 1, 1, 1});
  const auto ref = oracle::conv2d<float>(x, wt, {}, 1, 1, 1, 1, 1);
  for (std::size_t i = 0; i < std::size_t(y.numel()); ++i) ASSERT_LE(oracle::rel_err(y[i], ref[i]), 1e-4) << i;
}

TEST(Conv2d, Linearity) {
  std::mt19937_64 rng(13);
  for (double a : {-2.5, 0.5, 3.0}) {
    const auto x = oracle::random_tensor<float>({1, 3, 7, 7}, rng), w = oracle::random_tensor<float>({5, 3, 3, 3}, rng);
    Tensor<float> ax = x;
    for (float& v : ax.data()) v = static_cast<float>(a * v);
    const auto y = conv(x, w, {}, {1, 1, 1, 1, 1}), ay = conv(ax, w, {}, {1, 1, 1, 1, 1});
    for (std::size_t i = 0; i < std::size_t(y.numel()); ++i) EXPECT_LE(oracle::rel_err(ay[i], a * y[i]), 1e-5);
  }
}

TEST(Conv2d, ErrorsNameTheDimension) {
  const Tensor<float> x(Shape{1, 4, 5, 5});
  try {
    conv(x, Tensor<float>(Shape{2, 3, 3, 3}), {}, {});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_FALSE(e.dimension().empty());
  }
  EXPECT_THROW(conv(x, Tensor<float>(Shape{3, 2, 1, 1}), {}, {1, 1, 0, 0, 2}), ShapeError);  // cout % groups
  EXPECT_THROW(conv(x, Tensor<float>(Shape{2, 1, 1, 1}), {}, {1, 1, 0, 0, 3}), ShapeError);  // cin % groups
  EXPECT_THROW(conv(x, Tensor<float>(Shape{2, 4, 7, 7}), {}, {}), ShapeError);               // output size
  const std::vector<float> bad_bias(3, 0.f);
  EXPECT_THROW(conv(x, Tensor<float>(Shape{2, 4, 1, 1}), bad_bias, {}), ShapeError);
}

TEST(Pointwise, ReluExample) {
  const Tensor<float> x(Shape{1, 1, 1, 3}, std::vector<float>{-1, 0, 2});
  EXPECT_EQ(ops::relu(x), (Tensor<float>(Shape{1, 1, 1, 3}, std::vector<float>{0, 0, 2})));
  const Tensor<float> y(Shape{1, 1, 1, 3}, std::vector<float>{-1, 3, 9});
  EXPECT_EQ(ops::relu6(y), (Tensor<float>(Shape{1, 1, 1, 3}, std::vector<float>{0, 3, 6})));
}

TEST(Pointwise, BatchnormIdentity) {
  std::mt19937_64 rng(14);
  const auto x = oracle::random_tensor<float>({2, 3, 4, 4}, rng);
  const std::vector<float> one(3, 1.f), zero(3, 0.f);
  EXPECT_EQ(ops::batchnorm_infer<float>(x, one, zero, zero, one, 0.f), x);
  EXPECT_THROW(ops::batchnorm_infer<float>(x, std::vector<float>(2, 1.f), zero, zero, one, 0.f), ShapeError);
}

TEST(Pointwise, BatchnormFormula) {
  std::mt19937_64 rng(15);
  const auto x = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
  const std::vector<double> g{2, -1}, b{0.5, 1}, m{0.1, -0.3}, v{4, 0.25};
  const auto y = ops::batchnorm_infer<double>(x, g, b, m, v, 1e-5);
  for (int c = 0; c < 2; ++c)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        EXPECT_NEAR(y.at(0, c, i, j), g[c] * (x.at(0, c, i, j) - m[c]) / std::sqrt(v[c] + 1e-5) + b[c], 1e-12);
}

TEST(Pointwise, SoftmaxSumsToOne) {
  std::mt19937_64 rng(16);
  for (int t = 0; t < 20; ++t) {
    const auto x = oracle::random_tensor<float>({2, 2, 5, 6}, rng, -10, 10);
    const auto y = ops::softmax_channels(x);
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 6; ++j) {
          EXPECT_NEAR(y.at(n, 0, i, j) + y.at(n, 1, i, j), 1.0, 1e-5);
          const double a = x.at(n, 0, i, j), b = x.at(n, 1, i, j);
          EXPECT_NEAR(y.at(n, 1, i, j), std::exp(b) / (std::exp(a) + std::exp(b)), 1e-6);
        }
  }
}

TEST(Pointwise, SigmoidAddConcat) {
  std::mt19937_64 rng(17);
  const auto a = oracle::random_tensor<double>({1, 2, 3, 3}, rng), b = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
  const auto s = ops::sigmoid(a);
  const auto sum = ops::add(a, b);
  for (std::size_t i = 0; i < 18; ++i) {
    EXPECT_NEAR(s[i], 1 / (1 + std::exp(-a[i])), 1e-15);
    EXPECT_EQ(sum[i], a[i] + b[i]);
  }
  const auto c = oracle::random_tensor<double>({1, 1, 3, 3}, rng);
  const std::vector<const Tensor<double>*> parts{&a, &c};
  const auto cat = ops::concat_channels<double>(parts);
  EXPECT_EQ(cat.shape(), (Shape{1, 3, 3, 3}));
  EXPECT_EQ(cat.at(0, 2, 1, 2), c.at(0, 0, 1, 2));
  EXPECT_EQ(cat.at(0, 1, 2, 0), a.at(0, 1, 2, 0));
  const auto d = oracle::random_tensor<double>({1, 1, 2, 3}, rng);
  const std::vector<const Tensor<double>*> bad{&a, &d};
  EXPECT_THROW(ops::concat_channels<double>(bad), ShapeError);
  EXPECT_THROW(ops::add(a, c), ShapeError);
}

TEST(Pooling, MatchesDirectWindows) {
  std::mt19937_64 rng(18);
  const auto x = oracle::random_tensor<double>({1, 2, 7, 6}, rng);
  const ops::PoolParams p{3, 2, 1};
  const auto mx = ops::maxpool(x, p), av = ops::avgpool(x, {2, 2, 0});
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t oy = 0; oy < mx.shape().h; ++oy)
      for (std::int64_t ox = 0; ox < mx.shape().w; ++ox) {
        double best = -1e300;
        for (int ky = 0; ky < 3; ++ky)
          for (int kx = 0; kx < 3; ++kx) {
            const std::int64_t iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
            if (iy >= 0 && ix >= 0 && iy < 7 && ix < 6) best = std::max(best, x.at(0, c, iy, ix));
          }
        EXPECT_EQ(mx.at(0, c, oy, ox), best);
      }
  for (std::int64_t c = 0; c < 2; ++c)
    for (std::int64_t oy = 0; oy < 3; ++oy)
      for (std::int64_t ox = 0; ox < 3; ++ox) {
        const double m = (x.at(0, c, 2 * oy, 2 * ox) + x.at(0, c, 2 * oy + 1, 2 * ox) + x.at(0, c, 2 * oy, 2 * ox + 1) +
                          x.at(0, c, 2 * oy + 1, 2 * ox + 1)) / 4;
        EXPECT_NEAR(av.at(0, c, oy, ox), m, 1e-14);
      }
  const auto g = ops::global_avgpool(x);
  double s = 0;
  for (int i = 0; i < 42; ++i) s += x[std::size_t(i)];
  EXPECT_NEAR(g.at(0, 0, 0, 0), s / 42, 1e-14);
}

TEST(Resize, ConstantField) {
  const Tensor<float> x(Shape{1, 1, 1, 1}, 5.0f);
  const auto y = ops::resize_bilinear(x, 4, 4);
  for (float v : y.data()) EXPECT_EQ(v, 5.0f);
  const Tensor<float> c(Shape{1, 2, 3, 5}, -1.25f);
  const auto yc = ops::resize_bilinear(c, 9, 15);
  for (float v : yc.data()) EXPECT_EQ(v, -1.25f);
}

TEST(Resize, TwoByTwoToFourByFour) {
  const Tensor<double> x(Shape{1, 1, 2, 2}, std::vector<double>{0, 1, 2, 3});
  const auto y = ops::resize_bilinear(x, 4, 4);
  const std::vector<double> src{0, 1, 2, 3};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) EXPECT_NEAR(y.at(0, 0, i, j), oracle::bilinear_pixel(src, 2, 2, 4, 4, i, j), 1e-6);
  EXPECT_NEAR(y.at(0, 0, 0, 0), 0.0, 1e-12);
  EXPECT_NEAR(y.at(0, 0, 3, 3), 3.0, 1e-12);
  EXPECT_NEAR(y.at(0, 0, 1, 1), 0.75, 1e-12);
}

TEST(Resize, RandomAgainstScalarOracle) {
  std::mt19937_64 rng(19);
  for (int t = 0; t < 10; ++t) {
    const std::int64_t h = 1 + t % 4, w = 2 + t % 3, oh = 1 + (t * 7) % 9, ow = 1 + (t * 5) % 8;
    const auto x = oracle::random_tensor<double>({1, 1, h, w}, rng);
    const std::vector<double> src(x.data().begin(), x.data().end());
    const auto y = ops::resize_bilinear(x, oh, ow);
    for (std::int64_t i = 0; i < oh; ++i)
      for (std::int64_t j = 0; j < ow; ++j)
        EXPECT_NEAR(y.at(0, 0, i, j), oracle::bilinear_pixel(src, h, w, oh, ow, i, j), 1e-12);
  }
}

TEST(Resize, SameSizeIsBitwiseIdentity) {
  std::mt19937_64 rng(20);
  const auto x = oracle::random_tensor<float>({2, 3, 5, 7}, rng);
  EXPECT_EQ(ops::resize_bilinear(x, 5, 7), x);
}

TEST(Fusion, CoefficientsAndDegenerateWeights) {
  std::mt19937_64 rng(21);
  const auto a = oracle::random_tensor<double>({1, 2, 3, 3}, rng), b = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
  const std::vector<const Tensor<double>*> in{&a, &b};
  const std::vector<double> ones{1, 1};
  const auto mean = ops::weighted_fusion<double>(in, ones, 0.0);
  for (std::size_t i = 0; i < 18; ++i) EXPECT_NEAR(mean[i], (a[i] + b[i]) / 2, 1e-15);
  const std::vector<double> pass{0, 1};
  EXPECT_EQ(ops::weighted_fusion<double>(in, pass, 0.0), b);
  std::uniform_real_distribution<double> u(0, 3);
  for (int t = 0; t < 100; ++t) {
    const std::vector<double> w{u(rng), u(rng), u(rng)};
    const auto c = ops::fusion_coefficients<double>(w, 1e-4);
    double s = 0;
    for (double v : c) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
      s += v;
    }
    EXPECT_LE(s, 1.0);
  }
}

TEST(Vjp, ReluExamples) {
  const Tensor<double> x(Shape{1, 1, 1, 2}, std::vector<double>{2, -2});
  const Tensor<double> up(Shape{1, 1, 1, 2}, 1.0);
  const auto g = vjp::relu(x, up);
  EXPECT_EQ(g[0], 1.0);
  EXPECT_EQ(g[1], 0.0);
}

TEST(Vjp, AddPassesUpstreamThrough) {
  std::mt19937_64 rng(22);
  const auto up = oracle::random_tensor<double>({1, 2, 3, 3}, rng);
  const auto [ga, gb] = vjp::add(up);
  EXPECT_EQ(ga, up);
  EXPECT_EQ(gb, up);
}

TEST(Vjp, UpstreamShapeIsChecked) {
  const Tensor<double> x(Shape{1, 1, 2, 2});
  EXPECT_THROW(vjp::relu(x, Tensor<double>(Shape{1, 1, 2, 3})), ShapeError);
}

TEST(Vjp, NonDifferentiablePathsRaise) {
  using V = ag::Var<double>;
  const V x = V::leaf(Tensor<double>(Shape{1, 2, 2, 2}, 0.5), true);
  EXPECT_THROW(ag::backward(ag::global_avgpool(ag::argmax_channels(x))), GradientError);
  const V t = ag::global_avgpool(ag::threshold(ag::sigmoid(x), 0.5));
  EXPECT_THROW(ag::backward(t, Tensor<double>(t.shape(), 1.0)), GradientError);
}

TEST(Vjp, ConvParameterGradientFiniteDifferences) {
  std::mt19937_64 rng(23);
  using V = ag::Var<double>;
  const auto x = oracle::random_tensor<double>({1, 2, 5, 5}, rng);
  const auto w = oracle::random_tensor<double>({3, 2, 3, 3}, rng);
  const auto b = oracle::random_tensor<double>({1, 3, 1, 1}, rng);
  const double err = gradcheck::check({x, w, b}, [](const std::vector<V>& v) {
    return ag::conv2d(v[0], v[1], v[2], {1, 1, 1, 1, 1});
  }, rng);
  EXPECT_LE(err, 1e-4);
}

// Every differentiable op against central differences, 20 instances each.
TEST(Vjp, AllOpsMatchFiniteDifferences) {
  for (const auto& r : gradcheck::run_all(2024, 20)) {
    EXPECT_GE(r.instances, 20) << r.op;
    EXPECT_LE(r.worst, 1e-4) << r.op;
  }
}

TEST(Vjp, ChainThroughSmallGraph) {
  // conv -> bn -> relu6 -> resize -> add(skip) -> softmax, checked end to end.
  std::mt19937_64 rng(24);
  using V = ag::Var<double>;
  const Tensor<double> mean = oracle::random_tensor<double>({1, 2, 1, 1}, rng);
  const Tensor<double> var = oracle::random_tensor<double>({1, 2, 1, 1}, rng, 0.5, 1.5);
  const double err = gradcheck::check(
      {oracle::random_tensor<double>({1, 3, 4, 4}, rng), oracle::random_tensor<double>({2, 3, 3, 3}, rng),
       oracle::random_tensor<double>({1, 2, 1, 1}, rng, 0.5, 1.5), oracle::random_tensor<double>({1, 2, 1, 1}, rng),
       oracle::random_tensor<double>({1, 2, 4, 4}, rng)},
      [&](const std::vector<V>& v) {
        V y = ag::conv2d(v[0], v[1], V{}, {2, 2, 1, 1, 1});
        y = ag::relu6(ag::batchnorm(y, v[2], v[3], V::constant(mean), V::constant(var), 1e-5));
        y = ag::add(ag::resize_bilinear(y, 4, 4), v[4]);
        return ag::softmax_channels(y);
      },
      rng);
  EXPECT_LE(err, 1e-4);
}

TEST(Tally, EmptyComputation) {
  const OpTally t = tally_scope([] {});
  EXPECT_EQ(t.macs, 0u);
  EXPECT_EQ(t.flops, 0u);
  EXPECT_TRUE(t.per_op.empty());
}

TEST(Tally, PerElementConvention) {
  std::mt19937_64 rng(25);
  const auto x = oracle::random_tensor<float>({1, 3, 4, 6}, rng);
  const std::uint64_t n = 72;
  EXPECT_EQ(tally_scope([&] { return ops::relu(x); }).second.flops, n);
  EXPECT_EQ(tally_scope([&] { return ops::relu6(x); }).second.flops, n);
  EXPECT_EQ(tally_scope([&] { return ops::sigmoid(x); }).second.flops, 4 * n);
  EXPECT_EQ(tally_scope([&] { return ops::softmax_channels(x); }).second.flops, 5 * n);
  EXPECT_EQ(tally_scope([&] { return ops::add(x, x); }).second.flops, n);
  const std::vector<float> ones(3, 1.f), zeros(3, 0.f);
  EXPECT_EQ(tally_scope([&] { return ops::batchnorm_infer<float>(x, ones, zeros, zeros, ones, 1e-5f); }).second.flops, 2 * n);
  EXPECT_EQ(tally_scope([&] { return ops::resize_bilinear(x, 8, 12); }).second.flops, 8u * 3 * 8 * 12);
  EXPECT_EQ(tally_scope([&] { return ops::maxpool(x, {3, 2, 1}); }).second.flops, 9u * 3 * 2 * 3);
  const std::vector<const Tensor<float>*> three{&x, &x, &x};
  const std::vector<float> w{1, 1, 1};
  EXPECT_EQ(tally_scope([&] { return ops::weighted_fusion<float>(three, w, 1e-4f); }).second.flops, 5 * n);
  const std::vector<const Tensor<float>*> two{&x, &x};
  EXPECT_EQ(tally_scope([&] { return ops::concat_channels<float>(two); }).second.flops, 0u);
}

TEST(Tally, DeterministicNestedAndSummed) {
  std::mt19937_64 rng(26);
  const auto x = oracle::random_tensor<float>({1, 4, 9, 9}, rng), w = oracle::random_tensor<float>({8, 4, 3, 3}, rng);
  auto run = [&] {
    return tally_scope([&] {
      auto y = conv(x, w, {}, {2, 2, 1, 1, 1});
      const OpTally inner = tally_scope([&] { (void)ops::relu(y); });
      EXPECT_EQ(inner.per_op.size(), 1u);
      return ops::sigmoid(y);
    });
  };
  const auto a = run(), b = run();
  EXPECT_EQ(a.second, b.second);
  ASSERT_EQ(a.second.per_op.size(), 3u);  // conv, then the nested relu, then sigmoid
  std::uint64_t m = 0, f = 0;
  for (const auto& r : a.second.per_op) {
    m += r.macs;
    f += r.flops;
    EXPECT_GE(r.flops, r.macs);
  }
  EXPECT_EQ(m, a.second.macs);
  EXPECT_EQ(f, a.second.flops);
  EXPECT_EQ(a.second.per_op[0].flops, 2 * a.second.per_op[0].macs);
  EXPECT_FALSE(tally_active());
}

TEST(Threads, FixedCountIsBitwiseReproducibleAndCountsAgree) {
  std::mt19937_64 rng(27);
  const auto x = oracle::random_tensor<float>({1, 32, 40, 40}, rng), w = oracle::random_tensor<float>({48, 32, 3, 3}, rng);
  blas::set_num_threads(1);
  const auto a = conv(x, w, {}, {1, 1, 1, 1, 1}), b = conv(x, w, {}, {1, 1, 1, 1, 1});
  EXPECT_EQ(a, b);
  blas::set_num_threads(2);
  const auto c = conv(x, w, {}, {1, 1, 1, 1, 1});
  blas::set_num_threads(1);
  for (std::size_t i = 0; i < std::size_t(a.numel()); ++i) EXPECT_LE(oracle::rel_err(a[i], c[i]), 1e-5);
}
