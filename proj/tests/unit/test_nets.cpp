#include <gtest/gtest.h>

#include <cmath>

#include "brainseg/nets.hpp"
#include "brainseg/rng.hpp"
#include "oracles/gradcheck.hpp"

using namespace brainseg;

namespace {

// Layer-by-layer tally, written from the layer formulas rather than the network code.
std::size_t conv_params(std::size_t k, std::size_t in, std::size_t out, bool bias) {
  return k * k * in * out + (bias ? out : 0);
}
std::size_t block_params(std::size_t in, std::size_t out) {
  return conv_params(3, in, out, false) + 2 * out + conv_params(3, out, out, false) + 2 * out;
}
std::size_t unet_tally(std::size_t in, const std::vector<std::size_t>& ch, std::size_t classes) {
  std::size_t n = 0, c = in;
  for (auto e : ch) {
    n += block_params(c, e);
    c = e;
  }
  for (std::size_t l = 0; l + 1 < ch.size(); ++l) n += 4 * ch[l + 1] * ch[l] + ch[l] + block_params(2 * ch[l], ch[l]);
  return n + conv_params(1, ch[0], classes, true);
}

template <class T>
Array<T> random_images(Rng& rng, Shape s, double lo = -1.0, double hi = 1.0) {
  Array<T> x(std::move(s));
  for (auto& v : x) v = T(uniform(rng, lo, hi));
  return x;
}

UNetConfig small_unet() { return {4, {4, 6, 8}, 4}; }

}  // namespace

TEST(Build, ParameterCountMatchesTally) {
  UNetConfig cfg;
  cfg.out_channels = 2;
  const auto net = build_segmenter<float>(cfg, 1);
  EXPECT_EQ(nn::parameter_count(net), unet_tally(4, {64, 128, 256, 320}, 2));
  const UNetConfig small{3, {5, 7}, 2};
  EXPECT_EQ(nn::parameter_count(build_segmenter<float>(small, 1)), unet_tally(3, {5, 7}, 2));
}

TEST(Build, DiscriminatorTally) {
  DiscriminatorConfig cfg;
  const auto d = build_discriminator<float>(cfg, 1);
  const std::size_t b = cfg.base_channels;
  EXPECT_EQ(nn::parameter_count(d), conv_params(3, 4, b, true) + conv_params(5, b, 2 * b, true) +
                                        conv_params(3, 2 * b, 2 * b, true) + conv_params(1, 2 * b, 1, true));
}

TEST(Build, SameSeedSameParameters) {
  const auto a = build_segmenter<float>(small_unet(), 11), b = build_segmenter<float>(small_unet(), 11);
  const auto c = build_segmenter<float>(small_unet(), 12);
  EXPECT_EQ(nn::parameter_hash(a), nn::parameter_hash(b));
  EXPECT_NE(nn::parameter_hash(a), nn::parameter_hash(c));
}

TEST(Build, XavierVariance) {
  const auto net = build_segmenter<double>(UNetConfig{}, 3);
  int checked = 0;
  for (const auto* p : net.params()) {
    if (p->fan_in + p->fan_out == 0 || p->value.size() < 10000) continue;
    double mean = 0, sq = 0;
    for (double v : p->value) mean += v;
    mean /= double(p->value.size());
    for (double v : p->value) sq += (v - mean) * (v - mean);
    const double var = sq / double(p->value.size());
    const double expected = 2.0 / double(p->fan_in + p->fan_out);
    EXPECT_NEAR(var / expected, 1.0, 0.1) << p->name;
    ++checked;
  }
  EXPECT_GT(checked, 5);
}

TEST(Build, BiasesZeroAndNormScalesOne) {
  const auto net = build_segmenter<float>(small_unet(), 4);
  for (const auto* p : net.params()) {
    if (p->name.ends_with(".bias") || p->name.ends_with(".beta"))
      for (float v : p->value) EXPECT_EQ(v, 0.0f) << p->name;
    if (p->name.ends_with(".gamma"))
      for (float v : p->value) EXPECT_EQ(v, 1.0f) << p->name;
  }
}

TEST(Build, InvalidChainsThrow) {
  EXPECT_THROW(build_segmenter<float>(UNetConfig{4, {64}, 4}, 1), ConstructionError);
  EXPECT_THROW(build_segmenter<float>(UNetConfig{4, {64, 0, 32}, 4}, 1), ConstructionError);
  EXPECT_THROW(build_segmenter<float>(UNetConfig{0, {4, 8}, 4}, 1), ConstructionError);
  DiscriminatorConfig d;
  d.downsample = 0;
  EXPECT_THROW(build_discriminator<float>(d, 1), ConstructionError);
}

TEST(SegForward, SoftmaxSumsToOneOn100Batches) {
  const auto net = build_segmenter<float>(small_unet(), 5);
  Rng rng = make_rng(5);
  for (int t = 0; t < 100; ++t) {
    const auto x = random_images<float>(rng, {2, 4, 8, 8}, -3, 3);
    const auto p = seg_forward(net, x);
    ASSERT_EQ(p.shape(), (Shape{2, 4, 8, 8}));
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t i = 0; i < 64; ++i) {
        double s = 0;
        for (std::size_t c = 0; c < 4; ++c) {
          const float v = p[(n * 4 + c) * 64 + i];
          EXPECT_GE(v, 0.0f);
          EXPECT_LE(v, 1.0f);
          s += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-5);
      }
  }
}

TEST(SegForward, PreservesSpatialShape) {
  const auto net = build_segmenter<float>(UNetConfig{4, {8, 16, 16, 16}, 4}, 6);
  Rng rng = make_rng(6);
  EXPECT_EQ(seg_forward(net, random_images<float>(rng, {1, 4, 128, 128})).shape(), (Shape{1, 4, 128, 128}));
}

TEST(SegForward, NonDivisibleThrowsUnlessPadded) {
  const auto net = build_segmenter<float>(small_unet(), 7);
  Rng rng = make_rng(7);
  const auto x = random_images<float>(rng, {1, 4, 10, 7});
  EXPECT_THROW(seg_forward(net, x), ShapeError);
  const auto p = seg_forward_padded(net, x);
  EXPECT_EQ(p.shape(), (Shape{1, 4, 10, 7}));
  auto [padded, rec] = pad_to_multiple(x, 4);
  EXPECT_EQ(padded.shape(), (Shape{1, 4, 12, 8}));
  EXPECT_EQ(rec.pad_bottom, 2u);
  EXPECT_EQ(rec.pad_right, 1u);
  EXPECT_EQ(crop_padding(padded, rec), x);
}

TEST(SegForward, BatchDuplicationDuplicatesOutputs) {
  const auto net = build_segmenter<float>(small_unet(), 8);
  Rng rng = make_rng(8);
  const auto one = random_images<float>(rng, {1, 4, 8, 8});
  Array<float> two({2, 4, 8, 8});
  std::copy(one.begin(), one.end(), two.begin());
  std::copy(one.begin(), one.end(), two.begin() + one.size());
  const auto p1 = seg_forward(net, one), p2 = seg_forward(net, two);
  for (std::size_t i = 0; i < p1.size(); ++i) {
    EXPECT_EQ(p2[i], p1[i]);
    EXPECT_EQ(p2[i + p1.size()], p1[i]);
  }
}

TEST(SegForward, Deterministic) {
  Rng rng = make_rng(9);
  const auto x = random_images<float>(rng, {2, 4, 16, 16});
  EXPECT_EQ(seg_forward(build_segmenter<float>(small_unet(), 2), x),
            seg_forward(build_segmenter<float>(small_unet(), 2), x));
}

TEST(GenForward, RangeAndShape) {
  const auto g = build_generator<float>(GeneratorConfig{4, {4, 8, 8}}, 10);
  Rng rng = make_rng(10);
  for (int t = 0; t < 10; ++t) {
    const auto y = gen_forward(g, random_images<float>(rng, {3, 4, 64, 64}));
    ASSERT_EQ(y.shape(), (Shape{3, 4, 64, 64}));
    for (float v : y) {
      EXPECT_GT(v, -1.0f);
      EXPECT_LT(v, 1.0f);
    }
  }
}

TEST(GenForward, ZeroHeadGivesZero) {
  auto g = build_generator<float>(GeneratorConfig{4, {4, 8, 8}}, 11);
  g.head().weight.value.fill(0.0f);
  g.head().bias.value.fill(0.0f);
  Rng rng = make_rng(11);
  for (float v : gen_forward(g, random_images<float>(rng, {2, 4, 16, 16}))) EXPECT_EQ(v, 0.0f);
}

TEST(GenForward, OutOfRangeInputRejected) {
  const auto g = build_generator<float>(GeneratorConfig{4, {4, 8}}, 12);
  Array<float> x({1, 4, 8, 8}, 0.0f);
  x[5] = 1.5f;
  EXPECT_THROW(gen_forward(g, x), NormalizationError);
}

TEST(DiscForward, MapShapeAndRange) {
  const auto d = build_discriminator<float>(DiscriminatorConfig{}, 13);
  Rng rng = make_rng(13);
  // Shape oracle: ceil division by the total downsampling factor.
  for (std::size_t n : {64u, 128u, 5u, 7u, 33u}) {
    const auto m = disc_forward(d, random_images<float>(rng, {2, 4, n, n + 3}));
    EXPECT_EQ(m.shape(), (Shape{2, 1, (n + 4) / 5, (n + 7) / 5}));
    for (float v : m) {
      EXPECT_GT(v, 0.0f);
      EXPECT_LT(v, 1.0f);
    }
  }
  EXPECT_EQ(disc_forward(d, random_images<float>(rng, {1, 4, 64, 64})).shape(), (Shape{1, 1, 13, 13}));
  EXPECT_EQ(disc_forward(d, random_images<float>(rng, {1, 4, 128, 128})).shape(), (Shape{1, 1, 26, 26}));
}

TEST(DiscForward, TooSmallOrOutOfRange) {
  const auto d = build_discriminator<float>(DiscriminatorConfig{}, 14);
  EXPECT_THROW(disc_forward(d, Array<float>({1, 4, 4, 9}, 0.0f)), ShapeError);
  EXPECT_THROW(disc_forward(d, Array<float>({1, 4, 10, 10}, -2.0f)), NormalizationError);
}

namespace {

template <class Net>
void expect_all_params_reached(Net& net, const Array<float>& x, std::uint64_t seed) {
  nn::Tape<float> tape;
  const auto y = net.forward(x, &tape);
  Rng rng = make_rng(seed);
  Array<float> dy(y.shape());
  for (auto& v : dy) v = float(uniform(rng, -1, 1));
  nn::zero_grad(net);
  net.backward(dy, tape);
  for (const auto* p : net.params()) {
    double s = 0;
    for (float g : p->grad) s += std::abs(g);
    EXPECT_GT(s, 0.0) << p->name;
  }
}

}  // namespace

TEST(GradientFlow, EveryParameterReceivesGradient) {
  Rng rng = make_rng(15);
  auto s = build_segmenter<float>(UNetConfig{4, {8, 16, 16, 16}, 4}, 15);
  expect_all_params_reached(s, random_images<float>(rng, {2, 4, 32, 32}), 1);
  auto g = build_generator<float>(GeneratorConfig{}, 16);
  expect_all_params_reached(g, random_images<float>(rng, {2, 4, 32, 32}), 2);
  auto d = build_discriminator<float>(DiscriminatorConfig{}, 17);
  expect_all_params_reached(d, random_images<float>(rng, {2, 4, 32, 32}), 3);
}

TEST(GradientFlow, FrozenParametersKeepZeroGradient) {
  Rng rng = make_rng(18);
  auto d = build_discriminator<float>(DiscriminatorConfig{}, 18);
  nn::set_trainable(d, false);
  nn::Tape<float> tape;
  const auto x = random_images<float>(rng, {1, 4, 10, 10});
  const auto y = d.forward(x, &tape);
  nn::zero_grad(d);
  const auto dx = d.backward(Array<float>(y.shape(), 1.0f), tape);
  for (const auto* p : d.params())
    for (float v : p->grad) EXPECT_EQ(v, 0.0f);
  double s = 0;
  for (float v : dx) s += std::abs(v);
  EXPECT_GT(s, 0.0);
}

namespace {

// Checks d(sum r*out)/d(input) and d/d(params) against central differences.
template <class Net>
void finite_difference_check(Net& net, Shape in_shape, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  const auto x = random_images<double>(rng, in_shape, -0.9, 0.9);
  nn::Tape<double> tape;
  const auto y = net.forward(x, &tape);
  Array<double> r(y.shape());
  for (auto& v : r) v = uniform(rng, -1, 1);
  auto loss_of = [&](const Array<double>& in) {
    const auto out = net.forward(in, nullptr);
    double s = 0;
    for (std::size_t i = 0; i < out.size(); ++i) s += r[i] * out[i];
    return s;
  };
  nn::zero_grad(net);
  const auto dx = net.backward(r, tape);

  const auto num_x = oracle::numeric_gradient(
      [&](const std::vector<double>& v) { return loss_of(Array<double>(x.shape(), v)); }, x.storage(), 1e-6);
  EXPECT_LT(oracle::max_rel_error(dx.storage(), num_x, 1e-6), 1e-3);

  for (auto* p : net.params()) {
    std::vector<double> analytic(p->grad.begin(), p->grad.end());
    const Array<double> keep = p->value;
    const auto num = oracle::numeric_gradient(
        [&](const std::vector<double>& v) {
          std::copy(v.begin(), v.end(), p->value.begin());
          const double out = loss_of(x);
          std::copy(keep.begin(), keep.end(), p->value.begin());
          return out;
        },
        keep.storage(), 1e-6);
    EXPECT_LT(oracle::max_rel_error(analytic, num, 1e-6), 1e-3) << p->name;
  }
}

}  // namespace

TEST(GradientCheck, SegmenterDouble) {
  auto s = build_segmenter<double>(UNetConfig{2, {3, 4}, 3}, 19);
  finite_difference_check(s, {2, 2, 4, 6}, 19);
}

TEST(GradientCheck, GeneratorDouble) {
  auto g = build_generator<double>(GeneratorConfig{2, {3, 4}}, 20);
  finite_difference_check(g, {1, 2, 4, 4}, 20);
}

TEST(GradientCheck, DiscriminatorDouble) {
  auto d = build_discriminator<double>(DiscriminatorConfig{2, 2, 5, 0.2}, 21);
  finite_difference_check(d, {1, 2, 7, 11}, 21);
}
