#include <gtest/gtest.h>

#include "omg/encoder.hpp"

using namespace omg;
using namespace omg::perception;

namespace {

FeatureMap<double> grid(std::size_t h, std::size_t w, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1, 1);
  std::vector<double> v(h * w * c);
  for (auto& x : v) x = d(rng);
  return {h, w, c, Tensor<double>(Shape{h * w, c}, std::move(v))};
}

std::vector<double> values(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(PixelShuffle, FactorOneIsIdentity) {
  const auto f = grid(4, 6, 3, 1);
  const auto g = pixel_shuffle_down(f, 1);
  EXPECT_EQ(g.h, 4u);
  EXPECT_EQ(g.w, 6u);
  EXPECT_EQ(values(g.data), values(f.data));
}

TEST(PixelShuffle, TwoByTwoBlockBecomesOneCellInRowMajorOrder) {
  // [a b; c d] with one channel
  FeatureMap<double> f{2, 2, 1, Tensor<double>(Shape{4, 1}, {1, 2, 3, 4})};
  const auto g = pixel_shuffle_down(f, 2);
  ASSERT_EQ(g.h * g.w, 1u);
  ASSERT_EQ(g.c, 4u);
  EXPECT_EQ(values(g.data), (std::vector<double>{1, 2, 3, 4}));
}

TEST(PixelShuffle, ChannelsStayInnermost) {
  FeatureMap<double> f{2, 2, 2, Tensor<double>(Shape{4, 2}, {10, 11, 20, 21, 30, 31, 40, 41})};
  EXPECT_EQ(values(pixel_shuffle_down(f, 2).data), (std::vector<double>{10, 11, 20, 21, 30, 31, 40, 41}));
}

TEST(PixelShuffle, RoundTripIsBitExact) {
  for (std::size_t r : {1u, 2u, 4u}) {
    const auto f = grid(8, 8, 3, r);
    const auto back = pixel_shuffle_up(pixel_shuffle_down(f, r), r);
    EXPECT_EQ(back.h, f.h);
    EXPECT_EQ(back.c, f.c);
    EXPECT_EQ(values(back.data), values(f.data)) << "r=" << r;
  }
}

TEST(PixelShuffle, NonDivisibleGridIsADimensionError) {
  EXPECT_THROW(pixel_shuffle_down(grid(3, 4, 1, 0), 2), DimensionError);
  EXPECT_THROW(pixel_shuffle_down(grid(4, 6, 1, 0), 4), DimensionError);
}

TEST(PixelShuffle, GradientIsThePermutationTransposed) {
  Tape<double> tape;
  const auto f = grid(4, 4, 2, 5);
  FeatureMap<double> leaf{4, 4, 2, tape.leaf(f.data)};
  const auto g = pixel_shuffle_down(leaf, 2);
  std::vector<double> w(g.data.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<double>(i);
  tape.backward(sum(mul(g.data, Tensor<double>(g.data.shape(), w))));
  const auto idx = space_to_depth_index(4, 4, 2, 2);
  for (std::size_t i = 0; i < idx->size(); ++i) EXPECT_EQ(leaf.data.grad()[(*idx)[i]], static_cast<double>(i));
}

TEST(EncoderConfig, TokenCountContract) {
  EncoderConfig c;
  c.patch_stride = 8;
  c.shuffle_factor = 2;
  c.stage_channels = {8};
  EXPECT_EQ(c.tokens_for(64, 64), 16u);
  c.patch_stride = 32;
  c.stage_channels = {8, 8, 8, 8};
  EXPECT_EQ(c.tokens_for(1024, 1024), 256u);
  for (std::size_t ps : {2u, 4u, 8u})
    for (std::size_t sf : {1u, 2u}) {
      c.patch_stride = ps;
      c.shuffle_factor = sf;
      c.stage_channels = {4};
      for (std::size_t side : {32u, 64u, 96u})
        EXPECT_EQ(c.tokens_for(side, side), side * side / (ps * sf * ps * sf));
    }
}

TEST(EncoderConfig, NonDivisibleImageIsAConfigError) {
  EncoderConfig c;
  EXPECT_THROW(c.validate_image(60, 64), ConfigError);
  EXPECT_THROW(c.validate_image(64, 0), ConfigError);
  c.stage_channels = {4, 4, 4};
  c.patch_stride = 2;  // three stages need a multiple of 4
  EXPECT_THROW(c.stage_strides(), ConfigError);
}

TEST(VisualEncoder, OutputGridAndWidth) {
  ParamStore<double> store;
  Rng rng(3);
  EncoderConfig c;
  VisualEncoder<double> enc(store, c, rng);
  Image img(64, 64);
  Tape<double> tape(false);
  const auto f = enc.encode(tape, img);
  EXPECT_EQ(f.h, 8u);
  EXPECT_EQ(f.w, 8u);
  EXPECT_EQ(f.c, 32u);
  EXPECT_EQ(f.data.shape(), (Shape{64, 32}));
  EXPECT_THROW(enc.encode(tape, Image(60, 64)), ConfigError);
}

TEST(VisualEncoder, ConstantImageGivesIdenticalCells) {
  ParamStore<double> store;
  Rng rng(9);
  VisualEncoder<double> enc(store, EncoderConfig{}, rng);
  for (float level : {0.0f, 0.4f}) {
    Image img(64, 64);
    std::fill(img.rgb.begin(), img.rgb.end(), level);
    Tape<double> tape(false);
    const auto f = enc.encode(tape, img);
    for (std::size_t cell = 1; cell < f.cells(); ++cell)
      for (std::size_t ch = 0; ch < f.c; ++ch) ASSERT_EQ(f.data.at(cell, ch), f.data.at(0, ch));
  }
}

TEST(VisualEncoder, Deterministic) {
  ParamStore<float> store;
  Rng rng(1);
  VisualEncoder<float> enc(store, EncoderConfig{}, rng);
  Image img(64, 64);
  for (std::size_t i = 0; i < img.rgb.size(); ++i) img.rgb[i] = static_cast<float>((i * 37) % 101) / 100.0f;
  Tape<float> a(false), b(false);
  const auto x = enc.encode(a, img), y = enc.encode(b, img);
  EXPECT_TRUE(std::equal(x.data.data().begin(), x.data.data().end(), y.data.data().begin()));
}
