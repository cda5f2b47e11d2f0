#include <gtest/gtest.h>

#include "support/op_cases.hpp"

using namespace omg;
using namespace omg::testing;

namespace {

Tensor<double> t2(std::size_t r, std::size_t c, std::vector<double> v) { return Tensor<double>({r, c}, std::move(v)); }

}  // namespace

TEST(Matmul, IdentityAndHandArithmetic) {
  const auto x = t2(2, 3, {1, 2, 3, 4, 5, 6});
  const auto y = matmul(t2(2, 2, {1, 0, 0, 1}), x);
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), std::vector<double>(x.data().begin(), x.data().end()));
  EXPECT_DOUBLE_EQ(matmul(t2(1, 2, {1, 2}), t2(2, 1, {3, 4})).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  try {
    matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos) << e.what();
  }
}

TEST(Matmul, RandomGradientsWithinOneInHundredThousand) {
  std::mt19937_64 rng(3);
  const Leaves in{random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)};
  EXPECT_LT(input_grad_error(in, [](auto&, const Leaves& x) { return probe(matmul(x[0], x[1]), 1); }), 1e-5);
}

TEST(Softmax, SymmetricAndStable) {
  const auto u = softmax(t2(1, 3, {0, 0, 0}), 1);
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  const auto s = softmax(t2(1, 2, {1000, 0}), 1);
  EXPECT_DOUBLE_EQ(s[0], 1.0);
  EXPECT_GE(s[1], 0.0);
  EXPECT_LT(s[1], 1e-300);
}

TEST(Softmax, RowsSumToOneUpToMagnitudeTenThousand) {
  std::mt19937_64 rng(5);
  for (double mag : {1.0, 100.0, 1e4}) {
    const auto x = random_tensor({16, 9}, rng, -mag, mag);
    const auto f = x.detach();
    std::vector<float> v(f.data().begin(), f.data().end());
    const auto y = softmax(Tensor<float>({16, 9}, v), 1);
    for (std::size_t r = 0; r < 16; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 9; ++c) total += y.at(r, c);
      EXPECT_NEAR(total, 1.0, 1e-6) << "magnitude " << mag;
    }
  }
}

TEST(Elementwise, SigmoidAtZeroAndConstantLayerNorm) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor<double>::scalar(0)).item(), 0.5);
  const auto y = layer_norm(Tensor<double>::full({2, 5}, 3.25));
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(Elementwise, BroadcastOnlyScalarOrTrailingVector) {
  EXPECT_THROW(add(Tensor<double>::zeros({3, 4}), Tensor<double>::zeros({3})), DimensionError);
  EXPECT_THROW(mul(Tensor<double>::zeros({3, 4}), Tensor<double>::zeros({4, 3})), DimensionError);
  EXPECT_NO_THROW(add(Tensor<double>::zeros({3, 4}), Tensor<double>::zeros({4})));
}

TEST(Backward, HandCalculus) {
  Tape<double> tape;
  auto x = tape.leaf({3}, {5, -1, 2});
  tape.backward(sum(x));
  EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{1, 1, 1}));

  Tape<double> tape2;
  auto y = tape2.leaf({2}, {1, 2});
  tape2.backward(sum(mul(y, y)));
  EXPECT_EQ(std::vector<double>(y.grad().begin(), y.grad().end()), (std::vector<double>{2, 4}));
}

TEST(Backward, NonScalarLossIsAContractError) {
  Tape<double> tape;
  auto x = tape.leaf({2}, {1, 2});
  EXPECT_THROW(tape.backward(scale(x, 2.0)), ContractError);
}

TEST(Backward, UnreachableAndFrozenLeavesGetNoGradient) {
  Tape<double> tape;
  auto a = tape.leaf({2}, {1, 2});
  auto b = tape.leaf({2}, {3, 4});
  auto c = tape.leaf({2}, {5, 6}, false);
  tape.backward(sum(mul(a, c)));
  EXPECT_TRUE(a.has_grad());
  EXPECT_FALSE(b.has_grad());
  EXPECT_FALSE(c.has_grad());
}

TEST(Backward, CompositeMlpMatchesFiniteDifferences) {
  std::mt19937_64 rng(11);
  const Leaves in{random_tensor({4, 3}, rng), random_tensor({3, 5}, rng), random_tensor({5}, rng),
                  random_tensor({5, 2}, rng)};
  const double err = input_grad_error(in, [](auto&, const Leaves& x) {
    auto h = gelu(add(matmul(x[0], x[1]), x[2]));
    return mean(mul(matmul(h, x[3]), matmul(h, x[3])));
  });
  EXPECT_LT(err, 1e-4);
}

TEST(Backward, DeterministicGradients) {
  auto run = [] {
    std::mt19937_64 rng(2);
    Tape<double> tape;
    auto a = tape.leaf(random_tensor({4, 4}, rng));
    auto b = tape.leaf(random_tensor({4, 4}, rng));
    tape.backward(probe(softmax(matmul(a, b), 1), 3));
    return std::vector<double>(a.grad().begin(), a.grad().end());
  };
  EXPECT_EQ(run(), run());
}

TEST(Gradcheck, EveryOpTwentySeeds) {
  for (const auto& c : op_cases()) {
    double worst = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      std::mt19937_64 rng(seed * 7919 + 1);
      worst = std::max(worst, input_grad_error(c.inputs(rng), c.f));
    }
    EXPECT_LT(worst, 1e-4) << c.name;
  }
}
