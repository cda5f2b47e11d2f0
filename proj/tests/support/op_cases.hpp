#pragma once

// Gradient-check cases for every differentiable tensor operation.

#include "support/gradcheck.hpp"

namespace omg::testing {

// Inputs away from the kinks of relu and from saturation.
inline Tensor<double> away_from_zero(Shape s, std::mt19937_64& rng) {
  auto t = random_tensor(std::move(s), rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (auto& x : t.mutable_data())
    if (sign(rng)) x = -x;
  return t;
}

struct OpCase {
  const char* name;
  std::function<Leaves(std::mt19937_64&)> inputs;
  ScalarFn f;
};

inline std::vector<OpCase> op_cases() {
  auto one = [](Shape s) { return [s](std::mt19937_64& r) { return Leaves{random_tensor(s, r)}; }; };
  auto two = [](Shape a, Shape b) {
    return [a, b](std::mt19937_64& r) { return Leaves{random_tensor(a, r), random_tensor(b, r)}; };
  };
  static const std::vector<int> ids{2, 0, 3, 3};
  static const std::vector<int> targets{1, 4, 0};
  static const std::vector<std::uint8_t> supervise{1, 0, 1};
  static const std::vector<double> soft{0.0, 1.0, 1.0, 0.0, 0.3, 1.0};
  return {
      {"add", two({3, 4}, {3, 4}), [](auto&, const Leaves& x) { return probe(add(x[0], x[1]), 1); }},
      {"add_row_broadcast", two({3, 4}, {4}), [](auto&, const Leaves& x) { return probe(add(x[0], x[1]), 2); }},
      {"add_scalar_broadcast", two({3, 4}, {}), [](auto&, const Leaves& x) { return probe(add(x[0], x[1]), 3); }},
      {"sub", two({3, 4}, {4}), [](auto&, const Leaves& x) { return probe(sub(x[0], x[1]), 4); }},
      {"mul", two({3, 4}, {3, 4}), [](auto&, const Leaves& x) { return probe(mul(x[0], x[1]), 5); }},
      {"mul_row_broadcast", two({3, 4}, {4}), [](auto&, const Leaves& x) { return probe(mul(x[0], x[1]), 6); }},
      {"scale", one({2, 5}), [](auto&, const Leaves& x) { return probe(scale(x[0], -1.7), 7); }},
      {"sigmoid", one({2, 5}), [](auto&, const Leaves& x) { return probe(sigmoid(x[0]), 8); }},
      {"relu", [](std::mt19937_64& r) { return Leaves{away_from_zero({2, 5}, r)}; },
       [](auto&, const Leaves& x) { return probe(relu(x[0]), 9); }},
      {"gelu", one({2, 5}), [](auto&, const Leaves& x) { return probe(gelu(x[0]), 10); }},
      {"sum", one({3, 3}), [](auto&, const Leaves& x) { return scale(sum(mul(x[0], x[0])), 0.5); }},
      {"mean", one({3, 3}), [](auto&, const Leaves& x) { return mean(mul(x[0], x[0])); }},
      {"sum_axis0", one({3, 4}), [](auto&, const Leaves& x) { return probe(sum_axis(x[0], 0), 11); }},
      {"mean_axis1", one({3, 4}), [](auto&, const Leaves& x) { return probe(mean_axis(x[0], 1), 12); }},
      {"matmul", two({3, 4}, {4, 2}), [](auto&, const Leaves& x) { return probe(matmul(x[0], x[1]), 13); }},
      {"matmul_nt", two({3, 4}, {2, 4}), [](auto&, const Leaves& x) { return probe(matmul_nt(x[0], x[1]), 14); }},
      {"transpose", one({3, 4}), [](auto&, const Leaves& x) { return probe(transpose(x[0]), 15); }},
      {"reshape", one({3, 4}), [](auto&, const Leaves& x) { return probe(reshape(x[0], Shape{2, 6}), 16); }},
      {"concat0", two({2, 3}, {1, 3}),
       [](auto&, const Leaves& x) { return probe(concat(std::vector<Tensor<double>>{x[0], x[1]}, 0), 17); }},
      {"concat1", two({2, 3}, {2, 2}),
       [](auto&, const Leaves& x) { return probe(concat(std::vector<Tensor<double>>{x[0], x[1]}, 1), 18); }},
      {"slice", one({4, 3}), [](auto&, const Leaves& x) { return probe(slice(x[0], 0, 1, 3), 19); }},
      {"slice_axis1", one({4, 3}), [](auto&, const Leaves& x) { return probe(slice(x[0], 1, 1, 3), 20); }},
      {"gather", one({2, 3}),
       [](auto&, const Leaves& x) {
         auto idx = std::make_shared<const std::vector<std::size_t>>(std::vector<std::size_t>{5, 0, 0, 2});
         return probe(gather(x[0], idx, Shape{4}), 21);
       }},
      {"embedding_lookup", one({4, 3}),
       [](auto&, const Leaves& x) { return probe(embedding_lookup(x[0], std::span<const int>(ids)), 22); }},
      {"index_rows", one({4, 3}),
       [](auto&, const Leaves& x) { return probe(index_rows(x[0], std::span<const int>(ids)), 23); }},
      {"softmax_axis1", one({3, 5}), [](auto&, const Leaves& x) { return probe(softmax(x[0], 1), 24); }},
      {"softmax_axis0", one({3, 5}), [](auto&, const Leaves& x) { return probe(softmax(x[0], 0), 25); }},
      {"layer_norm_affine",
       [](std::mt19937_64& r) { return Leaves{random_tensor({3, 6}, r), random_tensor({6}, r), random_tensor({6}, r)}; },
       [](auto&, const Leaves& x) { return probe(layer_norm(x[0], x[1], x[2]), 26); }},
      {"layer_norm_plain", one({3, 6}), [](auto&, const Leaves& x) { return probe(layer_norm(x[0]), 27); }},
      {"attention",
       [](std::mt19937_64& r) {
         return Leaves{random_tensor({3, 4}, r), random_tensor({5, 4}, r), random_tensor({5, 4}, r)};
       },
       [](auto&, const Leaves& x) { return probe(attention(x[0], x[1], x[2], 2), 28); }},
      {"attention_masked",
       [](std::mt19937_64& r) {
         return Leaves{random_tensor({2, 4}, r), random_tensor({3, 4}, r), random_tensor({3, 4}, r)};
       },
       [](auto&, const Leaves& x) {
         return probe(attention(x[0], x[1], x[2], 2, AttendMask{{1, 0, 1, 0, 1, 1}, false}), 29);
       }},
      {"attention_causal",
       [](std::mt19937_64& r) {
         return Leaves{random_tensor({4, 4}, r), random_tensor({4, 4}, r), random_tensor({4, 4}, r)};
       },
       [](auto&, const Leaves& x) { return probe(attention(x[0], x[1], x[2], 1, AttendMask{{}, true}), 30); }},
      {"bce_with_logits", one({6}),
       [](auto&, const Leaves& x) { return bce_with_logits(x[0], std::span<const double>(soft)); }},
      {"dice_with_logits", one({6}),
       [](auto&, const Leaves& x) { return dice_with_logits(x[0], std::span<const double>(soft)); }},
      {"cross_entropy", one({3, 5}),
       [](auto&, const Leaves& x) {
         return cross_entropy(x[0], std::span<const int>(targets), std::span<const std::uint8_t>(supervise));
       }},
      {"mse", two({3, 2}, {3, 2}), [](auto&, const Leaves& x) { return mse(x[0], x[1]); }},
  };
}

}  // namespace omg::testing
