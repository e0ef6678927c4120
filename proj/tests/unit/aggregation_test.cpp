// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <random>

#include "../support/errors.hpp"
#include "../support/oracle.hpp"
#include "phub/aggregation.hpp"
#include "phub/error.hpp"

namespace phub {
namespace {

using testing::code_of;

bool bitwise_equal(std::span<const float> a, std::span<const float> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size_bytes()) == 0;
}

std::vector<float> random_vector(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<float> d(-1.0f, 1.0f);
  std::vector<float> v(n);
  for (float& x : v) x = d(rng);
  return v;
}

ChunkStates one_chunk(std::size_t len, std::size_t workers, float lr = 0.1f, float mu = 0.9f,
                      std::optional<std::vector<float>> init = std::nullopt) {
  const auto plan = chunk_model(build_manifest(std::vector<std::size_t>{len}), len * 4);
  std::optional<std::span<const float>> w;
  if (init) w = *init;
  return create_states(plan, workers, w, OptimizerConfig{lr, mu});
}

TEST(CreateStates, Shapes) {
  const auto plan = chunk_model(build_manifest(std::vector<std::size_t>{10000}), 32768);
  const auto s = create_states(plan, 3, std::nullopt, {});
  ASSERT_EQ(s.agg.size(), 2u);
  for (const auto& a : s.agg) {
    EXPECT_EQ(a.received.size(), 3u);
    EXPECT_EQ(a.received_count, 0u);
    EXPECT_EQ(a.iteration, 0u);
  }
  for (const auto& sh : s.shards) {
    EXPECT_TRUE(std::all_of(sh.weights.begin(), sh.weights.end(), [](float x) { return x == 0; }));
  }
  EXPECT_EQ(s.opt[1].momentum.size(), 1808u);
}

TEST(CreateStates, Vgg19ChunkCount) {
  EXPECT_EQ(chunk_model(build_manifest(std::vector<std::size_t>{137'000'000})).num_chunks(),
            16724u);
}

TEST(CreateStates, Errors) {
  const auto plan = chunk_model(build_manifest(std::vector<std::size_t>{4}));
  const std::vector<float> bad(3);
  EXPECT_EQ(code_of([&] { create_states(plan, 1, std::span<const float>(bad), {}); }),
            ErrorCode::kInvalidInit);
  EXPECT_EQ(code_of([&] { create_states(plan, 0, std::nullopt, {}); }), ErrorCode::kInvalidInit);
}

TEST(AcceptGradient, SingleWorker) {
  auto s = one_chunk(2, 1);
  const std::vector<float> g{1.5f, -2.0f};
  const auto p = accept_gradient(s.agg[0], 0, g);
  EXPECT_EQ(p.status, AggStatus::kComplete);
  EXPECT_EQ(s.agg[0].merge_buffer, g);
}

TEST(AcceptGradient, TwoWorkersSum) {
  auto s = one_chunk(2, 2);
  EXPECT_EQ(accept_gradient(s.agg[0], 0, std::vector<float>{1, 2}).status, AggStatus::kPartial);
  const auto p = accept_gradient(s.agg[0], 1, std::vector<float>{3, 4});
  EXPECT_EQ(p.status, AggStatus::kComplete);
  EXPECT_EQ(p.received_count, 2u);
  EXPECT_EQ(s.agg[0].merge_buffer, (std::vector<float>{4, 6}));
  EXPECT_EQ(finalize_chunk(s.agg[0], 2), (std::vector<float>{2, 3}));
  // finalize leaves the state untouched.
  EXPECT_EQ(s.agg[0].merge_buffer, (std::vector<float>{4, 6}));
}

TEST(AcceptGradient, DuplicateLeavesBufferAlone) {
  auto s = one_chunk(2, 2);
  accept_gradient(s.agg[0], 0, std::vector<float>{1, 2});
  EXPECT_EQ(code_of([&] { accept_gradient(s.agg[0], 0, std::vector<float>{9, 9}); }),
            ErrorCode::kDuplicatePush);
  EXPECT_EQ(s.agg[0].merge_buffer, (std::vector<float>{1, 2}));
  EXPECT_EQ(s.agg[0].received_count, 1u);
}

TEST(AcceptGradient, LengthAndRange) {
  auto s = one_chunk(2, 2);
  EXPECT_EQ(code_of([&] { accept_gradient(s.agg[0], 0, std::vector<float>{1}); }),
            ErrorCode::kLengthMismatch);
  EXPECT_EQ(code_of([&] { accept_gradient(s.agg[0], 2, std::vector<float>{1, 1}); }),
            ErrorCode::kProtocolError);
}

TEST(PartialSum, CoversSeveralWorkers) {
  auto s = one_chunk(1, 4);
  const std::uint32_t a[] = {0, 2};
  const std::uint32_t b[] = {1, 3};
  EXPECT_EQ(accept_partial_sum(s.agg[0], a, std::vector<float>{3}).received_count, 2u);
  const std::uint32_t dup[] = {3, 2};
  EXPECT_EQ(code_of([&] { accept_partial_sum(s.agg[0], dup, std::vector<float>{1}); }),
            ErrorCode::kDuplicatePush);
  EXPECT_EQ(accept_partial_sum(s.agg[0], b, std::vector<float>{5}).status, AggStatus::kComplete);
  EXPECT_EQ(finalize_chunk(s.agg[0], 4), (std::vector<float>{2}));
}

TEST(Finalize, IncompleteAndIdentity) {
  auto s = one_chunk(3, 2);
  accept_gradient(s.agg[0], 1, std::vector<float>{1, 2, 3});
  EXPECT_EQ(code_of([&] { finalize_chunk(s.agg[0], 2); }), ErrorCode::kIncomplete);
  auto one = one_chunk(3, 1);
  const std::vector<float> g{0.1f, 0.2f, 0.3f};
  accept_gradient(one.agg[0], 0, g);
  EXPECT_EQ(finalize_chunk(one.agg[0], 1), g);
}

TEST(Finalize, MatchesSerialSumOracle) {
  std::mt19937_64 rng(3);
  auto s = one_chunk(1000, 8);
  std::vector<std::vector<float>> grads;
  for (int w = 0; w < 8; ++w) grads.push_back(random_vector(rng, 1000));
  std::vector<int> order{5, 2, 7, 0, 1, 6, 3, 4};
  for (int w : order) accept_gradient(s.agg[0], w, grads[w]);
  const auto mean = finalize_chunk(s.agg[0], 8);
  std::vector<float> serial(1000, 0.0f);
  for (const auto& g : grads) {
    for (std::size_t i = 0; i < 1000; ++i) serial[i] += g[i];
  }
  for (float& x : serial) x /= 8.0f;
  EXPECT_LE(oracle::max_relative_error(mean, serial), 1e-6);
}

TEST(Nesterov, HandEvaluation) {
  auto s = one_chunk(1, 1, 0.1f, 0.9f, std::vector<float>{1.0f});
  nesterov_step(s.opt[0], s.shards[0], std::vector<float>{1.0f});
  EXPECT_FLOAT_EQ(s.opt[0].momentum[0], 1.0f);
  EXPECT_FLOAT_EQ(s.shards[0].weights[0], 0.81f);
}

TEST(Nesterov, ZeroMomentumIsSgd) {
  auto s = one_chunk(2, 1, 0.5f, 0.0f, std::vector<float>{1.0f, -1.0f});
  nesterov_step(s.opt[0], s.shards[0], std::vector<float>{2.0f, 4.0f});
  EXPECT_EQ(s.shards[0].weights, (std::vector<float>{0.0f, -3.0f}));
}

TEST(Nesterov, FixedPointAndLengthCheck) {
  auto s = one_chunk(2, 1, 0.1f, 0.9f, std::vector<float>{3.0f, 4.0f});
  nesterov_step(s.opt[0], s.shards[0], std::vector<float>{0.0f, 0.0f});
  EXPECT_EQ(s.shards[0].weights, (std::vector<float>{3.0f, 4.0f}));
  EXPECT_EQ(code_of([&] { nesterov_step(s.opt[0], s.shards[0], std::vector<float>{1.0f}); }),
            ErrorCode::kLengthMismatch);
}

TEST(OptimizeOnComplete, ComposesAndAdvances) {
  auto s = one_chunk(1, 1, 0.1f, 0.9f, std::vector<float>{1.0f});
  accept_gradient(s.agg[0], 0, std::vector<float>{1.0f});
  optimize_on_complete(s.agg[0], s.opt[0], s.shards[0], 1);
  EXPECT_FLOAT_EQ(s.shards[0].weights[0], 0.81f);
  EXPECT_EQ(s.agg[0].iteration, 1u);
  EXPECT_EQ(s.agg[0].received_count, 0u);
  EXPECT_EQ(s.agg[0].merge_buffer[0], 0.0f);
  EXPECT_EQ(code_of([&] { optimize_on_complete(s.agg[0], s.opt[0], s.shards[0], 1); }),
            ErrorCode::kIncomplete);
}

TEST(OptimizeOnComplete, ChunkOrderDoesNotMatter) {
  std::mt19937_64 rng(5);
  const auto plan = chunk_model(build_manifest(std::vector<std::size_t>{3000}), 4096);
  const auto init = random_vector(rng, 3000);
  std::vector<std::vector<float>> grads{random_vector(rng, 3000), random_vector(rng, 3000)};
  auto run = [&](bool reverse) {
    auto s = create_states(plan, 2, std::span<const float>(init), {});
    std::vector<std::uint32_t> order(plan.num_chunks());
    for (std::uint32_t v = 0; v < order.size(); ++v) order[v] = v;
    if (reverse) std::reverse(order.begin(), order.end());
    for (std::uint32_t v : order) {
      const auto& vk = plan.vkeys[v];
      for (std::uint32_t w = 0; w < 2; ++w) {
        accept_gradient(s.agg[v], w,
                        std::span<const float>(grads[w]).subspan(vk.offset_elements,
                                                                 vk.length_elements));
      }
      optimize_on_complete(s.agg[v], s.opt[v], s.shards[v], 2);
    }
    return s.gather_model(plan);
  };
  const auto a = run(false);
  const auto b = run(true);
  EXPECT_TRUE(bitwise_equal(a, b));
}

TEST(Streaming, ChunkOptimizesBeforeSiblingsArrive) {
  const auto plan = chunk_model(build_manifest(std::vector<std::size_t>{3 * 1024}), 4096);
  auto s = create_states(plan, 1, std::nullopt, {});
  accept_gradient(s.agg[1], 0, std::vector<float>(1024, 1.0f));
  optimize_on_complete(s.agg[1], s.opt[1], s.shards[1], 1);
  EXPECT_EQ(s.agg[0].received_count, 0u);
  EXPECT_EQ(s.agg[1].iteration, 1u);
  EXPECT_LT(s.shards[1].weights[0], 0.0f);
  EXPECT_EQ(s.shards[0].weights[0], 0.0f);
}

TEST(Wide, MatchesTallAndOracleBitwise) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t len = 1 + rng() % 40000;
    const std::size_t n = 1 + rng() % 8;
    const std::size_t chunk = 4 * (1 + rng() % 5000);
    const auto plan = chunk_model(build_manifest(std::vector<std::size_t>{len}), chunk);
    const auto init = random_vector(rng, len);
    std::vector<std::vector<float>> grads;
    for (std::size_t w = 0; w < n; ++w) grads.push_back(random_vector(rng, len));

    auto tall = create_states(plan, n, std::span<const float>(init), {});
    for (const auto& vk : plan.vkeys) {
      for (std::uint32_t w = 0; w < n; ++w) {
        accept_gradient(tall.agg[vk.vkey_id], w,
                        std::span<const float>(grads[w]).subspan(vk.offset_elements,
                                                                 vk.length_elements));
      }
      optimize_on_complete(tall.agg[vk.vkey_id], tall.opt[vk.vkey_id], tall.shards[vk.vkey_id], n);
    }
    oracle::SerialModel ref(init, 0.1f, 0.9f);
    ref.step(grads);
    for (std::size_t threads : {1u, 3u, 7u}) {
      auto wide = create_states(plan, n, std::span<const float>(init), {});
      wide_aggregate_optimize(plan, 0, grads, wide, threads);
      EXPECT_TRUE(bitwise_equal(wide.gather_model(plan), tall.gather_model(plan)));
      EXPECT_EQ(wide.agg[0].iteration, 1u);
    }
    EXPECT_TRUE(bitwise_equal(tall.gather_model(plan), ref.weights()));
  }
}

TEST(Wide, MissingArray) {
  const auto plan = chunk_model(build_manifest(std::vector<std::size_t>{10}));
  auto s = create_states(plan, 2, std::nullopt, {});
  std::vector<std::vector<float>> grads{std::vector<float>(10, 1.0f), {}};
  EXPECT_EQ(code_of([&] { wide_aggregate_optimize(plan, 0, grads, s, 2); }),
            ErrorCode::kIncomplete);
  grads.pop_back();
  EXPECT_EQ(code_of([&] { wide_aggregate_optimize(plan, 0, grads, s, 2); }),
            ErrorCode::kIncomplete);
}

TEST(Optimizer, Pluggable) {
  struct PlainSgd final : Optimizer {
    std::string name() const override { return "sgd"; }
    void update(std::span<float> w, std::span<float>, std::span<const float> g, float lr,
                float) const override {
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
    }
  } sgd;
  auto s = one_chunk(1, 1, 0.5f, 0.9f, std::vector<float>{1.0f});
  accept_gradient(s.agg[0], 0, std::vector<float>{1.0f});
  optimize_on_complete(s.agg[0], s.opt[0], s.shards[0], 1, sgd);
  EXPECT_FLOAT_EQ(s.shards[0].weights[0], 0.5f);
}

TEST(Sanity, QuadraticPlainSgdConverges) {
  auto s = one_chunk(4, 1, 0.1f, 0.0f, std::vector<float>{1.0f, -2.0f, 3.0f, 0.5f});
  auto norm = [&] {
    double n = 0;
    for (float x : s.shards[0].weights) n += double(x) * x;
    return std::sqrt(n);
  };
  double prev = norm();
  int it = 0;
  while (prev >= 1e-6 && it < 1000) {
    accept_gradient(s.agg[0], 0, s.shards[0].weights);
    optimize_on_complete(s.agg[0], s.opt[0], s.shards[0], 1);
    const double now = norm();
    ASSERT_LT(now, prev);
    prev = now;
    ++it;
  }
  EXPECT_LT(prev, 1e-6);
}

}  // namespace
}  // namespace phub
