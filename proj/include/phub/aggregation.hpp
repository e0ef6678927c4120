// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Per-chunk ("tall") gradient aggregation fused with the optimizer, and a
// whole-key ("wide") thread-pool baseline with identical numerics.

#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phub/layout.hpp"

namespace phub {

struct ChunkAggState {
  std::uint32_t vkey_id = 0;
  std::vector<float> merge_buffer;
  std::vector<std::uint8_t> received;  // one flag per worker
  std::size_t received_count = 0;
  std::uint32_t iteration = 0;  // completed iterations

  std::size_t num_workers() const { return received.size(); }
  bool complete() const { return received_count == received.size(); }
};

struct OptimizerState {
  std::uint32_t vkey_id = 0;
  std::vector<float> momentum;
  float learning_rate = 0.1f;
  float momentum_coeff = 0.9f;
};

struct ModelShard {
  std::uint32_t vkey_id = 0;
  std::vector<float> weights;
};

enum class AggStatus : std::uint8_t { kPartial, kComplete };

struct AggProgress {
  AggStatus status = AggStatus::kPartial;
  std::size_t received_count = 0;
};

struct OptimizerConfig {
  float learning_rate = 0.1f;
  float momentum_coeff = 0.9f;
};

// Pluggable update rule. Works on element ranges so that both the per-chunk
// path and the range-partitioned wide path can drive it.
class Optimizer {
 public:
  virtual ~Optimizer() = default;
  virtual std::string name() const = 0;
  virtual void update(std::span<float> weights, std::span<float> momentum,
                      std::span<const float> mean_grad, float learning_rate,
                      float momentum_coeff) const = 0;
};

// v <- mu*v + g ; w <- w - lr*(g + mu*v)
class NesterovSgd final : public Optimizer {
 public:
  std::string name() const override { return "nesterov-sgd"; }
  void update(std::span<float> weights, std::span<float> momentum,
              std::span<const float> mean_grad, float learning_rate,
              float momentum_coeff) const override;
};

const Optimizer& default_optimizer();

// All per-chunk state for one model, indexed by vkey_id.
struct ChunkStates {
  std::vector<ChunkAggState> agg;
  std::vector<OptimizerState> opt;
  std::vector<ModelShard> shards;

  // Concatenate shards back into the full flattened model.
  std::vector<float> gather_model(const ChunkPlan& plan) const;
};

// Throws kInvalidInit on N == 0 or a wrong-length init vector.
ChunkStates create_states(const ChunkPlan& plan, std::size_t n_workers,
                          std::optional<std::span<const float>> init_weights,
                          const OptimizerConfig& config);

// Adds one worker's gradient to the running sum. Throws kDuplicatePush,
// kLengthMismatch, or kProtocolError for an out-of-range worker.
AggProgress accept_gradient(ChunkAggState& state, std::uint32_t worker_id,
                            std::span<const float> payload);

// Adds a pre-summed contribution covering several workers at once.
AggProgress accept_partial_sum(ChunkAggState& state,
                               std::span<const std::uint32_t> worker_ids,
                               std::span<const float> partial_sum);

// merge_buffer / N. Throws kIncomplete unless all N workers reported.
std::vector<float> finalize_chunk(const ChunkAggState& state, std::size_t n_workers);

void nesterov_step(OptimizerState& opt, ModelShard& shard, std::span<const float> mean_grad);

// Mean, optimizer step, then reset for the next iteration.
void optimize_on_complete(ChunkAggState& state, OptimizerState& opt, ModelShard& shard,
                          std::size_t n_workers,
                          const Optimizer& optimizer = default_optimizer());

// Variant used when the mean comes from somewhere other than the merge
// buffer (for example after inter-rack reduction).
void apply_mean_and_reset(ChunkAggState& state, OptimizerState& opt, ModelShard& shard,
                          std::span<const float> mean_grad, const Optimizer& optimizer);

void reset_for_next_iteration(ChunkAggState& state);

// Whole-key baseline: waits for every worker's full gradient array, splits
// the key's element range across n_threads and sums in worker-id order.
// Throws kIncomplete when any of the N arrays is missing (empty).
void wide_aggregate_optimize(const ChunkPlan& plan, std::uint32_t key_id,
                             std::span<const std::vector<float>> key_gradients,
                             ChunkStates& states, std::size_t n_threads,
                             const Optimizer& optimizer = default_optimizer());

}  // namespace phub
