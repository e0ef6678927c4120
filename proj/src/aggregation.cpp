// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/aggregation.hpp"

#include <algorithm>
#include <thread>

#include "phub/error.hpp"

namespace phub {

void NesterovSgd::update(std::span<float> weights, std::span<float> momentum,
                         std::span<const float> mean_grad, float learning_rate,
                         float momentum_coeff) const {
  if (weights.size() != momentum.size() || weights.size() != mean_grad.size()) {
    fail(ErrorCode::kLengthMismatch, "optimizer operands differ in length");
  }
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const float g = mean_grad[i];
    const float v = momentum_coeff * momentum[i] + g;
    momentum[i] = v;
    weights[i] = weights[i] - learning_rate * (g + momentum_coeff * v);
  }
}

const Optimizer& default_optimizer() {
  static const NesterovSgd instance;
  return instance;
}

std::vector<float> ChunkStates::gather_model(const ChunkPlan& plan) const {
  std::vector<float> model(plan.manifest.total_elements);
  for (const VirtualKey& vk : plan.vkeys) {
    const auto& w = shards[vk.vkey_id].weights;
    std::copy(w.begin(), w.end(), model.begin() + plan.global_offset(vk.vkey_id));
  }
  return model;
}

ChunkStates create_states(const ChunkPlan& plan, std::size_t n_workers,
                          std::optional<std::span<const float>> init_weights,
                          const OptimizerConfig& config) {
  if (n_workers == 0) {
    fail(ErrorCode::kInvalidInit, "service needs at least one worker");
  }
  if (init_weights && init_weights->size() != plan.manifest.total_elements) {
    fail(ErrorCode::kInvalidInit, "initial model has " + std::to_string(init_weights->size()) +
                                      " elements, expected " +
                                      std::to_string(plan.manifest.total_elements));
  }
  ChunkStates states;
  states.agg.resize(plan.num_chunks());
  states.opt.resize(plan.num_chunks());
  states.shards.resize(plan.num_chunks());
  for (const VirtualKey& vk : plan.vkeys) {
    const std::size_t len = vk.length_elements;
    ChunkAggState& agg = states.agg[vk.vkey_id];
    agg.vkey_id = vk.vkey_id;
    agg.merge_buffer.assign(len, 0.0f);
    agg.received.assign(n_workers, 0);

    OptimizerState& opt = states.opt[vk.vkey_id];
    opt.vkey_id = vk.vkey_id;
    opt.momentum.assign(len, 0.0f);
    opt.learning_rate = config.learning_rate;
    opt.momentum_coeff = config.momentum_coeff;

    ModelShard& shard = states.shards[vk.vkey_id];
    shard.vkey_id = vk.vkey_id;
    if (init_weights) {
      const auto src = init_weights->subspan(plan.global_offset(vk.vkey_id), len);
      shard.weights.assign(src.begin(), src.end());
    } else {
      shard.weights.assign(len, 0.0f);
    }
  }
  return states;
}

AggProgress accept_partial_sum(ChunkAggState& state,
                               std::span<const std::uint32_t> worker_ids,
                               std::span<const float> partial_sum) {
  if (partial_sum.size() != state.merge_buffer.size()) {
    fail(ErrorCode::kLengthMismatch,
         "vkey " + std::to_string(state.vkey_id) + " expects " +
             std::to_string(state.merge_buffer.size()) + " elements, got " +
             std::to_string(partial_sum.size()));
  }
  // Validate everything before touching the buffer.
  for (std::size_t i = 0; i < worker_ids.size(); ++i) {
    const std::uint32_t w = worker_ids[i];
    if (w >= state.received.size()) {
      fail(ErrorCode::kProtocolError, "worker " + std::to_string(w) + " out of range");
    }
    if (state.received[w] ||
        std::find(worker_ids.begin(), worker_ids.begin() + i, w) != worker_ids.begin() + i) {
      fail(ErrorCode::kDuplicatePush, "worker " + std::to_string(w) + " already pushed vkey " +
                                          std::to_string(state.vkey_id));
    }
  }
  for (std::size_t i = 0; i < partial_sum.size(); ++i) {
    state.merge_buffer[i] += partial_sum[i];
  }
  for (std::uint32_t w : worker_ids) state.received[w] = 1;
  state.received_count += worker_ids.size();
  return AggProgress{state.complete() ? AggStatus::kComplete : AggStatus::kPartial,
                     state.received_count};
}

AggProgress accept_gradient(ChunkAggState& state, std::uint32_t worker_id,
                            std::span<const float> payload) {
  const std::uint32_t ids[] = {worker_id};
  return accept_partial_sum(state, ids, payload);
}

std::vector<float> finalize_chunk(const ChunkAggState& state, std::size_t n_workers) {
  if (!state.complete() || n_workers != state.received.size()) {
    fail(ErrorCode::kIncomplete, "vkey " + std::to_string(state.vkey_id) + " has " +
                                     std::to_string(state.received_count) + " of " +
                                     std::to_string(n_workers) + " gradients");
  }
  const float n = static_cast<float>(n_workers);
  std::vector<float> mean(state.merge_buffer.size());
  for (std::size_t i = 0; i < mean.size(); ++i) mean[i] = state.merge_buffer[i] / n;
  return mean;
}

void nesterov_step(OptimizerState& opt, ModelShard& shard, std::span<const float> mean_grad) {
  default_optimizer().update(shard.weights, opt.momentum, mean_grad, opt.learning_rate,
                             opt.momentum_coeff);
}

void reset_for_next_iteration(ChunkAggState& state) {
  std::fill(state.merge_buffer.begin(), state.merge_buffer.end(), 0.0f);
  std::fill(state.received.begin(), state.received.end(), 0);
  state.received_count = 0;
  ++state.iteration;
}

void apply_mean_and_reset(ChunkAggState& state, OptimizerState& opt, ModelShard& shard,
                          std::span<const float> mean_grad, const Optimizer& optimizer) {
  optimizer.update(shard.weights, opt.momentum, mean_grad, opt.learning_rate,
                   opt.momentum_coeff);
  reset_for_next_iteration(state);
}

void optimize_on_complete(ChunkAggState& state, OptimizerState& opt, ModelShard& shard,
                          std::size_t n_workers, const Optimizer& optimizer) {
  const std::vector<float> mean = finalize_chunk(state, n_workers);
  apply_mean_and_reset(state, opt, shard, mean, optimizer);
}

void wide_aggregate_optimize(const ChunkPlan& plan, std::uint32_t key_id,
                             std::span<const std::vector<float>> key_gradients,
                             ChunkStates& states, std::size_t n_threads,
                             const Optimizer& optimizer) {
  const auto chunks = plan.chunks_of(key_id);
  const std::size_t key_len = plan.manifest.layers.at(key_id).num_elements;
  const std::size_t n_workers = key_gradients.size();
  if (n_workers == 0 || n_workers != states.agg.at(chunks.front().vkey_id).num_workers()) {
    fail(ErrorCode::kIncomplete, "wide aggregation needs one array per worker");
  }
  for (std::size_t w = 0; w < n_workers; ++w) {
    if (key_gradients[w].empty()) {
      fail(ErrorCode::kIncomplete, "worker " + std::to_string(w) + " array missing");
    }
    if (key_gradients[w].size() != key_len) {
      fail(ErrorCode::kLengthMismatch, "worker " + std::to_string(w) + " array has wrong length");
    }
  }
  n_threads = std::clamp<std::size_t>(n_threads, 1, key_len);
  const std::size_t chunk_elems = plan.chunk_size_elements();
  const float n = static_cast<float>(n_workers);

  // Each thread owns a contiguous element range; pieces are clipped to chunk
  // boundaries so the optimizer always sees one chunk's state at a time.
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<float> mean;
    std::size_t pos = begin;
    while (pos < end) {
      const VirtualKey& vk = chunks[pos / chunk_elems];
      const std::size_t piece_end = std::min(end, vk.offset_elements + vk.length_elements);
      mean.assign(piece_end - pos, 0.0f);
      for (std::size_t w = 0; w < n_workers; ++w) {
        const float* g = key_gradients[w].data();
        for (std::size_t i = pos; i < piece_end; ++i) mean[i - pos] += g[i];
      }
      for (float& m : mean) m = m / n;
      OptimizerState& opt = states.opt[vk.vkey_id];
      ModelShard& shard = states.shards[vk.vkey_id];
      const std::size_t local = pos - vk.offset_elements;
      optimizer.update(std::span<float>(shard.weights).subspan(local, mean.size()),
                       std::span<float>(opt.momentum).subspan(local, mean.size()), mean,
                       opt.learning_rate, opt.momentum_coeff);
      pos = piece_end;
    }
  };

  if (n_threads == 1) {
    work(0, key_len);
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(n_threads);
    const std::size_t per = (key_len + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
      const std::size_t begin = t * per;
      const std::size_t end = std::min(key_len, begin + per);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
  }
  for (const VirtualKey& vk : chunks) ++states.agg[vk.vkey_id].iteration;
}

}  // namespace phub
