// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/layout.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <queue>
#include <utility>

#include "phub/error.hpp"

namespace phub {

std::span<const VirtualKey> ChunkPlan::chunks_of(std::uint32_t key_id) const {
  if (key_id + 1 >= first_vkey.size()) {
    fail(ErrorCode::kProtocolError, "unknown key " + std::to_string(key_id));
  }
  const auto begin = first_vkey[key_id];
  const auto end = first_vkey[key_id + 1];
  return std::span<const VirtualKey>(vkeys).subspan(begin, end - begin);
}

std::size_t ChunkPlan::global_offset(std::uint32_t vkey_id) const {
  const VirtualKey& vk = vkeys.at(vkey_id);
  return key_base[vk.parent_key] + vk.offset_elements;
}

std::string to_string(AffinityMode mode) {
  switch (mode) {
    case AffinityMode::kKeyByInterfaceCore:
      return "key-by-core";
    case AffinityMode::kWorkerByInterface:
      return "worker-by-interface";
  }
  return "unknown";
}

AffinityMode parse_affinity_mode(const std::string& text) {
  if (text == "key-by-core") return AffinityMode::kKeyByInterfaceCore;
  if (text == "worker-by-interface") return AffinityMode::kWorkerByInterface;
  fail(ErrorCode::kInvalidConfig, "unknown mode '" + text + "'");
}

ModelManifest build_manifest(std::span<const std::size_t> layer_sizes,
                             std::span<const std::string> names) {
  if (layer_sizes.empty()) {
    fail(ErrorCode::kInvalidManifest, "manifest has no layers");
  }
  if (!names.empty() && names.size() != layer_sizes.size()) {
    fail(ErrorCode::kInvalidManifest, "names and sizes differ in length");
  }
  ModelManifest manifest;
  manifest.layers.reserve(layer_sizes.size());
  for (std::size_t i = 0; i < layer_sizes.size(); ++i) {
    if (layer_sizes[i] == 0) {
      fail(ErrorCode::kInvalidManifest, "layer " + std::to_string(i) + " is empty");
    }
    LayerKey key;
    key.key_id = static_cast<std::uint32_t>(i);
    key.name = names.empty() ? "key" + std::to_string(i) : names[i];
    key.num_elements = layer_sizes[i];
    manifest.total_elements += key.num_elements;
    manifest.layers.push_back(std::move(key));
  }
  return manifest;
}

ChunkPlan chunk_model(const ModelManifest& manifest, std::size_t chunk_size_bytes) {
  if (chunk_size_bytes == 0 || chunk_size_bytes % kScalarBytes != 0) {
    fail(ErrorCode::kInvalidChunkSize,
         "chunk size " + std::to_string(chunk_size_bytes) +
             " is not a positive multiple of 4");
  }
  ChunkPlan plan;
  plan.chunk_size_bytes = chunk_size_bytes;
  plan.manifest = manifest;
  const std::size_t step = plan.chunk_size_elements();
  std::uint32_t next_id = 0;
  std::size_t base = 0;
  for (const LayerKey& key : manifest.layers) {
    plan.first_vkey.push_back(next_id);
    plan.key_base.push_back(base);
    base += key.num_elements;
    for (std::size_t offset = 0; offset < key.num_elements; offset += step) {
      VirtualKey vk;
      vk.vkey_id = next_id++;
      vk.parent_key = key.key_id;
      vk.offset_elements = offset;
      vk.length_elements = std::min(step, key.num_elements - offset);
      plan.vkeys.push_back(vk);
    }
  }
  plan.first_vkey.push_back(next_id);
  return plan;
}

namespace {

AssignmentPlan assign_lpt(const ChunkPlan& plan, const Topology& topo) {
  AssignmentPlan out;
  out.topology = topo;
  out.mode = AffinityMode::kKeyByInterfaceCore;
  out.map.resize(plan.num_chunks());

  std::vector<std::uint32_t> order(plan.num_chunks());
  std::iota(order.begin(), order.end(), 0u);
  std::stable_sort(order.begin(), order.end(), [&](std::uint32_t a, std::uint32_t b) {
    return plan.vkeys[a].length_elements > plan.vkeys[b].length_elements;
  });

  // (load, flat executor index); the smallest pair is the least loaded bin
  // with ties going to the lower index.
  using Bin = std::pair<std::size_t, std::size_t>;
  std::priority_queue<Bin, std::vector<Bin>, std::greater<>> bins;
  for (std::size_t i = 0; i < topo.num_executors(); ++i) bins.emplace(0, i);

  for (std::uint32_t vkey : order) {
    auto [load, flat] = bins.top();
    bins.pop();
    out.map[vkey] = ExecutorSlot{
        static_cast<std::uint32_t>(flat / topo.executors_per_endpoint),
        static_cast<std::uint32_t>(flat % topo.executors_per_endpoint)};
    bins.emplace(load + plan.vkeys[vkey].length_elements, flat);
  }
  return out;
}

AssignmentPlan assign_round_robin(const ChunkPlan& plan, const Topology& topo) {
  AssignmentPlan out;
  out.topology = topo;
  out.mode = AffinityMode::kWorkerByInterface;
  out.map.resize(plan.num_chunks());
  const std::size_t bins = topo.num_executors();
  for (std::size_t v = 0; v < plan.num_chunks(); ++v) {
    const std::size_t flat = v % bins;
    out.map[v] = ExecutorSlot{
        static_cast<std::uint32_t>(flat / topo.executors_per_endpoint),
        static_cast<std::uint32_t>(flat % topo.executors_per_endpoint)};
  }
  return out;
}

}  // namespace

AssignmentPlan assign_chunks(const ChunkPlan& plan, const Topology& topo,
                             AffinityMode mode) {
  if (plan.vkeys.empty()) {
    fail(ErrorCode::kInconsistentInputs, "cannot assign an empty plan");
  }
  if (topo.num_endpoints == 0 || topo.executors_per_endpoint == 0) {
    fail(ErrorCode::kInvalidConfig, "topology needs at least one executor");
  }
  return mode == AffinityMode::kKeyByInterfaceCore ? assign_lpt(plan, topo)
                                                   : assign_round_robin(plan, topo);
}

BalanceReport verify_balance(const AssignmentPlan& assignment, const ChunkPlan& plan) {
  const Topology& topo = assignment.topology;
  if (assignment.map.size() != plan.num_chunks() || topo.num_executors() == 0) {
    fail(ErrorCode::kInconsistentInputs, "assignment does not match chunk plan");
  }
  BalanceReport report;
  report.per_executor_load_elements.assign(topo.num_executors(), 0);
  for (std::size_t v = 0; v < plan.num_chunks(); ++v) {
    const ExecutorSlot& slot = assignment.map[v];
    if (slot.endpoint >= topo.num_endpoints || slot.executor >= topo.executors_per_endpoint) {
      fail(ErrorCode::kInconsistentInputs, "vkey " + std::to_string(v) + " maps off topology");
    }
    report.per_executor_load_elements[slot.flat(topo)] += plan.vkeys[v].length_elements;
  }
  const auto& loads = report.per_executor_load_elements;
  const auto [lo, hi] = std::minmax_element(loads.begin(), loads.end());
  report.min_load = *lo;
  report.max_load = *hi;
  const std::size_t total = std::accumulate(loads.begin(), loads.end(), std::size_t{0});
  report.mean_load = static_cast<double>(total) / static_cast<double>(loads.size());
  report.imbalance_ratio =
      report.mean_load > 0 ? static_cast<double>(report.max_load) / report.mean_load : 0.0;
  return report;
}

std::string serialize_plan(const ChunkPlan& plan, const AssignmentPlan& assignment) {
  if (assignment.map.size() != plan.num_chunks()) {
    fail(ErrorCode::kInconsistentInputs, "assignment does not match chunk plan");
  }
  std::string out;
  out.reserve(plan.num_chunks() * 24);
  for (const VirtualKey& vk : plan.vkeys) {
    const ExecutorSlot& slot = assignment.map[vk.vkey_id];
    out += std::to_string(vk.vkey_id);
    out += ',';
    out += std::to_string(vk.parent_key);
    out += ',';
    out += std::to_string(vk.offset_elements);
    out += ',';
    out += std::to_string(vk.length_elements);
    out += ',';
    out += std::to_string(slot.endpoint);
    out += ',';
    out += std::to_string(slot.executor);
    out += '\n';
  }
  return out;
}

std::uint64_t plan_digest(const ChunkPlan& plan, const AssignmentPlan& assignment) {
  std::uint64_t hash = 0xcbf29ce484222325ull;
  auto mix = [&hash](std::string_view bytes) {
    for (unsigned char c : bytes) {
      hash ^= c;
      hash *= 0x100000001b3ull;
    }
  };
  mix("chunk=" + std::to_string(plan.chunk_size_bytes) + "\n");
  mix(serialize_plan(plan, assignment));
  return hash;
}

}  // namespace phub
