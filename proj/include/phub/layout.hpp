// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Model description, key chunking and chunk-to-executor assignment.
//
// A model is a list of layer keys. Every key is cut into fixed-size chunks
// ("virtual keys"), which are the unit of routing, aggregation and
// optimization on the server. The assignment of virtual keys to
// (endpoint, executor) pairs is computed once at service creation and is
// immutable afterwards.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace phub {

inline constexpr std::size_t kScalarBytes = 4;
inline constexpr std::size_t kDefaultChunkBytes = 32 * 1024;

struct LayerKey {
  std::uint32_t key_id = 0;
  std::string name;
  std::size_t num_elements = 0;

  bool operator==(const LayerKey&) const = default;
};

struct ModelManifest {
  std::vector<LayerKey> layers;
  std::size_t total_elements = 0;

  bool operator==(const ModelManifest&) const = default;
};

struct VirtualKey {
  std::uint32_t vkey_id = 0;
  std::uint32_t parent_key = 0;
  std::size_t offset_elements = 0;
  std::size_t length_elements = 0;

  bool operator==(const VirtualKey&) const = default;
};

struct ChunkPlan {
  std::size_t chunk_size_bytes = kDefaultChunkBytes;
  std::vector<VirtualKey> vkeys;
  ModelManifest manifest;
  // first_vkey[k] is the id of key k's first chunk; first_vkey[K] == vkeys.size().
  std::vector<std::uint32_t> first_vkey;
  // key_base[k] is the flattened-model offset of key k's first element.
  std::vector<std::size_t> key_base;

  std::size_t chunk_size_elements() const { return chunk_size_bytes / kScalarBytes; }
  std::size_t num_chunks() const { return vkeys.size(); }

  // Chunks belonging to one layer key, in offset order.
  std::span<const VirtualKey> chunks_of(std::uint32_t key_id) const;

  // Offset of a chunk within the flattened model (keys laid out in order).
  std::size_t global_offset(std::uint32_t vkey_id) const;

  bool operator==(const ChunkPlan&) const = default;
};

struct Topology {
  std::size_t num_endpoints = 1;
  std::size_t executors_per_endpoint = 1;

  std::size_t num_executors() const { return num_endpoints * executors_per_endpoint; }
  bool operator==(const Topology&) const = default;
};

enum class AffinityMode : std::uint8_t {
  kKeyByInterfaceCore = 0,
  kWorkerByInterface = 1,
};

std::string to_string(AffinityMode mode);
AffinityMode parse_affinity_mode(const std::string& text);

struct ExecutorSlot {
  std::uint32_t endpoint = 0;
  std::uint32_t executor = 0;

  // Flat index over all executors: endpoint * executors_per_endpoint + executor.
  std::size_t flat(const Topology& topo) const {
    return endpoint * topo.executors_per_endpoint + executor;
  }
  bool operator==(const ExecutorSlot&) const = default;
};

struct AssignmentPlan {
  Topology topology;
  AffinityMode mode = AffinityMode::kKeyByInterfaceCore;
  // Indexed by vkey_id. In worker-by-interface mode this is the chunk's home
  // slot; other endpoints use the same executor index for local partials.
  std::vector<ExecutorSlot> map;

  bool operator==(const AssignmentPlan&) const = default;
};

struct BalanceReport {
  std::vector<std::size_t> per_executor_load_elements;
  std::size_t max_load = 0;
  std::size_t min_load = 0;
  double mean_load = 0.0;
  double imbalance_ratio = 0.0;
};

// Throws Error(kInvalidManifest) on an empty list, a zero-size layer or a
// names list of the wrong length.
ModelManifest build_manifest(std::span<const std::size_t> layer_sizes,
                             std::span<const std::string> names = {});

// Throws Error(kInvalidChunkSize) unless chunk_size_bytes is a positive
// multiple of four.
ChunkPlan chunk_model(const ModelManifest& manifest,
                      std::size_t chunk_size_bytes = kDefaultChunkBytes);

// Key-by-interface/core: greedy longest-processing-time partition over all
// executors. Worker-by-interface: round robin by vkey_id.
AssignmentPlan assign_chunks(const ChunkPlan& plan, const Topology& topo,
                             AffinityMode mode);

// Throws Error(kInconsistentInputs) when the assignment does not cover the plan.
BalanceReport verify_balance(const AssignmentPlan& assignment, const ChunkPlan& plan);

// Canonical text form, one "vkey_id,key_id,offset,length,endpoint,executor\n"
// record per chunk.
std::string serialize_plan(const ChunkPlan& plan, const AssignmentPlan& assignment);

// FNV-1a 64 over serialize_plan plus the chunk size.
std::uint64_t plan_digest(const ChunkPlan& plan, const AssignmentPlan& assignment);

}  // namespace phub
