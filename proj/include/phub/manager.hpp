// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Connection manager: service (namespace) creation and access control.

#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <set>
#include <string>
#include <vector>

#include "phub/aggregation.hpp"
#include "phub/error.hpp"
#include "phub/layout.hpp"

namespace phub {

// worker_id is 16 bits on the wire and 0xFFFF is reserved for loopback.
inline constexpr std::size_t kMaxWorkers = 0xFFFF;

struct ServiceSpec {
  std::string name;
  std::size_t n_workers = 1;
  ModelManifest manifest;
  std::size_t chunk_size_bytes = kDefaultChunkBytes;
  Topology topology;
  AffinityMode mode = AffinityMode::kKeyByInterfaceCore;
  OptimizerConfig optimizer;
  // Update rule applied on chunk completion; null selects Nesterov SGD.
  std::shared_ptr<const Optimizer> optimizer_impl;
};

struct ServiceHandle {
  std::uint16_t namespace_id = 0;
  std::uint64_t nonce = 0;
  std::uint64_t chunk_plan_digest = 0;

  bool operator==(const ServiceHandle&) const = default;
};

// Everything a worker needs to rebuild the plan locally; carries no secret.
struct ServiceDescriptor {
  std::string name;
  std::uint16_t namespace_id = 0;
  std::size_t n_workers = 1;
  ModelManifest manifest;
  std::size_t chunk_size_bytes = kDefaultChunkBytes;
  Topology topology;
  AffinityMode mode = AffinityMode::kKeyByInterfaceCore;
  std::uint64_t chunk_plan_digest = 0;
};

struct Service {
  ServiceSpec spec;
  ServiceHandle handle;
  ChunkPlan plan;
  AssignmentPlan assignment;

  ServiceDescriptor descriptor() const;
};

class ConnectionManager {
 public:
  // Allocates the next namespace id and a fresh nonce. Throws kServiceExists
  // on a duplicate name, plus whatever chunking/assignment throw.
  std::shared_ptr<const Service> create_service(ServiceSpec spec);

  std::shared_ptr<const Service> find(std::uint16_t namespace_id) const;
  std::shared_ptr<const Service> find(const std::string& name) const;
  std::vector<std::shared_ptr<const Service>> services() const;

  // kOk, kUnknownService, kAuthFailed or kPlanMismatch.
  ErrorCode authenticate(std::uint16_t namespace_id, std::uint64_t nonce,
                         std::uint64_t digest) const;

 private:
  std::uint64_t fresh_nonce();

  mutable std::mutex mu_;
  std::vector<std::shared_ptr<const Service>> by_namespace_;
  std::map<std::string, std::uint16_t> by_name_;
  std::set<std::uint64_t> used_nonces_;
};

}  // namespace phub
