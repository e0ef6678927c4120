// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/manager.hpp"

#include <limits>
#include <random>

#include "phub/error.hpp"

namespace phub {

ServiceDescriptor Service::descriptor() const {
  ServiceDescriptor d;
  d.name = spec.name;
  d.namespace_id = handle.namespace_id;
  d.n_workers = spec.n_workers;
  d.manifest = spec.manifest;
  d.chunk_size_bytes = spec.chunk_size_bytes;
  d.topology = spec.topology;
  d.mode = spec.mode;
  d.chunk_plan_digest = handle.chunk_plan_digest;
  return d;
}

std::uint64_t ConnectionManager::fresh_nonce() {
  std::random_device rd;
  while (true) {
    const std::uint64_t nonce = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    if (used_nonces_.insert(nonce).second) return nonce;
  }
}

std::shared_ptr<const Service> ConnectionManager::create_service(ServiceSpec spec) {
  if (spec.n_workers == 0 || spec.n_workers >= kMaxWorkers) {
    fail(ErrorCode::kInvalidConfig, "worker count out of range");
  }
  auto service = std::make_shared<Service>();
  service->plan = chunk_model(spec.manifest, spec.chunk_size_bytes);
  service->assignment = assign_chunks(service->plan, spec.topology, spec.mode);

  std::lock_guard lock(mu_);
  if (by_name_.contains(spec.name)) {
    fail(ErrorCode::kServiceExists, "service '" + spec.name + "' already exists");
  }
  if (by_namespace_.size() > std::numeric_limits<std::uint16_t>::max()) {
    fail(ErrorCode::kInvalidConfig, "namespace ids exhausted");
  }
  service->handle.namespace_id = static_cast<std::uint16_t>(by_namespace_.size());
  service->handle.nonce = fresh_nonce();
  service->handle.chunk_plan_digest = plan_digest(service->plan, service->assignment);
  service->spec = std::move(spec);
  by_name_.emplace(service->spec.name, service->handle.namespace_id);
  by_namespace_.push_back(service);
  return service;
}

std::shared_ptr<const Service> ConnectionManager::find(std::uint16_t namespace_id) const {
  std::lock_guard lock(mu_);
  if (namespace_id >= by_namespace_.size()) return nullptr;
  return by_namespace_[namespace_id];
}

std::shared_ptr<const Service> ConnectionManager::find(const std::string& name) const {
  std::lock_guard lock(mu_);
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) return nullptr;
  return by_namespace_[it->second];
}

std::vector<std::shared_ptr<const Service>> ConnectionManager::services() const {
  std::lock_guard lock(mu_);
  return by_namespace_;
}

ErrorCode ConnectionManager::authenticate(std::uint16_t namespace_id, std::uint64_t nonce,
                                          std::uint64_t digest) const {
  const auto service = find(namespace_id);
  if (!service) return ErrorCode::kUnknownService;
  if (service->handle.nonce != nonce) return ErrorCode::kAuthFailed;
  if (service->handle.chunk_plan_digest != digest) return ErrorCode::kPlanMismatch;
  return ErrorCode::kOk;
}

}  // namespace phub
