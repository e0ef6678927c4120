// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// The parameter-server daemon.
//
// Each emulated network interface ("endpoint") has its own data port and a
// disjoint group of executors. Every chunk is owned by exactly one executor;
// that executor receives its pushes, aggregates them, runs the optimizer
// and answers its pulls. Endpoint readers only authenticate and route.

#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "phub/layout.hpp"
#include "phub/manager.hpp"
#include "phub/stream.hpp"
#include "phub/wire.hpp"

namespace phub {

struct ServerConfig {
  std::string host = "127.0.0.1";
  // Unset: no control listener. 0: ephemeral.
  std::optional<std::uint16_t> control_port;
  // One TCP port per endpoint (0 = ephemeral). Empty: in-process only, with
  // num_endpoints endpoints.
  std::vector<std::uint16_t> data_ports;
  std::size_t num_endpoints = 1;
  std::size_t executors_per_endpoint = 1;
  AffinityMode mode = AffinityMode::kKeyByInterfaceCore;
  // Unset: hierarchical reduction off. Otherwise the emulated rack count.
  std::optional<std::size_t> hierarchical_racks;
  std::optional<std::chrono::milliseconds> init_timeout;
  std::string metrics_out;
  std::chrono::milliseconds metrics_interval{1000};

  Topology topology() const {
    return Topology{data_ports.empty() ? num_endpoints : data_ports.size(),
                    executors_per_endpoint};
  }
};

struct TraceEvent {
  enum class Kind : std::uint8_t { kFrameArrived, kChunkOptimized, kPullAnswered };
  Kind kind = Kind::kFrameArrived;
  std::uint16_t namespace_id = 0;
  std::uint32_t vkey_id = 0;
  std::uint16_t worker_id = 0;
  std::uint32_t iteration = 0;
  std::size_t executor = 0;  // flat executor index that handled the event
  std::chrono::steady_clock::time_point at;
};

// Called from executor threads; must be thread-safe.
using TraceSink = std::function<void(const TraceEvent&)>;

struct NamespaceMetrics {
  std::string name;
  std::uint16_t namespace_id = 0;
  std::uint64_t frames_rx = 0;
  std::uint64_t frames_tx = 0;
  std::uint64_t forwarded_frames = 0;
  std::uint64_t loopback_frames = 0;
  std::uint64_t chunk_completions = 0;
  std::uint64_t completed_iterations = 0;  // chunk_completions / num_chunks
};

struct ServerMetrics {
  std::uint64_t frames_rx = 0;
  std::uint64_t frames_tx = 0;
  std::uint64_t forwarded_frames = 0;
  std::uint64_t loopback_frames = 0;
  std::vector<NamespaceMetrics> namespaces;
};

// Executor that should handle a frame. Key-by-interface/core is a pure
// lookup; worker-by-interface keeps the endpoint fixed per worker
// (worker_id mod num_endpoints) and uses the chunk's executor index there.
// Throws kProtocolError for an unknown vkey.
ExecutorSlot route_frame(const AssignmentPlan& assignment, const Frame& frame,
                         std::uint16_t source_worker);

// Runs `racks` sequential send/receive/merge rounds of one chunk through a
// loopback stream pair. Each received peer contribution is a copy of the
// local aggregate and is merged as a running mean, so the result equals the
// local mean exactly. racks == 1 performs no rounds. Throws kInvalidConfig
// for racks == 0. Returns the number of loopback frames exchanged.
std::size_t emulate_ring_reduce(std::span<float> local_mean, std::size_t racks,
                                Stream& out, Stream& in, std::uint16_t namespace_id,
                                std::uint32_t vkey_id, std::uint32_t iteration);

class Server {
 public:
  explicit Server(ServerConfig config, TraceSink trace = {});
  ~Server();
  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Spawns executors and binds listeners. Throws kBindError. Idempotent.
  void start();
  // Stops listeners, drains executor queues, then closes streams. Idempotent.
  void shutdown();
  bool running() const;

  // Topology and mode come from the server config.
  std::shared_ptr<const Service> create_service(ServiceSpec spec);
  const ConnectionManager& manager() const { return manager_; }
  const ServerConfig& config() const { return config_; }
  Topology topology() const { return config_.topology(); }

  // Attach the server end of a fresh in-process pipe to an endpoint and
  // return the client end.
  StreamPtr connect_inproc(std::size_t endpoint);

  std::uint16_t data_port(std::size_t endpoint) const;
  std::uint16_t control_port() const;

  ServerMetrics metrics() const;

  // Full model of a namespace. Only meaningful while no frames are in
  // flight for it.
  std::vector<float> snapshot_model(std::uint16_t namespace_id) const;

  // Blocks until shutdown was requested through the control channel.
  void wait_for_shutdown_request();

 private:
  struct Impl;
  ServerConfig config_;
  ConnectionManager manager_;
  std::unique_ptr<Impl> impl_;
};

}  // namespace phub
