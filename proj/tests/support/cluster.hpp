// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// In-process server plus helpers for driving it from tests.

#pragma once

#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <thread>
#include <optional>
#include <vector>

#include "phub/server.hpp"
#include "phub/wire.hpp"
#include "phub/worker.hpp"

namespace phub::testing {

ServiceSpec make_spec(const std::string& name, std::size_t n_workers,
                      std::vector<std::size_t> layer_sizes,
                      std::size_t chunk_bytes = kDefaultChunkBytes, float lr = 0.1f,
                      float mu = 0.9f);

class Cluster {
 public:
  explicit Cluster(ServerConfig config, TraceSink trace = {});
  ~Cluster();

  std::shared_ptr<const Service> create(ServiceSpec spec);
  std::unique_ptr<WorkerSession> connect(const Service& service, std::uint16_t worker_id,
                                         SessionOptions options = {});
  Server& server() { return *server_; }

 private:
  std::unique_ptr<Server> server_;
};

// Speaks frames directly so tests control exactly what is sent and when.
class RawClient {
 public:
  // Opens one in-process stream per endpoint and completes HELLO on each.
  RawClient(Server& server, const Service& service, std::uint16_t worker_id);
  // Opens one stream on `endpoint` without any HELLO.
  RawClient(Server& server, std::size_t endpoint, std::uint16_t namespace_id,
            std::uint16_t worker_id);
  ~RawClient() { close(); }
  RawClient(const RawClient&) = delete;
  RawClient& operator=(const RawClient&) = delete;

  Frame make(Opcode op, std::uint32_t vkey_id, std::uint32_t iteration,
             std::span<const float> values = {}) const;
  // Sends on the stream of the endpoint that owns vkey_id for this worker.
  void send(const Frame& frame);
  void send_on(std::size_t endpoint, const Frame& frame);
  // Next frame from any stream; nullopt after timeout or close.
  std::optional<Frame> receive(std::chrono::milliseconds timeout = std::chrono::seconds(10));
  Frame expect(Opcode op, std::chrono::milliseconds timeout = std::chrono::seconds(10));

  void hello(std::size_t endpoint, std::uint64_t nonce, std::uint64_t digest);
  void barrier();
  std::size_t endpoint_for(std::uint32_t vkey_id) const;
  void close();

 private:
  void start_reader(std::size_t endpoint);

  std::uint16_t namespace_id_;
  std::uint16_t worker_id_;
  std::optional<AssignmentPlan> assignment_;
  std::map<std::size_t, StreamPtr> streams_;
  std::vector<std::jthread> readers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Frame> inbox_;
};

}  // namespace phub::testing
