// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Worker-side client: whole-key Push/Pull/PushPull on top of per-chunk
// frames, plus the emulated training loop used for benchmarking.

#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <thread>
#include <vector>

#include "phub/layout.hpp"
#include "phub/manager.hpp"
#include "phub/stream.hpp"

namespace phub {

// Opens the data stream for one endpoint.
using Connector = std::function<StreamPtr(std::size_t endpoint)>;

Connector tcp_connector(std::string host, std::vector<std::uint16_t> data_ports);

struct SessionOptions {
  // Send one chunk and wait for its reply before sending the next.
  bool serial = false;
  // Unset: block forever.
  std::optional<std::chrono::milliseconds> timeout;
  // Called right before each chunk frame is sent (instrumentation).
  std::function<void(const VirtualKey&)> before_send;
};

class WorkerSession {
 public:
  // Rebuilds the chunk and assignment plans from the descriptor, opens one
  // stream per endpoint this worker talks to and authenticates with HELLO.
  // The server compares the local plan digest with its own (kPlanMismatch).
  WorkerSession(std::uint16_t worker_id, const ServiceHandle& handle,
                const ServiceDescriptor& descriptor, const Connector& connect,
                SessionOptions options = {});
  ~WorkerSession();
  WorkerSession(const WorkerSession&) = delete;
  WorkerSession& operator=(const WorkerSession&) = delete;

  // Worker 0 may upload an initial model; every worker then waits on the
  // service-wide init barrier.
  void init(std::optional<std::span<const float>> initial_model = std::nullopt);

  void push(std::uint32_t key_id, std::span<const float> gradient);
  std::vector<float> pull(std::uint32_t key_id);
  std::vector<float> push_pull(std::uint32_t key_id, std::span<const float> gradient);

  std::uint16_t worker_id() const { return worker_id_; }
  const ChunkPlan& plan() const { return plan_; }
  const AssignmentPlan& assignment() const { return assignment_; }
  // Number of pushes issued for a key.
  std::uint32_t key_iteration(std::uint32_t key_id) const { return key_iteration_.at(key_id); }
  // Completed iterations over the whole model (minimum over keys).
  std::uint32_t iteration() const;

  void close();

 private:
  struct Expect {
    Opcode opcode;
    std::uint32_t vkey_id;
  };

  std::size_t endpoint_for(std::uint32_t vkey_id) const;
  Frame make_frame(Opcode op, std::uint32_t vkey_id, std::uint32_t iteration) const;
  void send_on(std::size_t endpoint, const Frame& frame);
  Frame await(Opcode opcode, std::uint32_t vkey_id);
  Frame next_frame();
  // Sends one frame per chunk of the key and gathers the replies.
  std::vector<float> exchange(std::uint32_t key_id, Opcode op, std::span<const float> gradient,
                              std::uint32_t iteration);

  std::uint16_t worker_id_;
  ServiceHandle handle_;
  ChunkPlan plan_;
  AssignmentPlan assignment_;
  SessionOptions options_;
  std::vector<std::uint32_t> key_iteration_;

  std::map<std::size_t, StreamPtr> streams_;
  std::vector<std::jthread> readers_;

  std::mutex inbox_mu_;
  std::condition_variable inbox_cv_;
  std::deque<Frame> inbox_;
  std::size_t closed_streams_ = 0;
  // Replies that arrived while waiting for something else (serial mode).
  std::deque<Frame> stash_;
};

struct ComputeModel {
  enum class Kind : std::uint8_t { kZeroCompute, kSynthetic };
  Kind kind = Kind::kZeroCompute;
  std::chrono::milliseconds time_per_batch{0};

  static ComputeModel zero() { return {}; }
  // Throws kInvalidConfig unless ms > 0.
  static ComputeModel synthetic(std::chrono::milliseconds ms);
  // "zero" or "synthetic:MS".
  static ComputeModel parse(const std::string& text);
};

struct IterationRecord {
  std::uint32_t iteration = 0;
  std::int64_t start_us = 0;  // steady clock
  std::int64_t end_us = 0;
  double wall_ms = 0.0;
  double exchanges_per_s = 0.0;
};

// Deterministic gradient in [-1, 1): splitmix64 seeded from
// (seed, worker, iteration, key), top 24 bits of each draw.
std::vector<float> synthetic_gradient(std::uint64_t seed, std::uint32_t worker_id,
                                      std::uint32_t iteration, std::uint32_t key_id,
                                      std::size_t length);

// Per iteration: optional compute delay, then push_pull of every key in
// manifest order with a synthetic gradient.
std::vector<IterationRecord> run_emulated_training(WorkerSession& session,
                                                   const ComputeModel& compute,
                                                   std::uint32_t iterations, std::uint64_t seed);

}  // namespace phub
