// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/worker.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "phub/error.hpp"
#include "phub/wire.hpp"

namespace phub {

Connector tcp_connector(std::string host, std::vector<std::uint16_t> data_ports) {
  return [host = std::move(host), ports = std::move(data_ports)](std::size_t endpoint) -> StreamPtr {
    if (endpoint >= ports.size()) {
      fail(ErrorCode::kInvalidConfig, "no data port for endpoint " + std::to_string(endpoint));
    }
    return TcpStream::connect(host, ports[endpoint]);
  };
}

WorkerSession::WorkerSession(std::uint16_t worker_id, const ServiceHandle& handle,
                             const ServiceDescriptor& descriptor, const Connector& connect,
                             SessionOptions options)
    : worker_id_(worker_id), handle_(handle), options_(std::move(options)) {
  plan_ = chunk_model(descriptor.manifest, descriptor.chunk_size_bytes);
  assignment_ = assign_chunks(plan_, descriptor.topology, descriptor.mode);
  key_iteration_.assign(plan_.manifest.layers.size(), 0);

  std::set<std::size_t> endpoints;
  for (std::uint32_t v = 0; v < plan_.num_chunks(); ++v) endpoints.insert(endpoint_for(v));
  for (std::size_t e : endpoints) {
    StreamPtr stream = connect(e);
    streams_.emplace(e, stream);
    readers_.emplace_back([this, stream] {
      try {
        while (auto frame = stream->receive()) {
          std::lock_guard lock(inbox_mu_);
          inbox_.push_back(std::move(*frame));
          inbox_cv_.notify_all();
        }
      } catch (const Error&) {
      }
      std::lock_guard lock(inbox_mu_);
      ++closed_streams_;
      inbox_cv_.notify_all();
    });
  }

  const std::uint64_t local_digest = plan_digest(plan_, assignment_);
  for (const auto& [e, stream] : streams_) {
    Frame hello = make_frame(Opcode::kHello, 0, 0);
    put_u64(hello.payload, handle_.nonce);
    put_u64(hello.payload, local_digest);
    send_on(e, hello);
  }
  for (std::size_t i = 0; i < streams_.size(); ++i) await(Opcode::kHelloOk, 0);
}

WorkerSession::~WorkerSession() { close(); }

void WorkerSession::close() {
  for (auto& [e, stream] : streams_) stream->close();
  for (auto& t : readers_) {
    if (t.joinable()) t.join();
  }
  readers_.clear();
}

std::uint32_t WorkerSession::iteration() const {
  return *std::min_element(key_iteration_.begin(), key_iteration_.end());
}

std::size_t WorkerSession::endpoint_for(std::uint32_t vkey_id) const {
  if (assignment_.mode == AffinityMode::kWorkerByInterface) {
    return worker_id_ % assignment_.topology.num_endpoints;
  }
  return assignment_.map.at(vkey_id).endpoint;
}

Frame WorkerSession::make_frame(Opcode op, std::uint32_t vkey_id, std::uint32_t iteration) const {
  Frame f;
  f.opcode = op;
  f.namespace_id = handle_.namespace_id;
  f.vkey_id = vkey_id;
  f.worker_id = worker_id_;
  f.iteration = iteration;
  return f;
}

void WorkerSession::send_on(std::size_t endpoint, const Frame& frame) {
  streams_.at(endpoint)->send(frame);
}

Frame WorkerSession::next_frame() {
  std::unique_lock lock(inbox_mu_);
  auto ready = [&] { return !inbox_.empty() || closed_streams_ > 0; };
  if (options_.timeout) {
    if (!inbox_cv_.wait_for(lock, *options_.timeout, ready)) {
      fail(ErrorCode::kTimeout, "no reply from server");
    }
  } else {
    inbox_cv_.wait(lock, ready);
  }
  if (inbox_.empty()) fail(ErrorCode::kTransportError, "server closed the stream");
  Frame f = std::move(inbox_.front());
  inbox_.pop_front();
  return f;
}

Frame WorkerSession::await(Opcode opcode, std::uint32_t vkey_id) {
  auto matches = [&](const Frame& f) {
    return (f.opcode == opcode || f.opcode == Opcode::kError) && f.vkey_id == vkey_id;
  };
  auto it = std::find_if(stash_.begin(), stash_.end(), matches);
  Frame f;
  if (it != stash_.end()) {
    f = std::move(*it);
    stash_.erase(it);
  } else {
    while (true) {
      f = next_frame();
      if (f.opcode == Opcode::kError) break;
      if (matches(f)) break;
      stash_.push_back(std::move(f));
    }
  }
  if (f.opcode == Opcode::kError) {
    fail(error_code_of(f), "server rejected vkey " + std::to_string(f.vkey_id));
  }
  return f;
}

std::vector<float> WorkerSession::exchange(std::uint32_t key_id, Opcode op,
                                           std::span<const float> gradient,
                                           std::uint32_t iteration) {
  const auto chunks = plan_.chunks_of(key_id);
  const std::size_t key_len = plan_.manifest.layers[key_id].num_elements;
  const bool sends_gradient = op != Opcode::kPull;
  if (sends_gradient && gradient.size() != key_len) {
    fail(ErrorCode::kLengthMismatch, "key " + std::to_string(key_id) + " has " +
                                         std::to_string(key_len) + " elements, gradient has " +
                                         std::to_string(gradient.size()));
  }
  const Opcode reply = op == Opcode::kPush ? Opcode::kPushAck : Opcode::kPullResp;
  std::vector<float> out(reply == Opcode::kPullResp ? key_len : 0);
  const std::uint32_t first = chunks.front().vkey_id;

  auto send_chunk = [&](const VirtualKey& vk) {
    Frame f = make_frame(op, vk.vkey_id, iteration);
    if (sends_gradient) {
      f.payload = floats_to_payload(gradient.subspan(vk.offset_elements, vk.length_elements));
    }
    if (options_.before_send) options_.before_send(vk);
    send_on(endpoint_for(vk.vkey_id), f);
  };
  auto place = [&](const Frame& f) {
    if (reply != Opcode::kPullResp) return;
    const VirtualKey& vk = plan_.vkeys[f.vkey_id];
    payload_to_floats(f.payload,
                      std::span<float>(out).subspan(vk.offset_elements, vk.length_elements));
  };

  if (options_.serial) {
    for (const VirtualKey& vk : chunks) {
      send_chunk(vk);
      place(await(reply, vk.vkey_id));
    }
    return out;
  }

  for (const VirtualKey& vk : chunks) send_chunk(vk);
  std::vector<std::uint8_t> seen(chunks.size(), 0);
  std::size_t remaining = chunks.size();
  while (remaining > 0) {
    Frame f = next_frame();
    if (f.opcode == Opcode::kError) {
      fail(error_code_of(f), "server rejected vkey " + std::to_string(f.vkey_id));
    }
    const bool in_key = f.vkey_id >= first && f.vkey_id < first + chunks.size();
    if (f.opcode != reply || !in_key || seen[f.vkey_id - first]) {
      fail(ErrorCode::kProtocolError, "unexpected reply for vkey " + std::to_string(f.vkey_id));
    }
    seen[f.vkey_id - first] = 1;
    --remaining;
    place(f);
  }
  return out;
}

void WorkerSession::init(std::optional<std::span<const float>> initial_model) {
  if (initial_model) {
    if (initial_model->size() != plan_.manifest.total_elements) {
      fail(ErrorCode::kInvalidInit, "initial model has wrong length");
    }
    for (std::uint32_t k = 0; k < plan_.manifest.layers.size(); ++k) {
      exchange(k, Opcode::kPush,
               initial_model->subspan(plan_.key_base[k], plan_.manifest.layers[k].num_elements),
               0);
    }
  }
  Frame barrier = make_frame(Opcode::kPull, kBarrierVkey, 0);
  send_on(streams_.begin()->first, barrier);
  await(Opcode::kPullResp, kBarrierVkey);
}

void WorkerSession::push(std::uint32_t key_id, std::span<const float> gradient) {
  exchange(key_id, Opcode::kPush, gradient, key_iteration_.at(key_id) + 1);
  ++key_iteration_[key_id];
}

std::vector<float> WorkerSession::pull(std::uint32_t key_id) {
  return exchange(key_id, Opcode::kPull, {}, key_iteration_.at(key_id));
}

std::vector<float> WorkerSession::push_pull(std::uint32_t key_id,
                                            std::span<const float> gradient) {
  auto weights = exchange(key_id, Opcode::kPushPull, gradient, key_iteration_.at(key_id) + 1);
  ++key_iteration_[key_id];
  return weights;
}

ComputeModel ComputeModel::synthetic(std::chrono::milliseconds ms) {
  if (ms.count() <= 0) fail(ErrorCode::kInvalidConfig, "synthetic compute needs time > 0");
  return ComputeModel{Kind::kSynthetic, ms};
}

ComputeModel ComputeModel::parse(const std::string& text) {
  if (text == "zero") return zero();
  if (text.starts_with("synthetic:")) {
    try {
      return synthetic(std::chrono::milliseconds(std::stoll(text.substr(10))));
    } catch (const std::logic_error&) {
    }
  }
  fail(ErrorCode::kInvalidConfig, "bad compute model '" + text + "'");
}

namespace {

std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::int64_t steady_us() {
  return std::chrono::duration_cast<std::chrono::microseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

std::vector<float> synthetic_gradient(std::uint64_t seed, std::uint32_t worker_id,
                                      std::uint32_t iteration, std::uint32_t key_id,
                                      std::size_t length) {
  std::uint64_t state = seed;
  for (std::uint64_t part : {std::uint64_t{worker_id}, std::uint64_t{iteration},
                             std::uint64_t{key_id}}) {
    state ^= splitmix64(state) + part;
  }
  std::vector<float> out(length);
  for (float& x : out) {
    const std::uint32_t bits = static_cast<std::uint32_t>(splitmix64(state) >> 40);
    x = static_cast<float>(bits) * (2.0f / 16777216.0f) - 1.0f;
  }
  return out;
}

std::vector<IterationRecord> run_emulated_training(WorkerSession& session,
                                                   const ComputeModel& compute,
                                                   std::uint32_t iterations, std::uint64_t seed) {
  std::vector<IterationRecord> records;
  records.reserve(iterations);
  const auto& layers = session.plan().manifest.layers;
  for (std::uint32_t i = 0; i < iterations; ++i) {
    IterationRecord rec;
    rec.start_us = steady_us();
    if (compute.kind == ComputeModel::Kind::kSynthetic) {
      std::this_thread::sleep_for(compute.time_per_batch);
    }
    for (const LayerKey& key : layers) {
      const auto grad = synthetic_gradient(seed, session.worker_id(),
                                           session.key_iteration(key.key_id) + 1, key.key_id,
                                           key.num_elements);
      session.push_pull(key.key_id, grad);
    }
    rec.end_us = steady_us();
    rec.iteration = session.iteration();
    rec.wall_ms = static_cast<double>(rec.end_us - rec.start_us) / 1000.0;
    rec.exchanges_per_s = rec.wall_ms > 0 ? 1000.0 / rec.wall_ms : 0.0;
    records.push_back(rec);
  }
  return records;
}

}  // namespace phub
