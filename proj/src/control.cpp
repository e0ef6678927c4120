// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/control.hpp"

#include <unistd.h>

#include <sstream>

#include "phub/error.hpp"
#include "phub/models.hpp"
#include "phub/stream.hpp"

namespace phub {

std::string format_create(const CreateRequest& request) {
  std::ostringstream line;
  line.precision(9);
  line << "CREATE name=" << request.name << " workers=" << request.n_workers
       << " model=" << request.model_spec << " chunk=" << request.chunk_size_bytes
       << " lr=" << request.optimizer.learning_rate << " mu=" << request.optimizer.momentum_coeff;
  return line.str();
}

CreateRequest parse_create(const KeyValues& kv) {
  CreateRequest r;
  r.name = kv_get(kv, "name");
  r.n_workers = kv_u64(kv, "workers");
  r.model_spec = kv_get(kv, "model");
  r.chunk_size_bytes = kv_u64_or(kv, "chunk", kDefaultChunkBytes);
  r.optimizer.learning_rate = static_cast<float>(kv_double_or(kv, "lr", 0.1));
  r.optimizer.momentum_coeff = static_cast<float>(kv_double_or(kv, "mu", 0.9));
  return r;
}

ControlClient::ControlClient(const std::string& host, std::uint16_t port)
    : fd_(connect_tcp(host, port)) {}

ControlClient::~ControlClient() { ::close(fd_); }

KeyValues ControlClient::call(const std::string& line) {
  write_all(fd_, line + "\n");
  std::string reply;
  if (!read_line(fd_, reply)) fail(ErrorCode::kTransportError, "control channel closed");
  if (reply.starts_with("OK")) return parse_kv_tokens(reply.substr(2));
  if (reply.starts_with("ERR")) {
    const KeyValues kv = parse_kv_tokens(reply.substr(3));
    const auto code = static_cast<ErrorCode>(kv_u64_or(kv, "code", 11));
    const auto msg_pos = reply.find("msg=");
    fail(code, msg_pos == std::string::npos ? reply : reply.substr(msg_pos + 4));
  }
  fail(ErrorCode::kProtocolError, "bad control reply: " + reply);
}

ServiceHandle ControlClient::create(const CreateRequest& request) {
  const KeyValues kv = call(format_create(request));
  ServiceHandle h;
  h.namespace_id = static_cast<std::uint16_t>(kv_u64(kv, "ns"));
  h.nonce = kv_u64(kv, "nonce");
  h.chunk_plan_digest = kv_u64(kv, "digest");
  return h;
}

ServiceInfo ControlClient::info(const std::string& name) {
  const KeyValues kv = call("INFO name=" + name);
  ServiceInfo info;
  ServiceDescriptor& d = info.descriptor;
  d.name = name;
  d.namespace_id = static_cast<std::uint16_t>(kv_u64(kv, "ns"));
  d.n_workers = kv_u64(kv, "workers");
  d.chunk_size_bytes = kv_u64(kv, "chunk");
  d.topology.num_endpoints = kv_u64(kv, "endpoints");
  d.topology.executors_per_endpoint = kv_u64(kv, "executors");
  d.mode = parse_affinity_mode(kv_get(kv, "mode"));
  d.chunk_plan_digest = kv_u64(kv, "digest");
  d.manifest = parse_model_spec(kv_get(kv, "model"));
  const std::string ports = kv_get_or(kv, "ports", "");
  if (!ports.empty()) {
    for (const std::string& p : split(ports, ',')) {
      info.data_ports.push_back(static_cast<std::uint16_t>(parse_u64(p)));
    }
  }
  return info;
}

ControlMetrics ControlClient::metrics(const std::string& name) {
  const KeyValues kv = call(name.empty() ? "METRICS" : "METRICS name=" + name);
  ControlMetrics m;
  m.frames_rx = kv_u64(kv, "frames_rx");
  m.frames_tx = kv_u64(kv, "frames_tx");
  m.forwarded_frames = kv_u64(kv, "forwarded");
  m.loopback_frames = kv_u64(kv, "loopback");
  m.completed_iterations = kv_u64(kv, "iterations");
  return m;
}

void ControlClient::shutdown() { call("SHUTDOWN"); }

}  // namespace phub
