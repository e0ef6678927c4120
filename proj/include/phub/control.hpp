// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Text control channel spoken on the server's control port. One request per
// line, space-separated key=value tokens after the command word:
//
//   CREATE name=N workers=W model=SPEC [chunk=BYTES] [lr=F] [mu=F]
//       -> OK ns=ID nonce=U64 digest=U64
//   INFO name=N
//       -> OK ns=ID workers=W chunk=BYTES endpoints=E executors=X mode=M
//          digest=U64 ports=P1,P2 model=sizes:...
//   METRICS [name=N]
//       -> OK frames_rx=.. frames_tx=.. forwarded=.. loopback=.. iterations=..
//   SHUTDOWN
//       -> OK
//
// Failures answer "ERR code=<ErrorCode> msg=<text>".

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "phub/aggregation.hpp"
#include "phub/kv.hpp"
#include "phub/manager.hpp"

namespace phub {

struct CreateRequest {
  std::string name;
  std::size_t n_workers = 1;
  std::string model_spec;
  std::size_t chunk_size_bytes = kDefaultChunkBytes;
  OptimizerConfig optimizer;
};

struct ServiceInfo {
  ServiceDescriptor descriptor;
  std::vector<std::uint16_t> data_ports;
};

struct ControlMetrics {
  std::uint64_t frames_rx = 0;
  std::uint64_t frames_tx = 0;
  std::uint64_t forwarded_frames = 0;
  std::uint64_t loopback_frames = 0;
  std::uint64_t completed_iterations = 0;
};

std::string format_create(const CreateRequest& request);
CreateRequest parse_create(const KeyValues& kv);

class ControlClient {
 public:
  ControlClient(const std::string& host, std::uint16_t port);
  ~ControlClient();
  ControlClient(const ControlClient&) = delete;
  ControlClient& operator=(const ControlClient&) = delete;

  ServiceHandle create(const CreateRequest& request);
  ServiceInfo info(const std::string& name);
  ControlMetrics metrics(const std::string& name = "");
  void shutdown();

  // Sends one raw line and returns the parsed OK reply; ERR replies throw.
  KeyValues call(const std::string& line);

 private:
  int fd_;
};

}  // namespace phub
