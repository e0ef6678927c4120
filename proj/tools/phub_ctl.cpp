// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Control-channel client: create, info, metrics, shutdown.

#include <CLI11.hpp>
#include <iostream>

#include "phub/control.hpp"
#include "phub/error.hpp"
#include "phub/kv.hpp"

int main(int argc, char** argv) {
  CLI::App app{"phub control client"};
  app.require_subcommand(1);
  std::string host = "127.0.0.1";
  std::uint16_t port = 9700;
  app.add_option("--host", host);
  app.add_option("--port", port, "Control port");

  phub::CreateRequest req;
  auto* create = app.add_subcommand("create", "Create a service");
  create->add_option("--name", req.name)->required();
  create->add_option("--workers", req.n_workers)->required();
  create->add_option("--model", req.model_spec)->required();
  create->add_option("--chunk", req.chunk_size_bytes);
  create->add_option("--lr", req.optimizer.learning_rate);
  create->add_option("--mu", req.optimizer.momentum_coeff);

  std::string name;
  auto* info = app.add_subcommand("info", "Describe a service");
  info->add_option("--name", name)->required();
  auto* metrics = app.add_subcommand("metrics", "Frame counters");
  metrics->add_option("--name", name);
  auto* shutdown = app.add_subcommand("shutdown", "Stop the server");
  auto* raw = app.add_subcommand("raw", "Send one raw request line");
  std::string line;
  raw->add_option("line", line)->required();
  CLI11_PARSE(app, argc, argv);

  try {
    phub::ControlClient ctl(host, port);
    auto print = [](const phub::KeyValues& kv) {
      bool first = true;
      for (const auto& [k, v] : kv) {
        std::cout << (first ? "" : " ") << k << '=' << v;
        first = false;
      }
      std::cout << '\n';
    };
    if (*create) {
      const auto h = ctl.create(req);
      std::cout << "ns=" << h.namespace_id << " nonce=" << h.nonce
                << " digest=" << h.chunk_plan_digest << '\n';
    } else if (*info) {
      print(ctl.call("INFO name=" + name));
    } else if (*metrics) {
      print(ctl.call(name.empty() ? "METRICS" : "METRICS name=" + name));
    } else if (*shutdown) {
      ctl.shutdown();
    } else if (*raw) {
      print(ctl.call(line));
    }
  } catch (const phub::Error& e) {
    std::cerr << "phub_ctl: " << phub::to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
