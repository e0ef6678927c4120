// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Parameter-server daemon. Prints one line
//   READY control=<port> data=<p0,p1,...>
// once listening, then serves until SIGTERM/SIGINT or a SHUTDOWN request.

#include <signal.h>

#include <CLI11.hpp>
#include <iostream>
#include <thread>

#include "phub/error.hpp"
#include "phub/kv.hpp"
#include "phub/server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"phub parameter server"};
  std::uint16_t control_port = 0;
  std::string data_ports = "0";
  std::size_t executors = 1;
  std::string mode = "key-by-core";
  std::size_t racks = 0;
  double init_timeout_s = 0;
  std::string metrics_out;
  std::string host = "127.0.0.1";
  app.add_option("--host", host, "Bind address");
  app.add_option("--control-port", control_port, "Control port (0 = ephemeral)");
  app.add_option("--data-ports", data_ports, "Comma-separated data ports, one per endpoint");
  app.add_option("--executors-per-endpoint", executors)->check(CLI::PositiveNumber);
  app.add_option("--mode", mode)->check(CLI::IsMember({"key-by-core", "worker-by-interface"}));
  app.add_option("--hierarchical-racks", racks, "Emulated rack count (0 = off)");
  app.add_option("--init-timeout", init_timeout_s, "Seconds to wait for all workers (0 = forever)");
  app.add_option("--metrics-out", metrics_out, "Metrics CSV path");
  CLI11_PARSE(app, argc, argv);

  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGTERM);
  sigaddset(&signals, SIGINT);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    phub::ServerConfig cfg;
    cfg.host = host;
    cfg.control_port = control_port;
    for (const std::string& p : phub::split(data_ports, ',')) {
      cfg.data_ports.push_back(static_cast<std::uint16_t>(phub::parse_u64(p)));
    }
    cfg.executors_per_endpoint = executors;
    cfg.mode = phub::parse_affinity_mode(mode);
    if (racks > 0) cfg.hierarchical_racks = racks;
    if (init_timeout_s > 0) {
      cfg.init_timeout = std::chrono::milliseconds(static_cast<long>(init_timeout_s * 1000));
    }
    cfg.metrics_out = metrics_out;

    phub::Server server(cfg);
    server.start();
    std::cout << "READY control=" << server.control_port() << " data=";
    for (std::size_t e = 0; e < cfg.data_ports.size(); ++e) {
      std::cout << (e ? "," : "") << server.data_port(e);
    }
    std::cout << std::endl;

    std::thread([&server, signals] {
      int sig = 0;
      sigwait(&signals, &sig);
      server.shutdown();
    }).detach();

    server.wait_for_shutdown_request();
    server.shutdown();
  } catch (const phub::Error& e) {
    std::cerr << "phub_server: " << phub::to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
