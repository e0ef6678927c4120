// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Emulated training worker. Looks the service up over the control channel,
// joins it and runs push_pull iterations with synthetic gradients.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>

#include "phub/control.hpp"
#include "phub/error.hpp"
#include "phub/kv.hpp"
#include "phub/models.hpp"
#include "phub/worker.hpp"

int main(int argc, char** argv) {
  CLI::App app{"phub emulated worker"};
  std::string server = "127.0.0.1:9700";
  std::uint16_t worker_id = 0;
  std::string service;
  std::uint64_t nonce = 0;
  std::string compute = "zero";
  std::uint32_t iterations = 10;
  std::string model;
  std::uint64_t seed = 1;
  std::string csv_out;
  bool serial = false;
  app.add_option("--server", server, "host:control_port");
  app.add_option("--worker-id", worker_id)->required();
  app.add_option("--service", service)->required();
  app.add_option("--nonce", nonce)->required();
  app.add_option("--compute", compute, "zero | synthetic:MS");
  app.add_option("--iterations", iterations)->check(CLI::PositiveNumber);
  app.add_option("--model", model, "Model spec (file, preset:NAME, sizes:...); default: the service's");
  app.add_option("--seed", seed);
  app.add_option("--csv-out", csv_out, "Per-iteration CSV");
  app.add_flag("--serial", serial, "One chunk in flight at a time");
  CLI11_PARSE(app, argc, argv);

  try {
    const auto colon = server.rfind(':');
    if (colon == std::string::npos) {
      phub::fail(phub::ErrorCode::kInvalidConfig, "--server must be host:port");
    }
    const std::string host = server.substr(0, colon);
    const auto port = static_cast<std::uint16_t>(phub::parse_u64(server.substr(colon + 1)));
    const phub::ComputeModel compute_model = phub::ComputeModel::parse(compute);

    phub::ServiceInfo info;
    {
      phub::ControlClient ctl(host, port);
      info = ctl.info(service);
    }
    // A locally supplied model that differs from the service's shows up as
    // a digest mismatch at HELLO.
    if (!model.empty()) info.descriptor.manifest = phub::parse_model_spec(model);
    const phub::ServiceHandle handle{info.descriptor.namespace_id, nonce,
                                     info.descriptor.chunk_plan_digest};

    phub::SessionOptions options;
    options.serial = serial;
    phub::WorkerSession session(worker_id, handle, info.descriptor,
                                phub::tcp_connector(host, info.data_ports), options);
    session.init();
    const auto records = phub::run_emulated_training(session, compute_model, iterations, seed);
    session.close();

    double total_ms = 0;
    for (const auto& r : records) total_ms += r.wall_ms;
    if (!csv_out.empty()) {
      std::ofstream out(csv_out);
      out << "worker,iteration,start_us,end_us,wall_ms,exchanges_per_s\n";
      for (const auto& r : records) {
        out << worker_id << ',' << r.iteration << ',' << r.start_us << ',' << r.end_us << ','
            << r.wall_ms << ',' << r.exchanges_per_s << '\n';
      }
    }
    std::cout << "DONE worker=" << worker_id << " iterations=" << records.size()
              << " wall_ms=" << total_ms
              << " exchanges_per_s=" << (total_ms > 0 ? 1000.0 * records.size() / total_ms : 0)
              << std::endl;
  } catch (const phub::Error& e) {
    std::cerr << "phub_worker: " << phub::to_string(e.code()) << ": " << e.what() << "\n";
    return 2;
  }
  return 0;
}
