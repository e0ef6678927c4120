// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Experiment runner: one phub_server plus W phub_worker processes per
// configuration point on localhost, median over repetitions, CSV out.
//
// Spec file, one key=value per line, lists comma-separated, # comments:
//
//   name=scaling
//   model=preset:RN18 | sizes:a,b | <manifest file>
//   workers=1,2,4
//   chunk_sizes=32768
//   modes=key-by-core,worker-by-interface
//   jobs=1              concurrent namespaces for multi-job runs
//   endpoints=1         data ports on the server
//   executors_per_endpoint=1
//   hierarchical_racks=0
//   compute=zero | synthetic:MS
//   iterations=20
//   repetitions=3
//   seed=1
//   timeout_s=120       per configuration point

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "phub/kv.hpp"

namespace phub::bench {

struct ExperimentSpec {
  std::string name = "experiment";
  std::string model = "sizes:65536";
  std::vector<std::size_t> workers{1};
  std::vector<std::size_t> chunk_sizes{32 * 1024};
  std::vector<std::string> modes{"key-by-core"};
  std::vector<std::size_t> jobs{1};
  std::size_t endpoints = 1;
  std::size_t executors_per_endpoint = 1;
  std::size_t hierarchical_racks = 0;
  std::string compute = "zero";
  std::uint32_t iterations = 20;
  std::uint32_t repetitions = 3;
  std::uint64_t seed = 1;
  double timeout_s = 120;
};

// Throws kInvalidConfig on unknown keys or invalid values.
ExperimentSpec parse_spec(const KeyValues& kv);
ExperimentSpec load_spec(const std::string& path);

struct ResultRow {
  std::string experiment;
  std::size_t jobs = 1;
  std::size_t job = 0;
  std::string mode;
  std::size_t chunk_bytes = 0;
  std::size_t workers = 0;
  std::size_t endpoints = 1;
  std::uint32_t repetitions = 0;  // successful ones
  double throughput = 0;          // exchanges/s summed over the job's workers
  double wall_ms = 0;             // mean iteration wall time
  std::uint64_t frames = 0;       // frames received by the server for the job
  std::uint64_t forwarded_frames = 0;
  double solo_ratio = -1;         // vs the jobs=1 row of the same config; <0: n/a
  std::string status = "ok";
};

inline constexpr const char* kResultsHeader =
    "experiment,jobs,job,mode,chunk_bytes,workers,endpoints,repetitions,throughput_xps,"
    "wall_ms,frames,forwarded_frames,solo_ratio,status";

std::string to_csv(const ResultRow& row);

struct Binaries {
  std::filesystem::path server;
  std::filesystem::path worker;
};

// phub_server and phub_worker next to the running executable.
Binaries default_binaries();

// Runs every (jobs, mode, chunk size, workers) point `repetitions` times.
// Per-run worker CSVs and process logs go under out_dir/logs. A failing
// point yields a row whose status names the failure; the run continues.
std::vector<ResultRow> run_experiment(const ExperimentSpec& spec, const Binaries& bin,
                                      const std::filesystem::path& out_dir);

std::vector<ResultRow> compare_modes(ExperimentSpec spec, const Binaries& bin,
                                     const std::filesystem::path& out_dir);
std::vector<ResultRow> compare_chunk_sizes(ExperimentSpec spec, std::vector<std::size_t> sizes,
                                           const Binaries& bin,
                                           const std::filesystem::path& out_dir);
// Solo baseline plus `jobs` concurrent namespaces.
std::vector<ResultRow> multi_job(ExperimentSpec spec, std::size_t jobs, const Binaries& bin,
                                 const std::filesystem::path& out_dir);

void write_results(const std::vector<ResultRow>& rows, const std::filesystem::path& csv_path);

}  // namespace phub::bench
