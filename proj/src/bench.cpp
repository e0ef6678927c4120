// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/bench.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <fcntl.h>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>

#include "phub/control.hpp"
#include "phub/error.hpp"
#include "phub/layout.hpp"
#include "phub/models.hpp"
#include "phub/worker.hpp"

extern char** environ;

namespace phub::bench {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<std::size_t> size_list(const std::string& text) {
  std::vector<std::size_t> out;
  for (const std::string& item : split(text, ',')) out.push_back(parse_u64(item));
  if (out.empty()) fail(ErrorCode::kInvalidConfig, "empty list");
  return out;
}

class Child {
 public:
  Child(const std::vector<std::string>& args, const fs::path& out_log, const fs::path& err_log) {
    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_addopen(&actions, STDOUT_FILENO, out_log.c_str(),
                                     O_WRONLY | O_CREAT | O_TRUNC, 0644);
    posix_spawn_file_actions_addopen(&actions, STDERR_FILENO, err_log.c_str(),
                                     O_WRONLY | O_CREAT | O_TRUNC, 0644);
    std::vector<char*> argv;
    for (const std::string& a : args) argv.push_back(const_cast<char*>(a.c_str()));
    argv.push_back(nullptr);
    const int rc = posix_spawn(&pid_, argv[0], &actions, nullptr, argv.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    if (rc != 0) fail(ErrorCode::kInvalidConfig, "cannot spawn " + args[0]);
  }
  ~Child() {
    if (pid_ > 0 && !reaped_) {
      ::kill(pid_, SIGKILL);
      ::waitpid(pid_, nullptr, 0);
    }
  }
  Child(const Child&) = delete;
  Child& operator=(const Child&) = delete;

  // Exit status, or nullopt after killing the process at the deadline.
  std::optional<int> wait_until(Clock::time_point deadline) {
    while (true) {
      int status = 0;
      const pid_t r = ::waitpid(pid_, &status, WNOHANG);
      if (r == pid_) {
        reaped_ = true;
        if (WIFEXITED(status)) return WEXITSTATUS(status);
        return 128 + WTERMSIG(status);
      }
      if (Clock::now() >= deadline) {
        ::kill(pid_, SIGKILL);
        ::waitpid(pid_, nullptr, 0);
        reaped_ = true;
        return std::nullopt;
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
    }
  }

 private:
  pid_t pid_ = -1;
  bool reaped_ = false;
};

struct RunResult {
  bool ok = false;
  std::string status;
  std::vector<double> throughput;  // per job
  std::vector<double> wall_ms;
  std::vector<std::uint64_t> frames;
  std::vector<std::uint64_t> forwarded;
};

std::uint16_t await_ready(const fs::path& log, Clock::time_point deadline) {
  while (Clock::now() < deadline) {
    std::ifstream in(log);
    std::string line;
    if (std::getline(in, line) && line.starts_with("READY") && in.good()) {
      const KeyValues kv = parse_kv_tokens(line.substr(5));
      return static_cast<std::uint16_t>(kv_u64(kv, "control"));
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  fail(ErrorCode::kTimeout, "server did not report READY");
}

// Exchanges/s of one worker, skipping the first (warm-up) iteration when
// there is more than one.
std::pair<double, double> worker_rate(const fs::path& csv) {
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  std::vector<double> walls;
  while (std::getline(in, line)) {
    const auto cols = split(line, ',');
    if (cols.size() >= 5) walls.push_back(parse_double(cols[4]));
  }
  if (walls.empty()) fail(ErrorCode::kIncomplete, "no iterations in " + csv.string());
  if (walls.size() > 1) walls.erase(walls.begin());
  double total = 0;
  for (double w : walls) total += w;
  const double mean = total / static_cast<double>(walls.size());
  return {total > 0 ? 1000.0 * static_cast<double>(walls.size()) / total : 0.0, mean};
}

RunResult run_once(const ExperimentSpec& spec, const Binaries& bin, const fs::path& dir,
                   std::size_t jobs, const std::string& mode, std::size_t chunk,
                   std::size_t workers) {
  RunResult res;
  fs::create_directories(dir);
  const auto deadline =
      Clock::now() + std::chrono::milliseconds(static_cast<long>(spec.timeout_s * 1000));
  try {
    std::string ports = "0";
    for (std::size_t e = 1; e < spec.endpoints; ++e) ports += ",0";
    std::vector<std::string> server_args{bin.server.string(),
                                         "--control-port", "0",
                                         "--data-ports", ports,
                                         "--executors-per-endpoint",
                                         std::to_string(spec.executors_per_endpoint),
                                         "--mode", mode,
                                         "--init-timeout", std::to_string(spec.timeout_s)};
    if (spec.hierarchical_racks > 0) {
      server_args.push_back("--hierarchical-racks");
      server_args.push_back(std::to_string(spec.hierarchical_racks));
    }
    Child server(server_args, dir / "server.log", dir / "server.err");
    const std::uint16_t control = await_ready(dir / "server.log", deadline);

    std::vector<ServiceHandle> handles;
    {
      ControlClient ctl("127.0.0.1", control);
      for (std::size_t j = 0; j < jobs; ++j) {
        CreateRequest req;
        req.name = "job" + std::to_string(j);
        req.n_workers = workers;
        req.model_spec = spec.model;
        req.chunk_size_bytes = chunk;
        handles.push_back(ctl.create(req));
      }
    }

    std::vector<std::unique_ptr<Child>> children;
    for (std::size_t j = 0; j < jobs; ++j) {
      for (std::size_t w = 0; w < workers; ++w) {
        const std::string tag = "job" + std::to_string(j) + "_w" + std::to_string(w);
        children.push_back(std::make_unique<Child>(
            std::vector<std::string>{bin.worker.string(), "--server",
                                     "127.0.0.1:" + std::to_string(control), "--worker-id",
                                     std::to_string(w), "--service", "job" + std::to_string(j),
                                     "--nonce", std::to_string(handles[j].nonce), "--compute",
                                     spec.compute, "--iterations", std::to_string(spec.iterations),
                                     "--seed", std::to_string(spec.seed + j), "--csv-out",
                                     (dir / (tag + ".csv")).string()},
            dir / (tag + ".log"), dir / (tag + ".err")));
      }
    }
    for (auto& c : children) {
      const auto rc = c->wait_until(deadline);
      if (!rc) {
        res.status = "timeout";
      } else if (*rc != 0 && res.status.empty()) {
        res.status = "worker_exit_" + std::to_string(*rc);
      }
    }

    {
      ControlClient ctl("127.0.0.1", control);
      for (std::size_t j = 0; j < jobs; ++j) {
        const ControlMetrics m = ctl.metrics("job" + std::to_string(j));
        res.frames.push_back(m.frames_rx);
        res.forwarded.push_back(m.forwarded_frames);
      }
      ctl.shutdown();
    }
    server.wait_until(Clock::now() + std::chrono::seconds(10));
    if (!res.status.empty()) return res;

    for (std::size_t j = 0; j < jobs; ++j) {
      double rate = 0;
      double wall = 0;
      for (std::size_t w = 0; w < workers; ++w) {
        const auto [r, m] =
            worker_rate(dir / ("job" + std::to_string(j) + "_w" + std::to_string(w) + ".csv"));
        rate += r;
        wall += m;
      }
      res.throughput.push_back(rate);
      res.wall_ms.push_back(wall / static_cast<double>(workers));
    }
    res.ok = true;
    res.status = "ok";
  } catch (const Error& e) {
    res.status = "error_" + std::string(to_string(e.code()));
  }
  return res;
}

template <typename T>
T median(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  if (n % 2 == 1) return v[n / 2];
  return (v[n / 2 - 1] + v[n / 2]) / 2;
}

}  // namespace

ExperimentSpec parse_spec(const KeyValues& kv) {
  ExperimentSpec s;
  for (const auto& [key, value] : kv) {
    if (key == "name") {
      s.name = value;
    } else if (key == "model") {
      s.model = value;
    } else if (key == "workers") {
      s.workers = size_list(value);
    } else if (key == "chunk_sizes") {
      s.chunk_sizes = size_list(value);
    } else if (key == "modes") {
      s.modes = split(value, ',');
      for (const std::string& m : s.modes) parse_affinity_mode(m);
    } else if (key == "jobs") {
      s.jobs = size_list(value);
    } else if (key == "endpoints") {
      s.endpoints = parse_u64(value);
    } else if (key == "executors_per_endpoint") {
      s.executors_per_endpoint = parse_u64(value);
    } else if (key == "hierarchical_racks") {
      s.hierarchical_racks = parse_u64(value);
    } else if (key == "compute") {
      ComputeModel::parse(value);
      s.compute = value;
    } else if (key == "iterations") {
      s.iterations = static_cast<std::uint32_t>(parse_u64(value));
    } else if (key == "repetitions") {
      s.repetitions = static_cast<std::uint32_t>(parse_u64(value));
    } else if (key == "seed") {
      s.seed = parse_u64(value);
    } else if (key == "timeout_s") {
      s.timeout_s = parse_double(value);
    } else {
      fail(ErrorCode::kInvalidConfig, "unknown spec key '" + key + "'");
    }
  }
  if (s.iterations < 1) fail(ErrorCode::kInvalidConfig, "iterations must be >= 1");
  if (s.repetitions < 1) fail(ErrorCode::kInvalidConfig, "repetitions must be >= 1");
  if (s.endpoints < 1 || s.executors_per_endpoint < 1) {
    fail(ErrorCode::kInvalidConfig, "endpoints and executors_per_endpoint must be >= 1");
  }
  for (std::size_t w : s.workers) {
    if (w < 1) fail(ErrorCode::kInvalidConfig, "worker counts must be >= 1");
  }
  for (std::size_t j : s.jobs) {
    if (j < 1) fail(ErrorCode::kInvalidConfig, "job counts must be >= 1");
  }
  parse_model_spec(s.model);
  return s;
}

ExperimentSpec load_spec(const std::string& path) { return parse_spec(parse_kv_file(path)); }

std::string to_csv(const ResultRow& r) {
  std::ostringstream out;
  out << r.experiment << ',' << r.jobs << ',' << r.job << ',' << r.mode << ',' << r.chunk_bytes
      << ',' << r.workers << ',' << r.endpoints << ',' << r.repetitions << ',' << r.throughput
      << ',' << r.wall_ms << ',' << r.frames << ',' << r.forwarded_frames << ',';
  if (r.solo_ratio >= 0) out << r.solo_ratio;
  out << ',' << r.status;
  return out.str();
}

Binaries default_binaries() {
  std::error_code ec;
  const fs::path self = fs::read_symlink("/proc/self/exe", ec);
  const fs::path dir = ec ? fs::current_path() : self.parent_path();
  return {dir / "phub_server", dir / "phub_worker"};
}

std::vector<ResultRow> run_experiment(const ExperimentSpec& spec, const Binaries& bin,
                                      const fs::path& out_dir) {
  std::vector<ResultRow> rows;
  for (std::size_t jobs : spec.jobs) {
    for (const std::string& mode : spec.modes) {
      for (std::size_t chunk : spec.chunk_sizes) {
        for (std::size_t workers : spec.workers) {
          std::vector<RunResult> good;
          std::string status = "ok";
          for (std::uint32_t rep = 0; rep < spec.repetitions; ++rep) {
            std::ostringstream tag;
            tag << spec.name << "_j" << jobs << '_' << mode << "_c" << chunk << "_w" << workers
                << "_r" << rep;
            RunResult r =
                run_once(spec, bin, out_dir / "logs" / tag.str(), jobs, mode, chunk, workers);
            if (r.ok) {
              good.push_back(std::move(r));
            } else if (status == "ok") {
              status = r.status;
            }
          }
          for (std::size_t j = 0; j < jobs; ++j) {
            ResultRow row;
            row.experiment = spec.name;
            row.jobs = jobs;
            row.job = j;
            row.mode = mode;
            row.chunk_bytes = chunk;
            row.workers = workers;
            row.endpoints = spec.endpoints;
            row.repetitions = static_cast<std::uint32_t>(good.size());
            row.status = status;
            if (!good.empty()) {
              std::vector<double> tp, wall;
              std::vector<std::uint64_t> frames, fwd;
              for (const RunResult& r : good) {
                tp.push_back(r.throughput[j]);
                wall.push_back(r.wall_ms[j]);
                frames.push_back(r.frames[j]);
                fwd.push_back(r.forwarded[j]);
              }
              row.throughput = median(tp);
              row.wall_ms = median(wall);
              row.frames = median(frames);
              row.forwarded_frames = median(fwd);
            }
            rows.push_back(row);
          }
        }
      }
    }
  }
  for (ResultRow& row : rows) {
    if (row.jobs == 1) {
      row.solo_ratio = row.repetitions > 0 ? 1.0 : -1.0;
      continue;
    }
    auto solo = std::find_if(rows.begin(), rows.end(), [&](const ResultRow& s) {
      return s.jobs == 1 && s.mode == row.mode && s.chunk_bytes == row.chunk_bytes &&
             s.workers == row.workers;
    });
    if (solo != rows.end() && solo->throughput > 0 && row.repetitions > 0) {
      row.solo_ratio = row.throughput / solo->throughput;
    }
  }
  return rows;
}

std::vector<ResultRow> compare_modes(ExperimentSpec spec, const Binaries& bin,
                                     const fs::path& out_dir) {
  spec.modes = {"key-by-core", "worker-by-interface"};
  return run_experiment(spec, bin, out_dir);
}

std::vector<ResultRow> compare_chunk_sizes(ExperimentSpec spec, std::vector<std::size_t> sizes,
                                           const Binaries& bin, const fs::path& out_dir) {
  spec.chunk_sizes = std::move(sizes);
  return run_experiment(spec, bin, out_dir);
}

std::vector<ResultRow> multi_job(ExperimentSpec spec, std::size_t jobs, const Binaries& bin,
                                 const fs::path& out_dir) {
  spec.jobs = jobs == 1 ? std::vector<std::size_t>{1} : std::vector<std::size_t>{1, jobs};
  return run_experiment(spec, bin, out_dir);
}

void write_results(const std::vector<ResultRow>& rows, const fs::path& csv_path) {
  if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
  std::ofstream out(csv_path);
  out << kResultsHeader << '\n';
  for (const ResultRow& r : rows) out << to_csv(r) << '\n';
}

}  // namespace phub::bench
