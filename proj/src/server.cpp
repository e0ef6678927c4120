// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/server.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cassert>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "phub/aggregation.hpp"
#include "phub/control.hpp"
#include "phub/error.hpp"
#include "phub/kv.hpp"
#include "phub/models.hpp"

namespace phub {

ExecutorSlot route_frame(const AssignmentPlan& assignment, const Frame& frame,
                         std::uint16_t source_worker) {
  if (frame.vkey_id >= assignment.map.size()) {
    fail(ErrorCode::kProtocolError, "unknown vkey " + std::to_string(frame.vkey_id));
  }
  const ExecutorSlot home = assignment.map[frame.vkey_id];
  if (assignment.mode == AffinityMode::kKeyByInterfaceCore) return home;
  const auto endpoint =
      static_cast<std::uint32_t>(source_worker % assignment.topology.num_endpoints);
  return ExecutorSlot{endpoint, home.executor};
}

std::size_t emulate_ring_reduce(std::span<float> local_mean, std::size_t racks, Stream& out,
                                Stream& in, std::uint16_t namespace_id, std::uint32_t vkey_id,
                                std::uint32_t iteration) {
  if (racks == 0) fail(ErrorCode::kInvalidConfig, "hierarchical reduction needs r >= 1");
  if (racks == 1) return 0;
  std::vector<float> peer(local_mean.size());
  for (std::size_t round = 0; round < racks; ++round) {
    Frame f;
    f.opcode = Opcode::kPush;
    f.namespace_id = namespace_id;
    f.vkey_id = vkey_id;
    f.worker_id = kLoopbackWorker;
    f.iteration = iteration;
    f.payload = floats_to_payload(local_mean);
    out.send(f);
    const auto echoed = in.receive();
    if (!echoed || echoed->vkey_id != vkey_id) {
      fail(ErrorCode::kTransportError, "loopback stream lost a frame");
    }
    payload_to_floats(echoed->payload, peer);
    // Running mean over round + 2 contributions.
    const float weight = static_cast<float>(round + 2);
    for (std::size_t i = 0; i < peer.size(); ++i) {
      local_mean[i] = local_mean[i] + (peer[i] - local_mean[i]) / weight;
    }
  }
  return racks;
}

namespace {

using Clock = std::chrono::steady_clock;

thread_local std::size_t t_current_executor = static_cast<std::size_t>(-1);

struct PendingPull {
  StreamPtr reply;
  std::uint16_t worker = 0;
};

struct NamespaceState;

struct Task {
  enum class Kind : std::uint8_t { kFrame, kPartialSum, kStop };
  Kind kind = Kind::kFrame;
  NamespaceState* ns = nullptr;
  Frame frame;
  StreamPtr reply;
  std::vector<std::uint32_t> workers;
  std::vector<float> sum;
};

struct NamespaceState {
  std::shared_ptr<const Service> service;
  const Optimizer* optimizer = nullptr;
  std::size_t n_workers = 0;
  ChunkStates home;
  // Worker-by-interface only: [endpoint][vkey] partial sums.
  std::vector<std::vector<ChunkAggState>> partials;
  std::vector<std::size_t> workers_at_endpoint;
  // Owned by each vkey's home executor.
  std::vector<std::vector<PendingPull>> pending;
  std::vector<std::deque<Task>> early_partials;
  std::vector<std::uint8_t> initialized;

  std::atomic<std::size_t> init_elements{0};
  std::atomic<bool> ready{false};

  std::atomic<std::uint64_t> frames_rx{0};
  std::atomic<std::uint64_t> frames_tx{0};
  std::atomic<std::uint64_t> forwarded{0};
  std::atomic<std::uint64_t> loopback{0};
  std::atomic<std::uint64_t> completions{0};

  // Control plane.
  std::mutex mu;
  std::vector<std::set<std::uint16_t>> bound;  // [endpoint] -> worker ids
  std::map<std::uint16_t, std::pair<StreamPtr, Frame>> barrier_waiters;
  std::optional<Clock::time_point> barrier_started;
  bool init_failed = false;

  // Metrics sampling (housekeeping thread only).
  std::uint64_t last_iterations = 0;
  Clock::time_point last_sample = Clock::now();

  const ChunkPlan& plan() const { return service->plan; }
  const AssignmentPlan& assignment() const { return service->assignment; }
};

}  // namespace

struct Server::Impl {
  class Executor {
   public:
    Executor(Impl& impl, std::size_t flat) : impl_(impl), flat_(flat) {
      std::tie(loop_out_, loop_in_) = make_inproc_pipe();
    }

    void start() {
      std::lock_guard lock(mu_);
      if (thread_.joinable()) return;
      accepting_ = true;
      thread_ = std::jthread([this] { run(); });
    }

    void post(Task task) {
      std::lock_guard lock(mu_);
      if (!accepting_) return;
      queue_.push_back(std::move(task));
      cv_.notify_one();
    }

    void stop_and_join() {
      {
        std::lock_guard lock(mu_);
        if (!accepting_) return;
        Task stop;
        stop.kind = Task::Kind::kStop;
        queue_.push_back(std::move(stop));
        accepting_ = false;
        cv_.notify_one();
      }
      if (thread_.joinable()) thread_.join();
    }

    std::size_t index() const { return flat_; }
    Stream& loop_out() { return *loop_out_; }
    Stream& loop_in() { return *loop_in_; }

   private:
    void run() {
      t_current_executor = flat_;
      while (true) {
        Task task;
        {
          std::unique_lock lock(mu_);
          cv_.wait(lock, [&] { return !queue_.empty(); });
          task = std::move(queue_.front());
          queue_.pop_front();
        }
        if (task.kind == Task::Kind::kStop) break;
        try {
          impl_.process(*this, task);
        } catch (const Error& e) {
          if (task.reply) impl_.send_error(*task.ns, task.reply, task.frame, e.code());
        }
      }
    }

    Impl& impl_;
    std::size_t flat_;
    StreamPtr loop_out_;
    StreamPtr loop_in_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<Task> queue_;
    bool accepting_ = false;
    std::jthread thread_;
  };

  struct Connection {
    StreamPtr stream;
    std::jthread reader;
  };

  Impl(Server& owner, TraceSink trace_sink) : server(owner), trace(std::move(trace_sink)) {}

  Server& server;
  TraceSink trace;
  std::vector<std::unique_ptr<Executor>> executors;

  mutable std::mutex ns_mu;
  std::vector<std::unique_ptr<NamespaceState>> namespaces;

  std::mutex lifecycle_mu;
  bool started = false;
  bool stopped = false;
  std::atomic<bool> stopping{false};

  std::vector<std::unique_ptr<TcpListener>> listeners;
  std::unique_ptr<TcpListener> control;
  std::vector<std::jthread> acceptors;
  std::jthread housekeeping;

  std::mutex conn_mu;
  std::vector<Connection> connections;
  std::vector<int> control_fds;

  std::mutex shutdown_mu;
  std::condition_variable shutdown_cv;
  bool shutdown_requested = false;
  std::condition_variable housekeeping_cv;

  std::ofstream metrics_file;

  const ServerConfig& cfg() const { return server.config_; }
  Topology topo() const { return cfg().topology(); }

  void emit(TraceEvent::Kind kind, const NamespaceState& ns, std::uint32_t vkey,
            std::uint16_t worker, std::uint32_t iteration, std::size_t executor) {
    if (!trace) return;
    TraceEvent ev;
    ev.kind = kind;
    ev.namespace_id = ns.service->handle.namespace_id;
    ev.vkey_id = vkey;
    ev.worker_id = worker;
    ev.iteration = iteration;
    ev.executor = executor;
    ev.at = Clock::now();
    trace(ev);
  }

  NamespaceState* find_ns(std::uint16_t id) const {
    std::lock_guard lock(ns_mu);
    return id < namespaces.size() ? namespaces[id].get() : nullptr;
  }

  void send(NamespaceState* ns, const StreamPtr& stream, const Frame& frame) {
    try {
      stream->send(frame);
      if (ns) ++ns->frames_tx;
    } catch (const Error&) {
      // Peer went away; nothing left to answer.
    }
  }

  void send_error(NamespaceState& ns, const StreamPtr& stream, const Frame& request,
                  ErrorCode code) {
    send(&ns, stream, make_error_frame(request, code));
  }

  // ---- executor side -------------------------------------------------------

  bool is_home(const NamespaceState& ns, const Executor& ex, std::uint32_t vkey) const {
    return ns.assignment().map[vkey].flat(topo()) == ex.index();
  }

  void forward_to_home(NamespaceState& ns, Task task) {
    const std::size_t home = ns.assignment().map[task.frame.vkey_id].flat(topo());
    ++ns.forwarded;
    task.ns = &ns;
    executors[home]->post(std::move(task));
  }

  void process(Executor& ex, Task& task) {
    NamespaceState& ns = *task.ns;
    if (task.kind == Task::Kind::kPartialSum) {
      on_partial_sum(ex, ns, task);
      return;
    }
    switch (task.frame.opcode) {
      case Opcode::kPush:
        on_push(ex, ns, task, false);
        break;
      case Opcode::kPushPull:
        on_push(ex, ns, task, true);
        break;
      case Opcode::kPull:
        on_pull(ex, ns, task);
        break;
      default:
        send_error(ns, task.reply, task.frame, ErrorCode::kProtocolError);
    }
  }

  void send_push_ack(NamespaceState& ns, const Task& task) {
    Frame ack;
    ack.opcode = Opcode::kPushAck;
    ack.namespace_id = task.frame.namespace_id;
    ack.vkey_id = task.frame.vkey_id;
    ack.worker_id = task.frame.worker_id;
    ack.iteration = task.frame.iteration;
    send(&ns, task.reply, ack);
  }

  void send_weights(Executor& ex, NamespaceState& ns, std::uint32_t vkey, const StreamPtr& reply,
                    std::uint16_t worker) {
    Frame resp;
    resp.opcode = Opcode::kPullResp;
    resp.namespace_id = ns.service->handle.namespace_id;
    resp.vkey_id = vkey;
    resp.worker_id = worker;
    resp.iteration = ns.home.agg[vkey].iteration;
    resp.payload = floats_to_payload(ns.home.shards[vkey].weights);
    send(&ns, reply, resp);
    emit(TraceEvent::Kind::kPullAnswered, ns, vkey, worker, resp.iteration, ex.index());
  }

  void on_init_push(Executor& ex, NamespaceState& ns, Task& task, bool fused) {
    const Frame& f = task.frame;
    if (!is_home(ns, ex, f.vkey_id)) {
      forward_to_home(ns, std::move(task));
      return;
    }
    if (fused || f.worker_id != 0 || ns.ready.load(std::memory_order_acquire)) {
      fail(ErrorCode::kProtocolError, "only worker 0 may upload the initial model");
    }
    if (ns.initialized[f.vkey_id]) {
      fail(ErrorCode::kDuplicatePush, "vkey initialized twice");
    }
    auto& weights = ns.home.shards[f.vkey_id].weights;
    payload_to_floats(f.payload, weights);
    ns.initialized[f.vkey_id] = 1;
    ns.init_elements += weights.size();
    send_push_ack(ns, task);
  }

  void on_push(Executor& ex, NamespaceState& ns, Task& task, bool fused) {
    const Frame& f = task.frame;
    const std::uint32_t v = f.vkey_id;
    if (f.iteration == 0) {
      on_init_push(ex, ns, task, fused);
      return;
    }
    if (!ns.ready.load(std::memory_order_acquire)) {
      fail(ErrorCode::kProtocolError, "service not initialized");
    }
    const std::size_t len = ns.plan().vkeys[v].length_elements;
    if (f.payload.size() != len * kScalarBytes) {
      fail(ErrorCode::kLengthMismatch, "payload length");
    }
    std::vector<float> grad(len);
    payload_to_floats(f.payload, grad);

    if (is_home(ns, ex, v)) {
      assert(t_current_executor == ex.index());
      ChunkAggState& agg = ns.home.agg[v];
      if (f.iteration != agg.iteration + 1) {
        fail(ErrorCode::kIterationMismatch, "push for iteration " + std::to_string(f.iteration));
      }
      if (accept_gradient(agg, f.worker_id, grad).status == AggStatus::kComplete) {
        complete_chunk(ex, ns, v);
      }
    } else {
      const std::size_t endpoint = ex.index() / topo().executors_per_endpoint;
      ChunkAggState& partial = ns.partials[endpoint][v];
      if (f.iteration != partial.iteration + 1) {
        fail(ErrorCode::kIterationMismatch, "push for iteration " + std::to_string(f.iteration));
      }
      accept_gradient(partial, f.worker_id, grad);
      if (partial.received_count == ns.workers_at_endpoint[endpoint]) {
        Task fwd;
        fwd.kind = Task::Kind::kPartialSum;
        fwd.frame.namespace_id = f.namespace_id;
        fwd.frame.vkey_id = v;
        fwd.frame.iteration = f.iteration;
        for (std::uint32_t w = 0; w < partial.received.size(); ++w) {
          if (partial.received[w]) fwd.workers.push_back(w);
        }
        fwd.sum = partial.merge_buffer;
        reset_for_next_iteration(partial);
        forward_to_home(ns, std::move(fwd));
      }
    }

    if (fused) {
      Task pull = std::move(task);
      pull.frame.opcode = Opcode::kPull;
      pull.frame.payload.clear();
      on_pull(ex, ns, pull);
    } else {
      send_push_ack(ns, task);
    }
  }

  void on_partial_sum(Executor& ex, NamespaceState& ns, Task& task) {
    const std::uint32_t v = task.frame.vkey_id;
    ChunkAggState& agg = ns.home.agg[v];
    if (task.frame.iteration > agg.iteration + 1) {
      ns.early_partials[v].push_back(std::move(task));
      return;
    }
    if (task.frame.iteration != agg.iteration + 1) return;  // stale; cannot happen in order
    if (accept_partial_sum(agg, task.workers, task.sum).status == AggStatus::kComplete) {
      complete_chunk(ex, ns, v);
    }
  }

  void complete_chunk(Executor& ex, NamespaceState& ns, std::uint32_t v) {
    ChunkAggState& agg = ns.home.agg[v];
    std::vector<float> mean = finalize_chunk(agg, ns.n_workers);
    if (cfg().hierarchical_racks) {
      ns.loopback += emulate_ring_reduce(mean, *cfg().hierarchical_racks, ex.loop_out(),
                                         ex.loop_in(), ns.service->handle.namespace_id, v,
                                         agg.iteration + 1);
    }
    apply_mean_and_reset(agg, ns.home.opt[v], ns.home.shards[v], mean, *ns.optimizer);
    ++ns.completions;
    emit(TraceEvent::Kind::kChunkOptimized, ns, v, 0, agg.iteration, ex.index());

    auto& waiting = ns.pending[v];
    for (const PendingPull& p : waiting) send_weights(ex, ns, v, p.reply, p.worker);
    waiting.clear();

    auto& early = ns.early_partials[v];
    while (!early.empty() && early.front().frame.iteration == agg.iteration + 1) {
      Task next = std::move(early.front());
      early.pop_front();
      on_partial_sum(ex, ns, next);
    }
  }

  void on_pull(Executor& ex, NamespaceState& ns, Task& task) {
    const std::uint32_t v = task.frame.vkey_id;
    if (!is_home(ns, ex, v)) {
      forward_to_home(ns, std::move(task));
      return;
    }
    const std::uint32_t current = ns.home.agg[v].iteration;
    const std::uint32_t wanted = task.frame.iteration;
    if (wanted <= current) {
      send_weights(ex, ns, v, task.reply, task.frame.worker_id);
    } else if (wanted == current + 1) {
      ns.pending[v].push_back(PendingPull{task.reply, task.frame.worker_id});
    } else {
      fail(ErrorCode::kIterationMismatch, "pull for iteration " + std::to_string(wanted));
    }
  }

  // ---- endpoint readers ----------------------------------------------------

  void answer_barrier_locked(NamespaceState& ns) {
    const std::size_t total = ns.plan().manifest.total_elements;
    const std::size_t uploaded = ns.init_elements.load();
    const bool ok = uploaded == 0 || uploaded == total;
    if (ok) ns.ready.store(true, std::memory_order_release);
    else ns.init_failed = true;
    for (auto& [worker, waiter] : ns.barrier_waiters) {
      if (ok) {
        Frame resp = waiter.second;
        resp.opcode = Opcode::kPullResp;
        resp.payload.clear();
        send(&ns, waiter.first, resp);
      } else {
        send_error(ns, waiter.first, waiter.second, ErrorCode::kInvalidInit);
      }
    }
    ns.barrier_waiters.clear();
    ns.barrier_started.reset();
  }

  void on_barrier(NamespaceState& ns, const StreamPtr& stream, const Frame& f) {
    std::lock_guard lock(ns.mu);
    if (ns.ready.load()) {
      Frame resp = f;
      resp.opcode = Opcode::kPullResp;
      resp.payload.clear();
      send(&ns, stream, resp);
      return;
    }
    if (ns.init_failed) {
      send_error(ns, stream, f, ErrorCode::kInvalidInit);
      return;
    }
    ns.barrier_waiters[f.worker_id] = {stream, f};
    if (!ns.barrier_started) ns.barrier_started = Clock::now();
    if (ns.barrier_waiters.size() == ns.n_workers) answer_barrier_locked(ns);
  }

  // Returns false when the connection must be dropped.
  bool on_hello(std::size_t endpoint, const StreamPtr& stream,
                std::map<std::uint16_t, std::uint16_t>& bindings, const Frame& f) {
    NamespaceState* ns = find_ns(f.namespace_id);
    if (!ns) {
      send(nullptr, stream, make_error_frame(f, ErrorCode::kUnknownService));
      return false;
    }
    ++ns->frames_rx;
    if (f.payload.size() != 16) {
      send_error(*ns, stream, f, ErrorCode::kProtocolError);
      return false;
    }
    const ErrorCode auth = server.manager_.authenticate(f.namespace_id, payload_u64(f.payload, 0),
                                                        payload_u64(f.payload, 8));
    if (auth != ErrorCode::kOk) {
      send_error(*ns, stream, f, auth);
      return false;
    }
    const bool wrong_endpoint = ns->assignment().mode == AffinityMode::kWorkerByInterface &&
                                f.worker_id % topo().num_endpoints != endpoint;
    if (f.worker_id >= ns->n_workers || wrong_endpoint || bindings.contains(f.namespace_id)) {
      send_error(*ns, stream, f, ErrorCode::kProtocolError);
      return false;
    }
    {
      std::lock_guard lock(ns->mu);
      if (!ns->bound[endpoint].insert(f.worker_id).second) {
        send_error(*ns, stream, f, ErrorCode::kProtocolError);
        return false;
      }
    }
    bindings[f.namespace_id] = f.worker_id;
    Frame ok = f;
    ok.opcode = Opcode::kHelloOk;
    ok.payload.clear();
    send(ns, stream, ok);
    return true;
  }

  bool on_frame(std::size_t endpoint, const StreamPtr& stream,
                std::map<std::uint16_t, std::uint16_t>& bindings, Frame f) {
    if (f.opcode == Opcode::kHello) return on_hello(endpoint, stream, bindings, f);

    const auto binding = bindings.find(f.namespace_id);
    NamespaceState* ns = binding == bindings.end() ? nullptr : find_ns(f.namespace_id);
    if (!ns) {
      send(nullptr, stream, make_error_frame(f, ErrorCode::kAuthFailed));
      return true;
    }
    ++ns->frames_rx;
    if (f.worker_id != binding->second) {
      send_error(*ns, stream, f, ErrorCode::kProtocolError);
      return true;
    }
    if (f.opcode != Opcode::kPush && f.opcode != Opcode::kPull && f.opcode != Opcode::kPushPull) {
      send_error(*ns, stream, f, ErrorCode::kProtocolError);
      return true;
    }
    if (f.opcode == Opcode::kPull && f.vkey_id == kBarrierVkey) {
      on_barrier(*ns, stream, f);
      return true;
    }
    ExecutorSlot slot;
    try {
      slot = route_frame(ns->assignment(), f, f.worker_id);
    } catch (const Error& e) {
      send_error(*ns, stream, f, e.code());
      return true;
    }
    if (slot.endpoint != endpoint) {
      send_error(*ns, stream, f, ErrorCode::kProtocolError);
      return true;
    }
    const std::size_t flat = slot.flat(topo());
    emit(TraceEvent::Kind::kFrameArrived, *ns, f.vkey_id, f.worker_id, f.iteration, flat);
    Task task;
    task.ns = ns;
    task.reply = stream;
    task.frame = std::move(f);
    executors[flat]->post(std::move(task));
    return true;
  }

  void reader_loop(std::size_t endpoint, StreamPtr stream) {
    std::map<std::uint16_t, std::uint16_t> bindings;
    try {
      while (!stopping.load()) {
        auto frame = stream->receive();
        if (!frame) break;
        if (!on_frame(endpoint, stream, bindings, std::move(*frame))) break;
      }
    } catch (const Error& e) {
      Frame blank;
      send(nullptr, stream, make_error_frame(blank, e.code()));
    }
    for (const auto& [ns_id, worker] : bindings) {
      if (NamespaceState* ns = find_ns(ns_id)) {
        std::lock_guard lock(ns->mu);
        ns->bound[endpoint].erase(worker);
      }
    }
    // During shutdown the executors may still answer on this stream; the
    // shutdown path closes it after they drain.
    if (!stopping.load()) stream->close();
  }

  void attach(std::size_t endpoint, StreamPtr stream) {
    std::lock_guard lock(conn_mu);
    if (stopping.load()) {
      stream->close();
      return;
    }
    Connection c;
    c.stream = stream;
    c.reader = std::jthread([this, endpoint, stream] { reader_loop(endpoint, stream); });
    connections.push_back(std::move(c));
  }

  // ---- control channel -----------------------------------------------------

  std::string control_reply(const std::string& line) {
    std::istringstream in(line);
    std::string command;
    in >> command;
    const KeyValues kv = parse_kv_tokens(line.substr(command.size()));
    try {
      if (command == "CREATE") {
        const CreateRequest req = parse_create(kv);
        ServiceSpec spec;
        spec.name = req.name;
        spec.n_workers = req.n_workers;
        spec.manifest = parse_model_spec(req.model_spec);
        spec.chunk_size_bytes = req.chunk_size_bytes;
        spec.optimizer = req.optimizer;
        const auto service = server.create_service(std::move(spec));
        return "OK ns=" + std::to_string(service->handle.namespace_id) +
               " nonce=" + std::to_string(service->handle.nonce) +
               " digest=" + std::to_string(service->handle.chunk_plan_digest);
      }
      if (command == "INFO") {
        const auto service = server.manager_.find(kv_get(kv, "name"));
        if (!service) fail(ErrorCode::kUnknownService, kv_get(kv, "name"));
        const Topology t = topo();
        std::string ports;
        for (std::size_t e = 0; e < listeners.size(); ++e) {
          if (e) ports += ',';
          ports += std::to_string(listeners[e]->port());
        }
        return "OK ns=" + std::to_string(service->handle.namespace_id) +
               " workers=" + std::to_string(service->spec.n_workers) +
               " chunk=" + std::to_string(service->spec.chunk_size_bytes) +
               " endpoints=" + std::to_string(t.num_endpoints) +
               " executors=" + std::to_string(t.executors_per_endpoint) +
               " mode=" + to_string(service->spec.mode) +
               " digest=" + std::to_string(service->handle.chunk_plan_digest) +
               " ports=" + ports + " model=" + model_spec_string(service->spec.manifest);
      }
      if (command == "METRICS") {
        const ServerMetrics m = server.metrics();
        std::uint64_t rx = m.frames_rx, tx = m.frames_tx, fwd = m.forwarded_frames,
                      loop = m.loopback_frames, iters = 0;
        if (kv.contains("name")) {
          const auto it = std::find_if(m.namespaces.begin(), m.namespaces.end(),
                                       [&](const NamespaceMetrics& n) { return n.name == kv.at("name"); });
          if (it == m.namespaces.end()) fail(ErrorCode::kUnknownService, kv.at("name"));
          rx = it->frames_rx;
          tx = it->frames_tx;
          fwd = it->forwarded_frames;
          loop = it->loopback_frames;
          iters = it->completed_iterations;
        }
        return "OK frames_rx=" + std::to_string(rx) + " frames_tx=" + std::to_string(tx) +
               " forwarded=" + std::to_string(fwd) + " loopback=" + std::to_string(loop) +
               " iterations=" + std::to_string(iters);
      }
      if (command == "SHUTDOWN") {
        {
          std::lock_guard lock(shutdown_mu);
          shutdown_requested = true;
        }
        shutdown_cv.notify_all();
        return "OK";
      }
      fail(ErrorCode::kProtocolError, "unknown command '" + command + "'");
    } catch (const Error& e) {
      return "ERR code=" + std::to_string(static_cast<std::uint32_t>(e.code())) +
             " msg=" + e.what();
    }
  }

  void control_session(int fd) {
    std::string line;
    while (!stopping.load() && read_line(fd, line)) {
      try {
        write_all(fd, control_reply(trim(line)) + "\n");
      } catch (const Error&) {
        break;
      }
    }
  }

  // ---- housekeeping --------------------------------------------------------

  void write_metrics_rows() {
    if (!metrics_file.is_open()) return;
    const auto now = Clock::now();
    const auto ts = std::chrono::duration_cast<std::chrono::microseconds>(
                        std::chrono::system_clock::now().time_since_epoch())
                        .count();
    std::lock_guard lock(ns_mu);
    for (auto& ns : namespaces) {
      const std::uint64_t iters = ns->completions.load() / ns->plan().num_chunks();
      const double dt = std::chrono::duration<double>(now - ns->last_sample).count();
      const double rate =
          dt > 0 ? static_cast<double>(iters - ns->last_iterations) * ns->n_workers / dt : 0.0;
      ns->last_iterations = iters;
      ns->last_sample = now;
      metrics_file << ts << ',' << ns->service->spec.name << ',' << iters << ',' << rate << ','
                   << ns->frames_rx.load() << ',' << ns->frames_tx.load() << ','
                   << ns->forwarded.load() << '\n';
    }
    metrics_file.flush();
  }

  void check_init_timeouts() {
    if (!cfg().init_timeout) return;
    const auto now = Clock::now();
    std::lock_guard lock(ns_mu);
    for (auto& ns : namespaces) {
      std::lock_guard ns_lock(ns->mu);
      if (ns->ready.load() || !ns->barrier_started) continue;
      if (now - *ns->barrier_started < *cfg().init_timeout) continue;
      for (auto& [worker, waiter] : ns->barrier_waiters) {
        send_error(*ns, waiter.first, waiter.second, ErrorCode::kTimeout);
      }
      ns->barrier_waiters.clear();
      ns->barrier_started.reset();
    }
  }

  void housekeeping_loop(std::stop_token stop) {
    auto next_metrics = Clock::now() + cfg().metrics_interval;
    std::unique_lock lock(shutdown_mu);
    while (!stop.stop_requested()) {
      housekeeping_cv.wait_for(lock, std::chrono::milliseconds(20));
      if (stop.stop_requested()) break;
      lock.unlock();
      check_init_timeouts();
      if (Clock::now() >= next_metrics) {
        write_metrics_rows();
        next_metrics = Clock::now() + cfg().metrics_interval;
      }
      lock.lock();
    }
  }
};

Server::Server(ServerConfig config, TraceSink trace)
    : config_(std::move(config)), impl_(std::make_unique<Impl>(*this, std::move(trace))) {
  const Topology t = config_.topology();
  if (t.num_endpoints == 0 || t.executors_per_endpoint == 0) {
    fail(ErrorCode::kInvalidConfig, "need at least one endpoint and executor");
  }
  if (config_.hierarchical_racks && *config_.hierarchical_racks == 0) {
    fail(ErrorCode::kInvalidConfig, "hierarchical rack count must be >= 1");
  }
  for (std::size_t i = 0; i < t.num_executors(); ++i) {
    impl_->executors.push_back(std::make_unique<Impl::Executor>(*impl_, i));
  }
}

Server::~Server() { shutdown(); }

void Server::start() {
  std::lock_guard lock(impl_->lifecycle_mu);
  if (impl_->started) return;
  if (impl_->stopped) fail(ErrorCode::kInvalidConfig, "server cannot restart after shutdown");

  std::vector<std::unique_ptr<TcpListener>> listeners;
  for (std::uint16_t port : config_.data_ports) {
    listeners.push_back(std::make_unique<TcpListener>(port, config_.host));
  }
  std::unique_ptr<TcpListener> control;
  if (config_.control_port) {
    control = std::make_unique<TcpListener>(*config_.control_port, config_.host);
  }
  if (!config_.metrics_out.empty()) {
    impl_->metrics_file.open(config_.metrics_out);
    if (!impl_->metrics_file) {
      fail(ErrorCode::kInvalidConfig, "cannot write metrics file " + config_.metrics_out);
    }
    impl_->metrics_file
        << "timestamp_us,namespace,iteration,exchanges_per_s,frames_rx,frames_tx,forwarded_frames\n";
  }
  impl_->listeners = std::move(listeners);
  impl_->control = std::move(control);

  for (auto& ex : impl_->executors) ex->start();
  for (std::size_t e = 0; e < impl_->listeners.size(); ++e) {
    impl_->acceptors.emplace_back([this, e] {
      while (true) {
        const int fd = impl_->listeners[e]->accept_fd();
        if (fd < 0 || impl_->stopping.load()) {
          if (fd >= 0) ::close(fd);
          break;
        }
        impl_->attach(e, std::make_shared<TcpStream>(fd));
      }
    });
  }
  if (impl_->control) {
    impl_->acceptors.emplace_back([this] {
      while (true) {
        const int fd = impl_->control->accept_fd();
        if (fd < 0 || impl_->stopping.load()) {
          if (fd >= 0) ::close(fd);
          break;
        }
        std::lock_guard lock(impl_->conn_mu);
        impl_->control_fds.push_back(fd);
        Impl::Connection c;
        c.reader = std::jthread([this, fd] { impl_->control_session(fd); });
        impl_->connections.push_back(std::move(c));
      }
    });
  }
  impl_->housekeeping = std::jthread([this](std::stop_token st) { impl_->housekeeping_loop(st); });
  impl_->started = true;
}

void Server::shutdown() {
  std::lock_guard lock(impl_->lifecycle_mu);
  if (!impl_->started || impl_->stopped) {
    impl_->stopped = impl_->stopped || impl_->started;
    return;
  }
  impl_->stopping = true;
  for (auto& l : impl_->listeners) l->close();
  if (impl_->control) impl_->control->close();
  for (auto& t : impl_->acceptors) t.join();
  impl_->acceptors.clear();

  // Executors finish everything already queued, which answers every pull
  // waiting on a completed chunk.
  for (auto& ex : impl_->executors) ex->stop_and_join();

  std::vector<Impl::Connection> connections;
  {
    std::lock_guard conn_lock(impl_->conn_mu);
    connections = std::move(impl_->connections);
    for (int fd : impl_->control_fds) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& c : connections) {
    if (c.stream) c.stream->close();
  }
  for (auto& c : connections) {
    if (c.reader.joinable()) c.reader.join();
  }
  for (int fd : impl_->control_fds) ::close(fd);
  impl_->control_fds.clear();

  impl_->housekeeping.request_stop();
  impl_->housekeeping_cv.notify_all();
  if (impl_->housekeeping.joinable()) impl_->housekeeping.join();
  impl_->write_metrics_rows();
  impl_->metrics_file.close();
  impl_->stopped = true;
  {
    std::lock_guard sd(impl_->shutdown_mu);
    impl_->shutdown_requested = true;
  }
  impl_->shutdown_cv.notify_all();
}

bool Server::running() const {
  std::lock_guard lock(impl_->lifecycle_mu);
  return impl_->started && !impl_->stopped;
}

std::shared_ptr<const Service> Server::create_service(ServiceSpec spec) {
  spec.topology = config_.topology();
  spec.mode = config_.mode;
  std::lock_guard lock(impl_->ns_mu);
  const auto optimizer = spec.optimizer_impl;
  auto service = manager_.create_service(std::move(spec));

  auto ns = std::make_unique<NamespaceState>();
  ns->service = service;
  ns->optimizer = optimizer ? optimizer.get() : &default_optimizer();
  ns->n_workers = service->spec.n_workers;
  ns->home = create_states(service->plan, ns->n_workers, std::nullopt, service->spec.optimizer);
  const Topology t = config_.topology();
  ns->bound.resize(t.num_endpoints);
  ns->pending.resize(service->plan.num_chunks());
  ns->early_partials.resize(service->plan.num_chunks());
  ns->initialized.assign(service->plan.num_chunks(), 0);
  if (config_.mode == AffinityMode::kWorkerByInterface) {
    ns->workers_at_endpoint.assign(t.num_endpoints, 0);
    for (std::size_t w = 0; w < ns->n_workers; ++w) ++ns->workers_at_endpoint[w % t.num_endpoints];
    ns->partials.resize(t.num_endpoints);
    for (std::size_t e = 0; e < t.num_endpoints; ++e) {
      if (ns->workers_at_endpoint[e] == 0) continue;
      ns->partials[e] = ns->home.agg;
    }
  }
  if (service->handle.namespace_id != impl_->namespaces.size()) {
    fail(ErrorCode::kInvalidConfig, "namespace ids out of sync");
  }
  impl_->namespaces.push_back(std::move(ns));
  return service;
}

StreamPtr Server::connect_inproc(std::size_t endpoint) {
  if (endpoint >= config_.topology().num_endpoints) {
    fail(ErrorCode::kInvalidConfig, "no endpoint " + std::to_string(endpoint));
  }
  auto [client, server_end] = make_inproc_pipe();
  impl_->attach(endpoint, server_end);
  return client;
}

std::uint16_t Server::data_port(std::size_t endpoint) const {
  return impl_->listeners.at(endpoint)->port();
}

std::uint16_t Server::control_port() const {
  if (!impl_->control) fail(ErrorCode::kInvalidConfig, "no control listener");
  return impl_->control->port();
}

ServerMetrics Server::metrics() const {
  ServerMetrics m;
  std::lock_guard lock(impl_->ns_mu);
  for (const auto& ns : impl_->namespaces) {
    NamespaceMetrics n;
    n.name = ns->service->spec.name;
    n.namespace_id = ns->service->handle.namespace_id;
    n.frames_rx = ns->frames_rx.load();
    n.frames_tx = ns->frames_tx.load();
    n.forwarded_frames = ns->forwarded.load();
    n.loopback_frames = ns->loopback.load();
    n.chunk_completions = ns->completions.load();
    n.completed_iterations = n.chunk_completions / ns->plan().num_chunks();
    m.frames_rx += n.frames_rx;
    m.frames_tx += n.frames_tx;
    m.forwarded_frames += n.forwarded_frames;
    m.loopback_frames += n.loopback_frames;
    m.namespaces.push_back(std::move(n));
  }
  return m;
}

std::vector<float> Server::snapshot_model(std::uint16_t namespace_id) const {
  NamespaceState* ns = impl_->find_ns(namespace_id);
  if (!ns) fail(ErrorCode::kUnknownService, "namespace " + std::to_string(namespace_id));
  return ns->home.gather_model(ns->plan());
}

void Server::wait_for_shutdown_request() {
  std::unique_lock lock(impl_->shutdown_mu);
  impl_->shutdown_cv.wait(lock, [&] { return impl_->shutdown_requested; });
}

}  // namespace phub
