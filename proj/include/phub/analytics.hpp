// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Closed-form models: per-host bandwidth lower bounds for PS placements,
// the hierarchical-reduction decision rule, and the rack cost model.

#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "phub/kv.hpp"

namespace phub::analytics {

struct TrainingProfile {
  double model_bytes = 0;
  double iteration_seconds = 0;
  double num_workers = 0;
};

// C/NC: colocated or not with workers; C/S: centralized or sharded.
enum class Placement { kCC, kCS, kNCC, kNCS };

std::string to_string(Placement p);
Placement parse_placement(const std::string& text);
inline constexpr std::array<Placement, 4> kAllPlacements{Placement::kCC, Placement::kCS,
                                                         Placement::kNCC, Placement::kNCS};

// Bits per second each host must move to hide communication in one
// iteration. Send and receive are both counted.
//   NCC = 2 N M 8 / T         CC = 2 (N-1) M 8 / T
//   NCS = 2 M 8 / T           CS = 4 (N-1) M 8 / (N T)
double min_bandwidth(const TrainingProfile& profile, Placement placement);

enum class InterRackMode { kRingRacks, kShardedPS };

struct HierarchyParams {
  double b_pbox = 0;  // any consistent bandwidth unit
  double b_core = 0;
  double b_worker = 0;
  std::size_t racks = 1;
  std::size_t workers_per_rack = 1;
  InterRackMode inter_rack = InterRackMode::kRingRacks;
};

struct HierarchyVerdict {
  bool beneficial = false;
  double lhs = 0;
  double rhs = 0;
  double b_bottleneck = 0;
  double inter_rack_cost = 0;  // C, per unit of data
};

// Beneficial iff max((N-1)/B_bn, 1/(N B_wkr)) > max(1/B_pbox, N/B_wkr) + C,
// with B_bn = min((r-1) B_pbox, B_core). A single rack is never beneficial.
HierarchyVerdict hierarchical_benefit(const HierarchyParams& params);

// Workers one ToR switch can host. oversub is the host:uplink ratio (1 for
// 1:1). Baseline: floor(ports * o/(o+1)). With a PHub on the switch:
// floor(ports * o/(o+1) * breakout - phub_ports), at least 0.
std::size_t workers_per_switch(std::size_t switch_ports, double breakout_factor, double oversub,
                               bool phub_deployed, std::size_t phub_ports);

// A = (N + S + C) + F (4 S + 2 C)
double amortized_network_cost(double nic_port, double switch_port, double cable,
                              double upstream_fraction);

struct CostParams {
  double worker_base = 4117;
  double gpu_price = 699;
  double gpus_per_worker = 4;
  double nic_port = 795;
  double switch_price = 21077;
  double switch_ports = 32;
  double cable = 94;
  double breakout_factor = 1;
  double upstream_fraction = 1;  // F
  double phub_base = 8407;
  double phub_ports = 20;
  double phub_port_price = 162.5;
  double workers_per_phub = 44;
};

// Reads CostParams fields by name. Also accepts "oversub" (host:uplink
// ratio): F defaults to 1/oversub, and workers_per_phub defaults to the
// PHub-case workers_per_switch for that ratio. Unknown keys are rejected.
CostParams parse_cost_config(const KeyValues& kv);

enum class Deployment { kBaseline, kPHub };

// Per-port switch cost S = switch_price / switch_ports.
double switch_port_cost(const CostParams& params);

// Baseline: W + N + gG + A. PHub: the same plus K P, where
// P = phub_base + p N_phub + p A_phub over the p PHub ports and K is
// 1 / workers_per_phub.
double per_worker_cost(const CostParams& params, Deployment deployment);

double throughput_per_kilodollar(double throughput, double per_worker_cost);

struct Table3Cell {
  std::string network;
  Placement placement;
  double computed_gbps;
  double reference_gbps;
  double relative_delta;  // (computed - reference) / reference
};

// All 16 cells of the bandwidth lower-bound grid for N = 8.
std::vector<Table3Cell> table3_grid();

}  // namespace phub::analytics
