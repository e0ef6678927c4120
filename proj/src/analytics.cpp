// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/analytics.hpp"

#include <algorithm>
#include <cmath>

#include "phub/error.hpp"
#include "phub/models.hpp"

namespace phub::analytics {

std::string to_string(Placement p) {
  switch (p) {
    case Placement::kCC: return "CC";
    case Placement::kCS: return "CS";
    case Placement::kNCC: return "NCC";
    case Placement::kNCS: return "NCS";
  }
  return "?";
}

Placement parse_placement(const std::string& text) {
  for (Placement p : kAllPlacements) {
    if (to_string(p) == text) return p;
  }
  fail(ErrorCode::kInvalidConfig, "unknown placement '" + text + "'");
}

double min_bandwidth(const TrainingProfile& profile, Placement placement) {
  const double bits = profile.model_bytes * 8.0;
  const double n = profile.num_workers;
  const double t = profile.iteration_seconds;
  switch (placement) {
    case Placement::kNCC: return 2.0 * n * bits / t;
    case Placement::kCC: return 2.0 * (n - 1.0) * bits / t;
    case Placement::kNCS: return 2.0 * bits / t;
    case Placement::kCS: return 4.0 * (n - 1.0) * bits / (n * t);
  }
  return 0.0;
}

HierarchyVerdict hierarchical_benefit(const HierarchyParams& p) {
  HierarchyVerdict v;
  if (p.racks <= 1) return v;
  const double r = static_cast<double>(p.racks);
  const double n = static_cast<double>(p.workers_per_rack);
  v.b_bottleneck = std::min((r - 1.0) * p.b_pbox, p.b_core);
  v.inter_rack_cost = p.inter_rack == InterRackMode::kShardedPS
                          ? (n - 1.0) / (n * v.b_bottleneck)
                          : (r - 1.0) / (r * v.b_bottleneck);
  v.lhs = std::max((n - 1.0) / v.b_bottleneck, 1.0 / (n * p.b_worker));
  v.rhs = std::max(1.0 / p.b_pbox, n / p.b_worker) + v.inter_rack_cost;
  v.beneficial = v.lhs > v.rhs;
  return v;
}

std::size_t workers_per_switch(std::size_t switch_ports, double breakout_factor, double oversub,
                               bool phub_deployed, std::size_t phub_ports) {
  // Guard against 21.333.. * 3 style products landing a hair below an integer.
  constexpr double kEps = 1e-9;
  const double host_ports = static_cast<double>(switch_ports) * oversub / (oversub + 1.0);
  if (!phub_deployed) return static_cast<std::size_t>(std::floor(host_ports + kEps));
  const double hosts = host_ports * breakout_factor - static_cast<double>(phub_ports);
  if (hosts <= 0) return 0;
  return static_cast<std::size_t>(std::floor(hosts + kEps));
}

double amortized_network_cost(double nic_port, double switch_port, double cable,
                              double upstream_fraction) {
  return (nic_port + switch_port + cable) + upstream_fraction * (4.0 * switch_port + 2.0 * cable);
}

double switch_port_cost(const CostParams& params) {
  return params.switch_price / params.switch_ports;
}

double per_worker_cost(const CostParams& c, Deployment deployment) {
  const double s = switch_port_cost(c);
  const double a = amortized_network_cost(c.nic_port, s, c.cable, c.upstream_fraction);
  const double worker = c.worker_base + c.nic_port + c.gpus_per_worker * c.gpu_price + a;
  if (deployment == Deployment::kBaseline) return worker;
  const double a_phub = amortized_network_cost(c.phub_port_price, s, c.cable, c.upstream_fraction);
  const double p = c.phub_base + c.phub_ports * c.phub_port_price + c.phub_ports * a_phub;
  const double k = c.workers_per_phub > 0 ? 1.0 / c.workers_per_phub : 0.0;
  return worker + k * p;
}

CostParams parse_cost_config(const KeyValues& kv) {
  CostParams c;
  struct Field {
    const char* key;
    double CostParams::*member;
  };
  static constexpr Field kFields[] = {
      {"worker_base", &CostParams::worker_base},
      {"gpu_price", &CostParams::gpu_price},
      {"gpus_per_worker", &CostParams::gpus_per_worker},
      {"nic_port", &CostParams::nic_port},
      {"switch_price", &CostParams::switch_price},
      {"switch_ports", &CostParams::switch_ports},
      {"cable", &CostParams::cable},
      {"breakout_factor", &CostParams::breakout_factor},
      {"upstream_fraction", &CostParams::upstream_fraction},
      {"phub_base", &CostParams::phub_base},
      {"phub_ports", &CostParams::phub_ports},
      {"phub_port_price", &CostParams::phub_port_price},
      {"workers_per_phub", &CostParams::workers_per_phub},
  };
  for (const auto& [key, value] : kv) {
    if (key == "oversub" || key == "throughput") continue;
    const auto* f = std::find_if(std::begin(kFields), std::end(kFields),
                                 [&](const Field& f) { return key == f.key; });
    if (f == std::end(kFields)) fail(ErrorCode::kInvalidConfig, "unknown cost key '" + key + "'");
    c.*(f->member) = parse_double(value);
  }
  if (kv.contains("oversub")) {
    const double o = kv_double(kv, "oversub");
    if (o < 1) fail(ErrorCode::kInvalidConfig, "oversub must be >= 1");
    if (!kv.contains("upstream_fraction")) c.upstream_fraction = 1.0 / o;
    if (!kv.contains("workers_per_phub")) {
      c.workers_per_phub = static_cast<double>(workers_per_switch(
          static_cast<std::size_t>(c.switch_ports), c.breakout_factor, o, true,
          static_cast<std::size_t>(c.phub_ports)));
    }
  }
  if (c.switch_ports < 1) fail(ErrorCode::kInvalidConfig, "switch_ports must be >= 1");
  if (c.upstream_fraction < 0 || c.upstream_fraction > 1) {
    fail(ErrorCode::kInvalidConfig, "upstream_fraction must be in [0, 1]");
  }
  return c;
}

double throughput_per_kilodollar(double throughput, double per_worker_cost) {
  if (per_worker_cost <= 0) fail(ErrorCode::kInvalidConfig, "cost must be positive");
  return throughput / (per_worker_cost / 1000.0);
}

std::vector<Table3Cell> table3_grid() {
  struct Row {
    const char* preset;
    const char* label;
    double cc, cs, ncc, ncs;
  };
  static constexpr Row kRows[] = {
      {"RN269", "ResNet 269", 122, 31, 140, 17},
      {"I3", "Inception", 44, 11, 50, 6},
      {"GN", "GoogleNet", 40, 10, 46, 6},
      {"AN", "AlexNet", 1232, 308, 1408, 176},
  };
  std::vector<Table3Cell> cells;
  for (const Row& row : kRows) {
    const NetworkPreset preset = *find_preset(row.preset);
    const TrainingProfile profile{static_cast<double>(preset.model_bytes),
                                  static_cast<double>(preset.time_per_batch.count()) / 1000.0, 8};
    const double refs[] = {row.cc, row.cs, row.ncc, row.ncs};
    for (std::size_t i = 0; i < kAllPlacements.size(); ++i) {
      const double gbps = min_bandwidth(profile, kAllPlacements[i]) / 1e9;
      cells.push_back({row.label, kAllPlacements[i], gbps, refs[i], (gbps - refs[i]) / refs[i]});
    }
  }
  return cells;
}

}  // namespace phub::analytics
