// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Closed-form models on the command line. All output is CSV on stdout.

#include <CLI11.hpp>
#include <cstdio>
#include <iostream>

#include "phub/analytics.hpp"
#include "phub/error.hpp"
#include "phub/kv.hpp"

namespace an = phub::analytics;

int main(int argc, char** argv) {
  CLI::App app{"phub analytics"};
  app.require_subcommand(1);

  an::TrainingProfile profile;
  double iter_ms = 0;
  std::string placement = "all";
  auto* bw = app.add_subcommand("bw", "Per-host bandwidth lower bound (Gbps)");
  bw->add_option("--model-bytes", profile.model_bytes)->required()->check(CLI::PositiveNumber);
  bw->add_option("--iter-ms", iter_ms)->required()->check(CLI::PositiveNumber);
  bw->add_option("--workers", profile.num_workers)->required()->check(CLI::PositiveNumber);
  bw->add_option("--placement", placement, "CC | CS | NCC | NCS | all");

  an::HierarchyParams hp;
  std::string cmode = "ring";
  double hier_model_bytes = 0;
  auto* hier = app.add_subcommand("hier", "Hierarchical reduction decision (bandwidths in Gbps)");
  hier->add_option("--bpbox", hp.b_pbox)->required()->check(CLI::PositiveNumber);
  hier->add_option("--bcore", hp.b_core)->required()->check(CLI::PositiveNumber);
  hier->add_option("--bwkr", hp.b_worker)->required()->check(CLI::PositiveNumber);
  hier->add_option("--racks", hp.racks)->required()->check(CLI::PositiveNumber);
  hier->add_option("--workers", hp.workers_per_rack, "Workers per rack")
      ->required()
      ->check(CLI::PositiveNumber);
  hier->add_option("--cmode", cmode, "ring | sharded")->check(CLI::IsMember({"ring", "sharded"}));
  hier->add_option("--model-bytes", hier_model_bytes, "Also report C in ms for this model size");

  std::string config;
  auto* cost = app.add_subcommand("cost", "Rack cost model");
  cost->add_option("--config", config, "key=value file of cost parameters")->required();

  auto* table3 = app.add_subcommand("table3", "Bandwidth lower-bound grid for N=8");
  CLI11_PARSE(app, argc, argv);

  try {
    if (*bw) {
      profile.iteration_seconds = iter_ms / 1000.0;
      std::printf("placement,model_bytes,iter_ms,workers,gbps\n");
      for (an::Placement p : an::kAllPlacements) {
        if (placement != "all" && an::parse_placement(placement) != p) continue;
        std::printf("%s,%.0f,%g,%g,%.4f\n", an::to_string(p).c_str(), profile.model_bytes,
                    iter_ms, profile.num_workers, an::min_bandwidth(profile, p) / 1e9);
      }
    } else if (*hier) {
      hp.inter_rack = cmode == "ring" ? an::InterRackMode::kRingRacks : an::InterRackMode::kShardedPS;
      const auto v = an::hierarchical_benefit(hp);
      std::printf("beneficial,lhs,rhs,b_bn,c,c_ms\n");
      // Bandwidth in Gbps, so C is seconds per gigabit.
      const double c_ms = v.inter_rack_cost * hier_model_bytes * 8.0 / 1e9 * 1000.0;
      std::printf("%s,%.6g,%.6g,%.6g,%.6g,%.6g\n", v.beneficial ? "true" : "false", v.lhs, v.rhs,
                  v.b_bottleneck, v.inter_rack_cost, c_ms);
    } else if (*cost) {
      const phub::KeyValues kv = phub::parse_kv_file(config);
      const an::CostParams c = an::parse_cost_config(kv);
      const double throughput = phub::kv_double_or(kv, "throughput", 0);
      const double s = an::switch_port_cost(c);
      std::printf("deployment,switch_port,amortized_network,per_worker_cost,throughput_per_kusd\n");
      for (auto d : {an::Deployment::kBaseline, an::Deployment::kPHub}) {
        const double a = an::amortized_network_cost(c.nic_port, s, c.cable, c.upstream_fraction);
        const double w = an::per_worker_cost(c, d);
        std::printf("%s,%.2f,%.2f,%.2f,%.2f\n", d == an::Deployment::kBaseline ? "baseline" : "phub",
                    s, a, w, an::throughput_per_kilodollar(throughput, w));
      }
    } else if (*table3) {
      std::printf("network,placement,computed_gbps,reference_gbps,delta_pct\n");
      for (const auto& cell : an::table3_grid()) {
        std::printf("%s,%s,%.2f,%.0f,%.2f\n", cell.network.c_str(),
                    an::to_string(cell.placement).c_str(), cell.computed_gbps, cell.reference_gbps,
                    cell.relative_delta * 100.0);
      }
    }
  } catch (const phub::Error& e) {
    std::cerr << "phub_analytics: " << phub::to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
