// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Network presets (model size and per-batch compute time) and model-spec
// strings shared by the CLIs and the control channel.

#pragma once

#include <chrono>
#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "phub/layout.hpp"

namespace phub {

struct NetworkPreset {
  const char* abbreviation;
  const char* name;
  std::size_t model_bytes;  // decimal megabytes
  std::chrono::milliseconds time_per_batch;
  std::size_t batch;
};

std::span<const NetworkPreset> network_presets();

// Matches the abbreviation ("RN18") or the name with spaces removed,
// case-insensitively ("resnet18").
std::optional<NetworkPreset> find_preset(const std::string& name);

// Accepted forms:
//   preset:<name>     one layer holding the preset's whole model
//   sizes:a,b,c       explicit element counts
//   <path>            a file with one "name,bytes" line per layer
// Throws kInvalidManifest on malformed input.
ModelManifest parse_model_spec(const std::string& spec);

// "sizes:..." form of a manifest.
std::string model_spec_string(const ModelManifest& manifest);

}  // namespace phub
