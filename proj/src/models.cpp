// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/models.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <vector>

#include "phub/error.hpp"
#include "phub/kv.hpp"

namespace phub {

namespace {

using std::chrono::milliseconds;

constexpr std::size_t kMB = 1000 * 1000;

constexpr std::array<NetworkPreset, 9> kPresets{{
    {"AN", "AlexNet", 194 * kMB, milliseconds(16), 32},
    {"V11", "VGG 11", 505 * kMB, milliseconds(121), 32},
    {"V19", "VGG 19", 548 * kMB, milliseconds(268), 32},
    {"GN", "GoogleNet", 38 * kMB, milliseconds(100), 32},
    {"I3", "Inception V3", 91 * kMB, milliseconds(225), 32},
    {"RN18", "ResNet 18", 45 * kMB, milliseconds(54), 32},
    {"RN50", "ResNet 50", 97 * kMB, milliseconds(161), 32},
    {"RN269", "ResNet 269", 390 * kMB, milliseconds(350), 16},
    {"RX269", "ResNext 269", 390 * kMB, milliseconds(386), 8},
}};

std::string squash(std::string_view text) {
  std::string out;
  for (char c : text) {
    if (!std::isspace(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

std::size_t parse_count(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidManifest, "bad " + what + " '" + text + "'");
  }
}

}  // namespace

std::span<const NetworkPreset> network_presets() { return kPresets; }

std::optional<NetworkPreset> find_preset(const std::string& name) {
  const std::string key = squash(name);
  for (const NetworkPreset& p : kPresets) {
    if (key == squash(p.abbreviation) || key == squash(p.name)) return p;
  }
  return std::nullopt;
}

ModelManifest parse_model_spec(const std::string& spec) {
  if (spec.starts_with("preset:")) {
    const auto preset = find_preset(spec.substr(7));
    if (!preset) fail(ErrorCode::kInvalidManifest, "unknown preset '" + spec.substr(7) + "'");
    const std::size_t sizes[] = {preset->model_bytes / kScalarBytes};
    const std::string names[] = {preset->abbreviation};
    return build_manifest(sizes, names);
  }
  if (spec.starts_with("sizes:")) {
    std::vector<std::size_t> sizes;
    for (const std::string& item : split(spec.substr(6), ',')) {
      sizes.push_back(parse_count(item, "layer size"));
    }
    return build_manifest(sizes);
  }
  std::ifstream in(spec);
  if (!in) fail(ErrorCode::kInvalidManifest, "cannot open model file '" + spec + "'");
  std::vector<std::size_t> sizes;
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto parts = split(line, ',');
    if (parts.size() != 2) fail(ErrorCode::kInvalidManifest, "expected name,bytes: " + line);
    const std::size_t bytes = parse_count(trim(parts[1]), "byte count");
    if (bytes % kScalarBytes != 0) {
      fail(ErrorCode::kInvalidManifest, "layer '" + parts[0] + "' is not a whole number of scalars");
    }
    names.push_back(trim(parts[0]));
    sizes.push_back(bytes / kScalarBytes);
  }
  return build_manifest(sizes, names);
}

std::string model_spec_string(const ModelManifest& manifest) {
  std::string out = "sizes:";
  for (std::size_t i = 0; i < manifest.layers.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(manifest.layers[i].num_elements);
  }
  return out;
}

}  // namespace phub
