// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// key=value parsing for config files and the control channel.

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace phub {

using KeyValues = std::map<std::string, std::string>;

std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

// "k1=v1 k2=v2" on one line; tokens without '=' are returned under "".
KeyValues parse_kv_tokens(std::string_view line);

// One key=value per line; '#' starts a comment. Throws kInvalidConfig.
KeyValues parse_kv_file(const std::string& path);

// Typed lookups; throw kInvalidConfig on a missing key or a bad value.
const std::string& kv_get(const KeyValues& kv, const std::string& key);
std::string kv_get_or(const KeyValues& kv, const std::string& key, std::string fallback);
double kv_double(const KeyValues& kv, const std::string& key);
double kv_double_or(const KeyValues& kv, const std::string& key, double fallback);
std::uint64_t kv_u64(const KeyValues& kv, const std::string& key);
std::uint64_t kv_u64_or(const KeyValues& kv, const std::string& key, std::uint64_t fallback);

double parse_double(const std::string& text);
std::uint64_t parse_u64(const std::string& text);

}  // namespace phub
