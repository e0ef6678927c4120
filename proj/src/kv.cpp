// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/kv.hpp"

#include <cctype>
#include <fstream>

#include "phub/error.hpp"

namespace phub {

std::string trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

std::vector<std::string> split(std::string_view text, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = text.find(sep, start);
    out.push_back(trim(text.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

KeyValues parse_kv_tokens(std::string_view line) {
  KeyValues kv;
  std::size_t pos = 0;
  while (pos < line.size()) {
    while (pos < line.size() && std::isspace(static_cast<unsigned char>(line[pos]))) ++pos;
    std::size_t end = pos;
    while (end < line.size() && !std::isspace(static_cast<unsigned char>(line[end]))) ++end;
    if (end > pos) {
      const std::string_view token = line.substr(pos, end - pos);
      const std::size_t eq = token.find('=');
      if (eq == std::string_view::npos) {
        kv[""] = std::string(token);
      } else {
        kv[std::string(token.substr(0, eq))] = std::string(token.substr(eq + 1));
      }
    }
    pos = end;
  }
  return kv;
}

KeyValues parse_kv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kInvalidConfig, "cannot open '" + path + "'");
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(ErrorCode::kInvalidConfig, path + ":" + std::to_string(lineno) + ": expected key=value");
    }
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

const std::string& kv_get(const KeyValues& kv, const std::string& key) {
  const auto it = kv.find(key);
  if (it == kv.end()) fail(ErrorCode::kInvalidConfig, "missing key '" + key + "'");
  return it->second;
}

std::string kv_get_or(const KeyValues& kv, const std::string& key, std::string fallback) {
  const auto it = kv.find(key);
  return it == kv.end() ? std::move(fallback) : it->second;
}

double parse_double(const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidConfig, "bad number '" + text + "'");
  }
}

std::uint64_t parse_u64(const std::string& text) {
  try {
    std::size_t used = 0;
    if (!text.empty() && text.front() == '-') throw std::invalid_argument(text);
    const unsigned long long v = std::stoull(text, &used, 0);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    fail(ErrorCode::kInvalidConfig, "bad integer '" + text + "'");
  }
}

double kv_double(const KeyValues& kv, const std::string& key) {
  return parse_double(kv_get(kv, key));
}

double kv_double_or(const KeyValues& kv, const std::string& key, double fallback) {
  return kv.contains(key) ? kv_double(kv, key) : fallback;
}

std::uint64_t kv_u64(const KeyValues& kv, const std::string& key) {
  return parse_u64(kv_get(kv, key));
}

std::uint64_t kv_u64_or(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  return kv.contains(key) ? kv_u64(kv, key) : fallback;
}

}  // namespace phub
