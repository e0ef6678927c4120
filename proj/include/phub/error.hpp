// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace phub {

// Numeric values travel in the payload of ERROR frames and are part of the
// wire contract. Append only.
enum class ErrorCode : std::uint32_t {
  kOk = 0,
  kInvalidManifest = 1,
  kInvalidChunkSize = 2,
  kInconsistentInputs = 3,
  kOracleTooLarge = 4,
  kInvalidInit = 5,
  kDuplicatePush = 6,
  kLengthMismatch = 7,
  kIncomplete = 8,
  kEncodeError = 9,
  kTruncated = 10,
  kProtocolError = 11,
  kServiceExists = 12,
  kAuthFailed = 13,
  kPlanMismatch = 14,
  kIterationMismatch = 15,
  kInvalidConfig = 16,
  kBindError = 17,
  kUnknownService = 18,
  kTransportError = 19,
  kTimeout = 20,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace phub
