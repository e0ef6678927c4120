// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/error.hpp"

namespace phub {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kOk: return "Ok";
    case ErrorCode::kInvalidManifest: return "InvalidManifest";
    case ErrorCode::kInvalidChunkSize: return "InvalidChunkSize";
    case ErrorCode::kInconsistentInputs: return "InconsistentInputs";
    case ErrorCode::kOracleTooLarge: return "OracleTooLarge";
    case ErrorCode::kInvalidInit: return "InvalidInit";
    case ErrorCode::kDuplicatePush: return "DuplicatePush";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kIncomplete: return "Incomplete";
    case ErrorCode::kEncodeError: return "EncodeError";
    case ErrorCode::kTruncated: return "Truncated";
    case ErrorCode::kProtocolError: return "ProtocolError";
    case ErrorCode::kServiceExists: return "ServiceExists";
    case ErrorCode::kAuthFailed: return "AuthFailed";
    case ErrorCode::kPlanMismatch: return "PlanMismatch";
    case ErrorCode::kIterationMismatch: return "IterationMismatch";
    case ErrorCode::kInvalidConfig: return "InvalidConfig";
    case ErrorCode::kBindError: return "BindError";
    case ErrorCode::kUnknownService: return "UnknownService";
    case ErrorCode::kTransportError: return "TransportError";
    case ErrorCode::kTimeout: return "Timeout";
  }
  return "Unknown";
}

}  // namespace phub
