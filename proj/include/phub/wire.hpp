// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Binary framing used on every data stream.
//
// Layout (little-endian, 17-byte header):
//   opcode(1) | namespace_id(2) | vkey_id(4) | worker_id(2) | iteration(4) |
//   payload_len(4) | payload(payload_len)

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "phub/error.hpp"

namespace phub {

enum class Opcode : std::uint8_t {
  kHello = 1,
  kHelloOk = 2,
  kPush = 3,
  kPushAck = 4,
  kPull = 5,
  kPullResp = 6,
  kPushPull = 7,
  kError = 255,
};

bool is_valid_opcode(std::uint8_t raw) noexcept;

inline constexpr std::size_t kHeaderSize = 17;

// vkey_id used by the init barrier (a PULL on this id, iteration 0).
inline constexpr std::uint32_t kBarrierVkey = 0xFFFFFFFFu;
// worker_id used on ring-emulation loopback frames.
inline constexpr std::uint16_t kLoopbackWorker = 0xFFFFu;

struct Frame {
  Opcode opcode = Opcode::kPush;
  std::uint16_t namespace_id = 0;
  std::uint32_t vkey_id = 0;
  std::uint16_t worker_id = 0;
  std::uint32_t iteration = 0;
  std::vector<std::byte> payload;

  std::size_t encoded_size() const { return kHeaderSize + payload.size(); }
  bool operator==(const Frame&) const = default;
};

struct FrameHeader {
  Opcode opcode = Opcode::kPush;
  std::uint16_t namespace_id = 0;
  std::uint32_t vkey_id = 0;
  std::uint16_t worker_id = 0;
  std::uint32_t iteration = 0;
  std::uint32_t payload_len = 0;
};

// Throws kEncodeError when the payload length is not a multiple of four, does
// not fit in 32 bits, or the opcode is undefined.
std::vector<std::byte> encode_frame(const Frame& frame);
void encode_frame_into(const Frame& frame, std::vector<std::byte>& out);

// Parses just the header. Throws kTruncated when fewer than 17 bytes are
// given and kProtocolError on an unknown opcode or misaligned payload_len.
FrameHeader decode_header(std::span<const std::byte> bytes);

// Parses one complete frame; trailing bytes are rejected with kProtocolError.
Frame decode_frame(std::span<const std::byte> bytes);

// Payload helpers (binary32, little-endian).
std::vector<std::byte> floats_to_payload(std::span<const float> values);
std::vector<float> payload_to_floats(std::span<const std::byte> payload);
void payload_to_floats(std::span<const std::byte> payload, std::span<float> out);

std::vector<std::byte> u32_payload(std::uint32_t value);
std::uint32_t payload_u32(std::span<const std::byte> payload, std::size_t offset = 0);
void put_u64(std::vector<std::byte>& out, std::uint64_t value);
std::uint64_t payload_u64(std::span<const std::byte> payload, std::size_t offset = 0);

Frame make_error_frame(const Frame& request, ErrorCode code);
ErrorCode error_code_of(const Frame& error_frame);

}  // namespace phub
