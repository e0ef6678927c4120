// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/wire.hpp"

#include <bit>
#include <cstring>
#include <limits>
#include <string>

namespace phub {

static_assert(sizeof(float) == 4 && std::numeric_limits<float>::is_iec559);

namespace {

template <typename T>
void put_le(std::byte* dst, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    dst[i] = static_cast<std::byte>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xFF);
  }
}

template <typename T>
T get_le(const std::byte* src) {
  std::uint64_t value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<std::uint64_t>(std::to_integer<std::uint8_t>(src[i])) << (8 * i);
  }
  return static_cast<T>(value);
}

}  // namespace

bool is_valid_opcode(std::uint8_t raw) noexcept {
  switch (raw) {
    case 1: case 2: case 3: case 4: case 5: case 6: case 7: case 255:
      return true;
    default:
      return false;
  }
}

void encode_frame_into(const Frame& frame, std::vector<std::byte>& out) {
  if (!is_valid_opcode(static_cast<std::uint8_t>(frame.opcode))) {
    fail(ErrorCode::kEncodeError, "undefined opcode");
  }
  if (frame.payload.size() % 4 != 0 ||
      frame.payload.size() > std::numeric_limits<std::uint32_t>::max()) {
    fail(ErrorCode::kEncodeError,
         "payload of " + std::to_string(frame.payload.size()) + " bytes is not framable");
  }
  const std::size_t start = out.size();
  out.resize(start + kHeaderSize + frame.payload.size());
  std::byte* p = out.data() + start;
  p[0] = static_cast<std::byte>(frame.opcode);
  put_le<std::uint16_t>(p + 1, frame.namespace_id);
  put_le<std::uint32_t>(p + 3, frame.vkey_id);
  put_le<std::uint16_t>(p + 7, frame.worker_id);
  put_le<std::uint32_t>(p + 9, frame.iteration);
  put_le<std::uint32_t>(p + 13, static_cast<std::uint32_t>(frame.payload.size()));
  if (!frame.payload.empty()) {
    std::memcpy(p + kHeaderSize, frame.payload.data(), frame.payload.size());
  }
}

std::vector<std::byte> encode_frame(const Frame& frame) {
  std::vector<std::byte> out;
  out.reserve(frame.encoded_size());
  encode_frame_into(frame, out);
  return out;
}

FrameHeader decode_header(std::span<const std::byte> bytes) {
  if (bytes.size() < kHeaderSize) {
    fail(ErrorCode::kTruncated, "header needs 17 bytes, have " + std::to_string(bytes.size()));
  }
  const auto raw_op = std::to_integer<std::uint8_t>(bytes[0]);
  if (!is_valid_opcode(raw_op)) {
    fail(ErrorCode::kProtocolError, "unknown opcode " + std::to_string(raw_op));
  }
  FrameHeader h;
  h.opcode = static_cast<Opcode>(raw_op);
  h.namespace_id = get_le<std::uint16_t>(bytes.data() + 1);
  h.vkey_id = get_le<std::uint32_t>(bytes.data() + 3);
  h.worker_id = get_le<std::uint16_t>(bytes.data() + 7);
  h.iteration = get_le<std::uint32_t>(bytes.data() + 9);
  h.payload_len = get_le<std::uint32_t>(bytes.data() + 13);
  if (h.payload_len % 4 != 0) {
    fail(ErrorCode::kProtocolError,
         "payload_len " + std::to_string(h.payload_len) + " is not a multiple of 4");
  }
  return h;
}

Frame decode_frame(std::span<const std::byte> bytes) {
  const FrameHeader h = decode_header(bytes);
  const std::size_t need = kHeaderSize + h.payload_len;
  if (bytes.size() < need) {
    fail(ErrorCode::kTruncated, "frame needs " + std::to_string(need) + " bytes, have " +
                                    std::to_string(bytes.size()));
  }
  if (bytes.size() > need) {
    fail(ErrorCode::kProtocolError, "trailing bytes after frame");
  }
  Frame f;
  f.opcode = h.opcode;
  f.namespace_id = h.namespace_id;
  f.vkey_id = h.vkey_id;
  f.worker_id = h.worker_id;
  f.iteration = h.iteration;
  f.payload.assign(bytes.begin() + kHeaderSize, bytes.begin() + need);
  return f;
}

std::vector<std::byte> floats_to_payload(std::span<const float> values) {
  std::vector<std::byte> out(values.size() * 4);
  if constexpr (std::endian::native == std::endian::little) {
    if (!values.empty()) std::memcpy(out.data(), values.data(), out.size());
  } else {
    for (std::size_t i = 0; i < values.size(); ++i) {
      put_le<std::uint32_t>(out.data() + 4 * i, std::bit_cast<std::uint32_t>(values[i]));
    }
  }
  return out;
}

void payload_to_floats(std::span<const std::byte> payload, std::span<float> out) {
  if (payload.size() != out.size() * 4) {
    fail(ErrorCode::kLengthMismatch, "payload holds " + std::to_string(payload.size() / 4) +
                                         " scalars, expected " + std::to_string(out.size()));
  }
  if constexpr (std::endian::native == std::endian::little) {
    if (!out.empty()) std::memcpy(out.data(), payload.data(), payload.size());
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = std::bit_cast<float>(get_le<std::uint32_t>(payload.data() + 4 * i));
    }
  }
}

std::vector<float> payload_to_floats(std::span<const std::byte> payload) {
  std::vector<float> out(payload.size() / 4);
  payload_to_floats(payload.first(out.size() * 4), out);
  return out;
}

std::vector<std::byte> u32_payload(std::uint32_t value) {
  std::vector<std::byte> out(4);
  put_le<std::uint32_t>(out.data(), value);
  return out;
}

std::uint32_t payload_u32(std::span<const std::byte> payload, std::size_t offset) {
  if (payload.size() < offset + 4) fail(ErrorCode::kTruncated, "payload too short for u32");
  return get_le<std::uint32_t>(payload.data() + offset);
}

void put_u64(std::vector<std::byte>& out, std::uint64_t value) {
  const std::size_t start = out.size();
  out.resize(start + 8);
  put_le<std::uint64_t>(out.data() + start, value);
}

std::uint64_t payload_u64(std::span<const std::byte> payload, std::size_t offset) {
  if (payload.size() < offset + 8) fail(ErrorCode::kTruncated, "payload too short for u64");
  return get_le<std::uint64_t>(payload.data() + offset);
}

Frame make_error_frame(const Frame& request, ErrorCode code) {
  Frame f;
  f.opcode = Opcode::kError;
  f.namespace_id = request.namespace_id;
  f.vkey_id = request.vkey_id;
  f.worker_id = request.worker_id;
  f.iteration = request.iteration;
  f.payload = u32_payload(static_cast<std::uint32_t>(code));
  return f;
}

ErrorCode error_code_of(const Frame& error_frame) {
  if (error_frame.payload.size() < 4) return ErrorCode::kProtocolError;
  return static_cast<ErrorCode>(payload_u32(error_frame.payload));
}

}  // namespace phub
