// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

// Reliable, ordered frame streams: TCP sockets and an in-process pipe with
// the same contract. Sends are serialized internally so several executors
// may reply on one stream; receive() must only be called by one reader.

#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "phub/wire.hpp"

namespace phub {

class Stream {
 public:
  virtual ~Stream() = default;
  // Throws kTransportError if the peer is gone.
  virtual void send(const Frame& frame) = 0;
  // nullopt on orderly close. Malformed bytes throw the decode error.
  virtual std::optional<Frame> receive() = 0;
  virtual void close() = 0;
};

using StreamPtr = std::shared_ptr<Stream>;

// Two connected in-process ends. Frames are encoded into bytes on send and
// decoded on receive so the wire codec runs exactly as it does over TCP.
std::pair<StreamPtr, StreamPtr> make_inproc_pipe();

class TcpStream final : public Stream {
 public:
  explicit TcpStream(int fd);
  ~TcpStream() override;
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;

  static std::shared_ptr<TcpStream> connect(const std::string& host, std::uint16_t port);

  void send(const Frame& frame) override;
  std::optional<Frame> receive() override;
  void close() override;

 private:
  bool read_exact(std::byte* dst, std::size_t n, bool allow_eof);

  int fd_;
  std::mutex send_mu_;
  std::vector<std::byte> send_buf_;
};

class TcpListener {
 public:
  // Port 0 picks an ephemeral port. Throws kBindError.
  explicit TcpListener(std::uint16_t port, const std::string& host = "127.0.0.1");
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  // Returns the accepted socket fd, or -1 once the listener is closed.
  int accept_fd();
  void close();

 private:
  int fd_;
  std::uint16_t port_ = 0;
};

// Line-oriented helpers for the text control channel.
bool read_line(int fd, std::string& line);
void write_all(int fd, const std::string& text);
int connect_tcp(const std::string& host, std::uint16_t port);

}  // namespace phub
