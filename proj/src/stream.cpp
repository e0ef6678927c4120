// Copyright 2026 The PHub Authors.
// SPDX-License-Identifier: Apache-2.0

#include "phub/stream.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

namespace phub {

namespace {

struct PipeDirection {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::vector<std::byte>> frames;
  bool closed = false;
};

struct PipeChannel {
  PipeDirection a_to_b;
  PipeDirection b_to_a;
};

class InprocStream final : public Stream {
 public:
  InprocStream(std::shared_ptr<PipeChannel> channel, PipeDirection* out, PipeDirection* in)
      : channel_(std::move(channel)), out_(out), in_(in) {}
  ~InprocStream() override { close(); }

  void send(const Frame& frame) override {
    auto bytes = encode_frame(frame);
    std::lock_guard lock(out_->mu);
    if (out_->closed) fail(ErrorCode::kTransportError, "in-process peer closed");
    out_->frames.push_back(std::move(bytes));
    out_->cv.notify_one();
  }

  std::optional<Frame> receive() override {
    std::vector<std::byte> bytes;
    {
      std::unique_lock lock(in_->mu);
      in_->cv.wait(lock, [&] { return in_->closed || !in_->frames.empty(); });
      if (in_->frames.empty()) return std::nullopt;
      bytes = std::move(in_->frames.front());
      in_->frames.pop_front();
    }
    return decode_frame(bytes);
  }

  void close() override {
    for (PipeDirection* d : {out_, in_}) {
      std::lock_guard lock(d->mu);
      d->closed = true;
      d->cv.notify_all();
    }
  }

 private:
  std::shared_ptr<PipeChannel> channel_;
  PipeDirection* out_;
  PipeDirection* in_;
};

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

}  // namespace

std::pair<StreamPtr, StreamPtr> make_inproc_pipe() {
  auto channel = std::make_shared<PipeChannel>();
  auto a = std::make_shared<InprocStream>(channel, &channel->a_to_b, &channel->b_to_a);
  auto b = std::make_shared<InprocStream>(channel, &channel->b_to_a, &channel->a_to_b);
  return {a, b};
}

int connect_tcp(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string port_text = std::to_string(port);
  if (::getaddrinfo(host.c_str(), port_text.c_str(), &hints, &res) != 0 || res == nullptr) {
    fail(ErrorCode::kTransportError, "cannot resolve " + host);
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    fail(ErrorCode::kTransportError, std::string("socket: ") + std::strerror(errno));
  }
  if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
    const int err = errno;
    ::freeaddrinfo(res);
    ::close(fd);
    fail(ErrorCode::kTransportError,
         "connect " + host + ":" + port_text + ": " + std::strerror(err));
  }
  ::freeaddrinfo(res);
  set_nodelay(fd);
  return fd;
}

TcpStream::TcpStream(int fd) : fd_(fd) { set_nodelay(fd_); }

TcpStream::~TcpStream() {
  close();
  ::close(fd_);
}

std::shared_ptr<TcpStream> TcpStream::connect(const std::string& host, std::uint16_t port) {
  return std::make_shared<TcpStream>(connect_tcp(host, port));
}

void TcpStream::send(const Frame& frame) {
  std::lock_guard lock(send_mu_);
  send_buf_.clear();
  encode_frame_into(frame, send_buf_);
  const std::byte* p = send_buf_.data();
  std::size_t left = send_buf_.size();
  while (left > 0) {
    const ssize_t n = ::send(fd_, p, left, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::kTransportError, std::string("send: ") + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

bool TcpStream::read_exact(std::byte* dst, std::size_t n, bool allow_eof) {
  std::size_t got = 0;
  while (got < n) {
    const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
    if (r == 0) {
      if (allow_eof && got == 0) return false;
      fail(ErrorCode::kTruncated, "stream closed mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      if (allow_eof && got == 0) return false;
      fail(ErrorCode::kTransportError, std::string("recv: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

std::optional<Frame> TcpStream::receive() {
  std::byte header[kHeaderSize];
  if (!read_exact(header, kHeaderSize, true)) return std::nullopt;
  const FrameHeader h = decode_header(header);
  Frame f;
  f.opcode = h.opcode;
  f.namespace_id = h.namespace_id;
  f.vkey_id = h.vkey_id;
  f.worker_id = h.worker_id;
  f.iteration = h.iteration;
  f.payload.resize(h.payload_len);
  if (h.payload_len > 0) read_exact(f.payload.data(), h.payload_len, false);
  return f;
}

void TcpStream::close() { ::shutdown(fd_, SHUT_RDWR); }

TcpListener::TcpListener(std::uint16_t port, const std::string& host) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) fail(ErrorCode::kBindError, std::string("socket: ") + std::strerror(errno));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
    ::close(fd_);
    fail(ErrorCode::kBindError, "bad listen address " + host);
  }
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::listen(fd_, 128) != 0) {
    const int err = errno;
    ::close(fd_);
    fail(ErrorCode::kBindError,
         "port " + std::to_string(port) + ": " + std::strerror(err));
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  close();
  ::close(fd_);
}

int TcpListener::accept_fd() {
  while (true) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) return fd;
    if (errno == EINTR) continue;
    return -1;
  }
}

void TcpListener::close() { ::shutdown(fd_, SHUT_RDWR); }

bool read_line(int fd, std::string& line) {
  line.clear();
  char c;
  while (true) {
    const ssize_t r = ::recv(fd, &c, 1, 0);
    if (r == 0) return !line.empty();
    if (r < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    if (c == '\n') return true;
    line.push_back(c);
  }
}

void write_all(int fd, const std::string& text) {
  const char* p = text.data();
  std::size_t left = text.size();
  while (left > 0) {
    const ssize_t n = ::send(fd, p, left, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      fail(ErrorCode::kTransportError, std::string("send: ") + std::strerror(errno));
    }
    p += n;
    left -= static_cast<std::size_t>(n);
  }
}

}  // namespace phub
