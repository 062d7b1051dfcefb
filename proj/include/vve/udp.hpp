#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <vector>

#include "vve/errors.hpp"

namespace vve {

/// Thin RAII wrapper around a nonblocking IPv4 UDP socket.  Datagram
/// oriented: one send() per message, one recv() per message.  recv()
/// never blocks; callers that want to wait use wait_readable().
class UdpSocket {
public:
  UdpSocket() {
    fd_ = ::socket(AF_INET, SOCK_DGRAM | SOCK_NONBLOCK, 0);
    if (fd_ < 0)
      throw IoError("socket(): " + std::string(std::strerror(errno)));
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    // Bursts of pose/actor datagrams should not be dropped by a tiny
    // default kernel buffer.
    const int bufsz = 1 << 20;
    ::setsockopt(fd_, SOL_SOCKET, SO_RCVBUF, &bufsz, sizeof bufsz);
  }

  UdpSocket(const UdpSocket&) = delete;
  UdpSocket& operator=(const UdpSocket&) = delete;

  UdpSocket(UdpSocket&& other) noexcept
      : fd_(other.fd_), peer_(other.peer_), has_peer_(other.has_peer_) {
    other.fd_ = -1;
  }
  UdpSocket& operator=(UdpSocket&& other) noexcept {
    if (this != &other) {
      close_fd();
      fd_ = other.fd_;
      peer_ = other.peer_;
      has_peer_ = other.has_peer_;
      other.fd_ = -1;
    }
    return *this;
  }

  ~UdpSocket() { close_fd(); }

  /// Bind to a local address; port 0 asks the kernel for an ephemeral
  /// port (query it back with port()).
  void bind(const std::string& host, std::uint16_t port) {
    sockaddr_in addr = make_addr(host, port);
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
      throw IoError("bind(" + host + ":" + std::to_string(port) +
                    "): " + std::string(std::strerror(errno)));
  }

  /// Default destination for send(); also filters recv() to this peer
  /// once set (datagrams from other endpoints are ignored).
  void set_peer(const std::string& host, std::uint16_t port) {
    peer_ = make_addr(host, port);
    has_peer_ = true;
  }

  bool has_peer() const { return has_peer_; }

  /// Local port after bind(); resolves port-0 ephemeral binds.
  std::uint16_t port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0)
      throw IoError("getsockname(): " + std::string(std::strerror(errno)));
    return ntohs(addr.sin_port);
  }

  /// Send one datagram to the configured peer.
  void send(const std::vector<std::uint8_t>& bytes) {
    if (!has_peer_)
      throw IoError("send() without a peer address");
    const ssize_t n =
        ::sendto(fd_, bytes.data(), bytes.size(), 0,
                 reinterpret_cast<const sockaddr*>(&peer_), sizeof peer_);
    if (n < 0) {
      // A full send buffer on loopback just drops the datagram, which
      // the protocol already tolerates; report real failures only.
      if (errno == EAGAIN || errno == EWOULDBLOCK || errno == ECONNREFUSED)
        return;
      throw IoError("sendto(): " + std::string(std::strerror(errno)));
    }
  }

  /// Receive one datagram if available; returns nullopt when the queue
  /// is empty.  If no peer is pinned yet, the sender of the first
  /// accepted datagram becomes the peer (server-side rendezvous).
  std::optional<std::vector<std::uint8_t>> recv() {
    std::uint8_t buf[65536];
    for (;;) {
      sockaddr_in from{};
      socklen_t fromlen = sizeof from;
      const ssize_t n = ::recvfrom(fd_, buf, sizeof buf, 0,
                                   reinterpret_cast<sockaddr*>(&from),
                                   &fromlen);
      if (n < 0) {
        if (errno == EAGAIN || errno == EWOULDBLOCK)
          return std::nullopt;
        if (errno == ECONNREFUSED || errno == EINTR)
          continue;
        throw IoError("recvfrom(): " + std::string(std::strerror(errno)));
      }
      if (has_peer_) {
        if (from.sin_addr.s_addr != peer_.sin_addr.s_addr ||
            from.sin_port != peer_.sin_port)
          continue; // stray datagram from an unknown endpoint
      } else {
        peer_ = from;
        has_peer_ = true;
      }
      return std::vector<std::uint8_t>(buf, buf + n);
    }
  }

  /// Block up to timeout_ms for the socket to become readable.
  bool wait_readable(int timeout_ms) {
    pollfd pfd{fd_, POLLIN, 0};
    for (;;) {
      const int rc = ::poll(&pfd, 1, timeout_ms);
      if (rc < 0) {
        if (errno == EINTR)
          continue;
        throw IoError("poll(): " + std::string(std::strerror(errno)));
      }
      return rc > 0 && (pfd.revents & POLLIN);
    }
  }

private:
  static sockaddr_in make_addr(const std::string& host, std::uint16_t port) {
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw ConfigError("bad IPv4 address '" + host + "'");
    return addr;
  }

  void close_fd() {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

  int fd_ = -1;
  sockaddr_in peer_{};
  bool has_peer_ = false;
};

} // namespace vve
