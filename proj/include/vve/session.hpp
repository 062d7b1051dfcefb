#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "vve/config.hpp"
#include "vve/errors.hpp"
#include "vve/latency.hpp"
#include "vve/protocol.hpp"
#include "vve/udp.hpp"

namespace vve {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Both peers must run the same configuration for mirrored state to be
/// meaningful; the hash of the canonical text rides in the START message.
inline std::uint64_t config_hash(const Config& c) {
  return fnv1a64(print_config(c));
}

inline double mono_seconds() {
  return std::chrono::duration<double>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

inline double mono_ms() { return mono_seconds() * 1000.0; }

/// Observable health of one side of the link.
struct LinkStats {
  std::uint64_t sent = 0;          ///< datagrams actually written
  std::uint64_t received = 0;      ///< well-formed datagrams accepted
  std::uint64_t bad_datagrams = 0; ///< undecodable datagrams discarded
  std::uint64_t seq_gaps = 0;      ///< data-plane datagrams inferred lost
  std::uint64_t stale_dropped = 0; ///< out-of-order data-plane discards
  std::uint64_t send_dropped = 0;  ///< dropped by the injected-loss model
};

/// One endpoint of the UDP session.  Owns the socket, per-type sequence
/// counters, freshest-wins filtering of the data plane, and sender-side
/// latency/loss injection.
///
/// Latency injection differs by mode: in lockstep the exchange is
/// blocking anyway, so a sampled delay is served as a synchronous sleep
/// before the write; in free-running mode delayed datagrams sit in a
/// queue and go out when due (call pump(), or rely on recv_wait).
class Link {
public:
  Link(const Config& cfg, bool is_environment)
      : lockstep_(cfg.link.mode == "lockstep"),
        latency_(cfg.link.latency_base_ms, cfg.link.latency_jitter_ms,
                 cfg.link.drop_prob,
                 // decorrelate the two directions of the same session
                 cfg.link.latency_seed ^
                     (is_environment ? 0ull : 0x9e3779b97f4a7c15ull)) {
    const int own = is_environment ? cfg.link.environment_port
                                   : cfg.link.controller_port;
    const int peer = is_environment ? cfg.link.controller_port
                                    : cfg.link.environment_port;
    socket_.bind(cfg.link.bind_address, static_cast<std::uint16_t>(own));
    socket_.set_peer(cfg.link.bind_address, static_cast<std::uint16_t>(peer));
  }

  /// Bind-to-ephemeral constructor for callers that wire ports manually
  /// (the peer must be set before the first send).
  Link(const std::string& bind_address, std::uint16_t own_port, bool lockstep,
       const LatencyModel& latency)
      : lockstep_(lockstep), latency_(latency) {
    socket_.bind(bind_address, own_port);
  }

  UdpSocket& socket() { return socket_; }
  const LinkStats& stats() const { return stats_; }

  std::uint32_t next_seq(MsgType t) const {
    return tx_seq_[static_cast<std::size_t>(t)];
  }

  /// Queue or transmit one message.  Returns the sequence number used.
  std::uint32_t send(MsgType type, Payload payload, std::uint64_t t_us) {
    WireMessage m;
    m.type = type;
    m.seq = tx_seq_[static_cast<std::size_t>(type)]++;
    m.t_us = t_us;
    m.payload = std::move(payload);
    auto bytes = encode(m);

    if (lockstep_) {
      const auto delay_ms = latency_.sample();
      if (!delay_ms) {
        ++stats_.send_dropped;
        return m.seq;
      }
      if (*delay_ms > 0.0)
        std::this_thread::sleep_for(
            std::chrono::duration<double, std::milli>(*delay_ms));
      socket_.send(bytes);
      ++stats_.sent;
    } else {
      if (!outbox_.push(std::move(bytes), mono_ms(), latency_))
        ++stats_.send_dropped;
      pump();
    }
    return m.seq;
  }

  /// Flush delayed sends that have come due (free-running mode).
  void pump() {
    while (auto bytes = outbox_.pop_due(mono_ms())) {
      socket_.send(*bytes);
      ++stats_.sent;
    }
  }

  /// Nonblocking receive of the next accepted message.  Undecodable
  /// datagrams are counted and skipped.  POSE/ACTORS/CMD streams are
  /// freshest-wins: an out-of-order datagram is counted stale and
  /// dropped, and forward jumps count the inferred losses.
  std::optional<WireMessage> poll_recv() {
    pump();
    for (;;) {
      auto bytes = socket_.recv();
      if (!bytes)
        return std::nullopt;
      WireMessage m;
      try {
        m = decode(*bytes);
      } catch (const DecodeError&) {
        ++stats_.bad_datagrams;
        continue;
      }
      if (is_data_plane(m.type)) {
        auto& last = rx_last_[static_cast<std::size_t>(m.type)];
        if (last && m.seq <= *last) {
          ++stats_.stale_dropped;
          continue;
        }
        if (last && m.seq > *last + 1)
          stats_.seq_gaps += m.seq - (*last + 1);
        if (!last && m.seq > 0)
          stats_.seq_gaps += m.seq;
        last = m.seq;
      }
      ++stats_.received;
      return m;
    }
  }

  /// Block until every queued outbound datagram has left the socket (or
  /// the timeout expires).  Without this, messages still sitting in the
  /// latency queue would be lost when the link is torn down.
  void flush(double timeout_ms) {
    const double deadline = mono_seconds() + timeout_ms / 1000.0;
    while (outbox_.pending() > 0 && mono_seconds() < deadline) {
      const double gap_ms = outbox_.next_release() - mono_ms();
      if (gap_ms > 0.0)
        std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(
            std::min(gap_ms, 50.0)));
      pump();
    }
  }

  /// Sleep until the socket may be readable, a queued send comes due,
  /// or timeout_ms elapses.  Consumes nothing: callers drain with
  /// poll_recv() afterwards.
  void wait(double timeout_ms) {
    pump();
    const double now = mono_seconds();
    double wait_s = std::max(0.0, timeout_ms) / 1000.0;
    if (outbox_.pending() > 0)
      wait_s = std::min(wait_s,
                        std::max(0.0, outbox_.next_release() / 1000.0 - now));
    socket_.wait_readable(static_cast<int>(wait_s * 1000.0));
    pump();
  }

  /// Blocking receive with a deadline; keeps the send queue flowing
  /// while it waits.  Returns nullopt on timeout.
  std::optional<WireMessage> recv_wait(double timeout_ms) {
    const double deadline = mono_seconds() + timeout_ms / 1000.0;
    for (;;) {
      if (auto m = poll_recv())
        return m;
      const double now = mono_seconds();
      if (now >= deadline)
        return std::nullopt;
      double wait_s = deadline - now;
      if (outbox_.pending() > 0)
        wait_s = std::min(
            wait_s, std::max(0.0, outbox_.next_release() / 1000.0 - now));
      socket_.wait_readable(
          static_cast<int>(std::min(wait_s * 1000.0, 50.0)) + 1);
    }
  }

private:
  static bool is_data_plane(MsgType t) {
    return t == MsgType::kPose || t == MsgType::kActors || t == MsgType::kCmd;
  }

  static constexpr std::size_t kTypeSlots = 16;

  UdpSocket socket_;
  bool lockstep_ = true;
  LatencyModel latency_;
  DelayQueue<std::vector<std::uint8_t>> outbox_;
  LinkStats stats_;
  mutable std::uint32_t tx_seq_[kTypeSlots] = {};
  std::optional<std::uint32_t> rx_last_[kTypeSlots] = {};
};

/// Controller side of the session handshake: repeat HELLO until the
/// environment answers with START, verify the configuration hash, and
/// ACK.  Throws LinkError on version rejection, configuration mismatch,
/// or timeout.
inline StartPayload handshake_controller(Link& link, const Config& cfg) {
  const std::uint64_t want_hash = config_hash(cfg);
  const double timeout_ms = cfg.link.handshake_timeout_ms;
  const double retry_ms = timeout_ms / 5.0;
  const double deadline = mono_seconds() + timeout_ms / 1000.0;

  while (mono_seconds() < deadline) {
    link.send(MsgType::kHello, HelloPayload{}, 0);
    const double slice_end =
        std::min(deadline, mono_seconds() + retry_ms / 1000.0);
    while (mono_seconds() < slice_end) {
      auto m = link.recv_wait((slice_end - mono_seconds()) * 1000.0 + 1.0);
      if (!m)
        break;
      if (m->type == MsgType::kStart) {
        if (m->version != kProtocolVersion)
          throw LinkError("environment runs protocol version " +
                          std::to_string(m->version) + ", expected " +
                          std::to_string(kProtocolVersion));
        const auto& p = std::get<StartPayload>(m->payload);
        if (p.config_hash != want_hash)
          throw LinkError(
              "configuration mismatch: environment hash " +
              std::to_string(p.config_hash) + " != local " +
              std::to_string(want_hash) +
              " (both sides must load identical configurations)");
        link.send(MsgType::kAck, AckPayload{}, 0);
        return p;
      }
      if (m->type == MsgType::kBye) {
        const auto& p = std::get<ByePayload>(m->payload);
        if (p.reason == ByeReason::kIncompatible)
          throw LinkError("environment rejected the protocol version");
        throw LinkError("environment closed the session during handshake");
      }
      // anything else is ignored during the handshake
    }
  }
  throw LinkError("handshake timed out: no START from the environment");
}

/// Environment side of the handshake: wait for HELLO (rejecting foreign
/// protocol versions with BYE), then repeat START until the controller
/// ACKs.  A duplicate HELLO while waiting simply re-arms the START.
inline void handshake_environment(Link& link, const Config& cfg) {
  const double timeout_ms = cfg.link.handshake_timeout_ms;
  const double retry_ms = timeout_ms / 5.0;
  const double deadline = mono_seconds() + timeout_ms / 1000.0;
  const StartPayload start{config_hash(cfg)};

  bool got_hello = false;
  while (!got_hello) {
    auto m = link.recv_wait((deadline - mono_seconds()) * 1000.0);
    if (mono_seconds() >= deadline || !m)
      throw LinkError("handshake timed out: no HELLO from the controller");
    if (m->type != MsgType::kHello)
      continue;
    if (m->version != kProtocolVersion) {
      link.send(MsgType::kBye, ByePayload{ByeReason::kIncompatible}, 0);
      throw LinkError("controller runs protocol version " +
                      std::to_string(m->version) + ", expected " +
                      std::to_string(kProtocolVersion));
    }
    got_hello = true;
  }

  while (mono_seconds() < deadline) {
    link.send(MsgType::kStart, start, 0);
    const double slice_end =
        std::min(deadline, mono_seconds() + retry_ms / 1000.0);
    while (mono_seconds() < slice_end) {
      auto m = link.recv_wait((slice_end - mono_seconds()) * 1000.0 + 1.0);
      if (!m)
        break;
      if (m->type == MsgType::kAck)
        return;
      if (m->type == MsgType::kBye)
        throw LinkError("controller closed the session during handshake");
      // a repeated HELLO falls through; the outer loop resends START
    }
  }
  throw LinkError("handshake timed out: no ACK from the controller");
}

/// Orderly shutdown: BYE is fire-and-forget over UDP, so send a small
/// burst to survive individual datagram loss, then drain the latency
/// queue so the burst actually reaches the wire before teardown.
inline void send_bye_burst(Link& link, ByeReason reason, std::uint64_t t_us,
                           int copies = 3) {
  for (int i = 0; i < copies; ++i)
    link.send(MsgType::kBye, ByePayload{reason}, t_us);
  link.flush(1000.0);
}

} // namespace vve
