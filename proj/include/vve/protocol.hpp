#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <string>
#include <variant>
#include <vector>

#include "vve/errors.hpp"

namespace vve {

inline constexpr std::uint32_t kWireMagic = 0x56564531u;
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kHeaderBytes = 20;

/// Datagram kinds exchanged between the controller and the environment.
enum class MsgType : std::uint8_t {
  kHello = 1,     ///< controller -> environment, opens the handshake
  kStart = 2,     ///< environment -> controller, carries t0 in the header
  kAck = 3,       ///< controller -> environment, completes the handshake
  kPose = 4,      ///< environment -> controller, ego chassis state
  kActors = 5,    ///< environment -> controller, scenario actor states
  kHeartbeat = 6, ///< either direction, liveness
  kBye = 7,       ///< either direction, orderly shutdown
  kCmd = 8,       ///< controller -> environment, chosen action
};

inline const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kHello: return "hello";
    case MsgType::kStart: return "start";
    case MsgType::kAck: return "ack";
    case MsgType::kPose: return "pose";
    case MsgType::kActors: return "actors";
    case MsgType::kHeartbeat: return "heartbeat";
    case MsgType::kBye: return "bye";
    case MsgType::kCmd: return "cmd";
  }
  return "?";
}

struct HelloPayload {
  bool operator==(const HelloPayload&) const = default;
};

/// t0 rides in the header timestamp; the payload pins the configuration
/// both sides must share for mirrored state to be meaningful.
struct StartPayload {
  std::uint64_t config_hash = 0;
  bool operator==(const StartPayload&) const = default;
};

struct AckPayload {
  bool operator==(const AckPayload&) const = default;
};

struct PosePayload {
  double x = 0.0;
  double y = 0.0;
  double psi = 0.0;
  double v = 0.0;
  double beta = 0.0;
  double r = 0.0;
  bool operator==(const PosePayload&) const = default;
};

struct ActorRecord {
  std::uint32_t id = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0;
  double speed = 0.0;
  bool operator==(const ActorRecord&) const = default;
};

struct ActorsPayload {
  std::vector<ActorRecord> actors;
  bool operator==(const ActorsPayload&) const = default;
};

struct HeartbeatPayload {
  bool operator==(const HeartbeatPayload&) const = default;
};

enum class ByeReason : std::uint8_t {
  kDone = 0,
  kFault = 1,
  kIncompatible = 2,
  kPeerTimeout = 3,
};

struct ByePayload {
  ByeReason reason = ByeReason::kDone;
  bool operator==(const ByePayload&) const = default;
};

struct CmdPayload {
  std::int32_t action = 0;
  bool operator==(const CmdPayload&) const = default;
};

using Payload = std::variant<HelloPayload, StartPayload, AckPayload,
                             PosePayload, ActorsPayload, HeartbeatPayload,
                             ByePayload, CmdPayload>;

/// One datagram.  `seq` counts per (sender, type) stream; `t_us` is
/// microseconds since the session's agreed t0 (t0 itself for START).
struct WireMessage {
  std::uint8_t version = kProtocolVersion;
  MsgType type = MsgType::kHeartbeat;
  std::uint32_t seq = 0;
  std::uint64_t t_us = 0;
  Payload payload = HeartbeatPayload{};

  bool operator==(const WireMessage&) const = default;
};

/// Typed decode failure; `reason()` tells the caller which contract the
/// buffer violated.
class DecodeError : public Error {
public:
  enum class Reason { kBadMagic, kTruncated, kUnsupportedType, kMalformedPayload };

  DecodeError(Reason r, const std::string& what) : Error(what), reason_(r) {}
  Reason reason() const { return reason_; }

private:
  Reason reason_;
};

namespace wire {

inline void put_u16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}
inline void put_u32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& b, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) b.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_f64(std::vector<std::uint8_t>& b, double v) {
  put_u64(b, std::bit_cast<std::uint64_t>(v));
}

/// Bounds-checked little-endian reader.
class Cursor {
public:
  Cursor(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  std::size_t remaining() const { return n_ - i_; }

  std::uint8_t u8() {
    need(1);
    return p_[i_++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p_[i_]) |
                      static_cast<std::uint16_t>(p_[i_ + 1]) << 8;
    i_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(p_[i_ + k]) << (8 * k);
    i_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(p_[i_ + k]) << (8 * k);
    i_ += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

private:
  void need(std::size_t k) const {
    if (n_ - i_ < k)
      throw DecodeError(DecodeError::Reason::kTruncated,
                        "datagram truncated mid-field");
  }
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t i_ = 0;
};

} // namespace wire

/// Validate invariants the codec promises to peers: finite floats and
/// unique actor ids.
inline void validate_for_send(const WireMessage& m) {
  if (const auto* p = std::get_if<PosePayload>(&m.payload)) {
    const bool ok = std::isfinite(p->x) && std::isfinite(p->y) &&
                    std::isfinite(p->psi) && std::isfinite(p->v) &&
                    std::isfinite(p->beta) && std::isfinite(p->r);
    if (!ok) throw InvalidInputError("pose payload must be finite");
  } else if (const auto* a = std::get_if<ActorsPayload>(&m.payload)) {
    if (a->actors.size() > 0xffff)
      throw InvalidInputError("too many actor records for one datagram");
    for (std::size_t i = 0; i < a->actors.size(); ++i) {
      const auto& rec = a->actors[i];
      if (!(std::isfinite(rec.x) && std::isfinite(rec.y) &&
            std::isfinite(rec.heading) && std::isfinite(rec.speed)))
        throw InvalidInputError("actor record must be finite");
      for (std::size_t j = 0; j < i; ++j)
        if (a->actors[j].id == rec.id)
          throw InvalidInputError("actor ids must be unique");
    }
  }
}

/// Serialize: magic(4) version(1) type(1) pad(2) seq(4) t_us(8) payload.
inline std::vector<std::uint8_t> encode(const WireMessage& m) {
  validate_for_send(m);
  std::vector<std::uint8_t> b;
  b.reserve(kHeaderBytes + 64);
  wire::put_u32(b, kWireMagic);
  b.push_back(m.version);
  b.push_back(static_cast<std::uint8_t>(m.type));
  wire::put_u16(b, 0); // pad
  wire::put_u32(b, m.seq);
  wire::put_u64(b, m.t_us);

  std::visit(
      [&b](const auto& p) {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, StartPayload>) {
          wire::put_u64(b, p.config_hash);
        } else if constexpr (std::is_same_v<T, PosePayload>) {
          wire::put_f64(b, p.x);
          wire::put_f64(b, p.y);
          wire::put_f64(b, p.psi);
          wire::put_f64(b, p.v);
          wire::put_f64(b, p.beta);
          wire::put_f64(b, p.r);
        } else if constexpr (std::is_same_v<T, ActorsPayload>) {
          wire::put_u16(b, static_cast<std::uint16_t>(p.actors.size()));
          for (const ActorRecord& a : p.actors) {
            wire::put_u32(b, a.id);
            wire::put_f64(b, a.x);
            wire::put_f64(b, a.y);
            wire::put_f64(b, a.heading);
            wire::put_f64(b, a.speed);
          }
        } else if constexpr (std::is_same_v<T, ByePayload>) {
          b.push_back(static_cast<std::uint8_t>(p.reason));
        } else if constexpr (std::is_same_v<T, CmdPayload>) {
          wire::put_u32(b, static_cast<std::uint32_t>(p.action));
        }
        // HELLO, ACK, HEARTBEAT carry no payload.
      },
      m.payload);
  return b;
}

/// Parse any byte buffer: returns a message or throws a DecodeError.
/// Never reads out of bounds; never aborts.
inline WireMessage decode(const std::uint8_t* data, std::size_t size) {
  if (size < kHeaderBytes)
    throw DecodeError(DecodeError::Reason::kTruncated,
                      "datagram shorter than the fixed header");
  wire::Cursor c(data, size);
  if (c.u32() != kWireMagic)
    throw DecodeError(DecodeError::Reason::kBadMagic,
                      "datagram does not start with the protocol magic");
  WireMessage m;
  m.version = c.u8();
  const std::uint8_t raw_type = c.u8();
  c.u16(); // pad, ignored
  m.seq = c.u32();
  m.t_us = c.u64();

  auto expect_exact = [&c](std::size_t want, const char* what) {
    if (c.remaining() != want)
      throw DecodeError(DecodeError::Reason::kMalformedPayload,
                        std::string(what) + ": payload length mismatch");
  };

  switch (raw_type) {
    case 1:
      expect_exact(0, "hello");
      m.type = MsgType::kHello;
      m.payload = HelloPayload{};
      break;
    case 2: {
      expect_exact(8, "start");
      m.type = MsgType::kStart;
      StartPayload p;
      p.config_hash = c.u64();
      m.payload = p;
      break;
    }
    case 3:
      expect_exact(0, "ack");
      m.type = MsgType::kAck;
      m.payload = AckPayload{};
      break;
    case 4: {
      expect_exact(48, "pose");
      m.type = MsgType::kPose;
      PosePayload p;
      p.x = c.f64();
      p.y = c.f64();
      p.psi = c.f64();
      p.v = c.f64();
      p.beta = c.f64();
      p.r = c.f64();
      m.payload = p;
      break;
    }
    case 5: {
      m.type = MsgType::kActors;
      if (c.remaining() < 2)
        throw DecodeError(DecodeError::Reason::kMalformedPayload,
                          "actors: missing count");
      const std::uint16_t n = c.u16();
      expect_exact(static_cast<std::size_t>(n) * 36, "actors");
      ActorsPayload p;
      p.actors.reserve(n);
      for (std::uint16_t i = 0; i < n; ++i) {
        ActorRecord a;
        a.id = c.u32();
        a.x = c.f64();
        a.y = c.f64();
        a.heading = c.f64();
        a.speed = c.f64();
        for (const ActorRecord& prev : p.actors)
          if (prev.id == a.id)
            throw DecodeError(DecodeError::Reason::kMalformedPayload,
                              "actors: duplicate id");
        p.actors.push_back(a);
      }
      m.payload = std::move(p);
      break;
    }
    case 6:
      expect_exact(0, "heartbeat");
      m.type = MsgType::kHeartbeat;
      m.payload = HeartbeatPayload{};
      break;
    case 7: {
      expect_exact(1, "bye");
      m.type = MsgType::kBye;
      const std::uint8_t reason = c.u8();
      if (reason > 3)
        throw DecodeError(DecodeError::Reason::kMalformedPayload,
                          "bye: unknown reason code");
      m.payload = ByePayload{static_cast<ByeReason>(reason)};
      break;
    }
    case 8: {
      expect_exact(4, "cmd");
      m.type = MsgType::kCmd;
      CmdPayload p;
      p.action = static_cast<std::int32_t>(c.u32());
      m.payload = p;
      break;
    }
    default:
      throw DecodeError(DecodeError::Reason::kUnsupportedType,
                        "unknown message type " + std::to_string(raw_type));
  }
  return m;
}

inline WireMessage decode(const std::vector<std::uint8_t>& b) {
  return decode(b.data(), b.size());
}

// ---------------------------------------------------------------------------
// Planar frame mapping between the physical test area and the virtual world.

/// Normalize an angle to (-pi, pi].  In-range values pass through
/// bit-exactly (an identity mapping must not perturb the pose).
inline double wrap_pi(double a) {
  constexpr double pi = std::numbers::pi;
  if (a > -pi && a <= pi) return a;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a <= 0.0) a += 2.0 * pi;
  return a - pi;
}

/// Rigid mapping: rotate about the physical origin by theta0, then
/// translate into the virtual frame.
struct FrameTransform {
  double x0 = 0.0;       ///< physical-frame origin
  double y0 = 0.0;
  double theta0 = 0.0;   ///< physical-to-virtual rotation, (-pi, pi]
  double offset_x = 0.0; ///< virtual-frame translation
  double offset_y = 0.0;
};

inline PosePayload transform_pose(const PosePayload& p, const FrameTransform& t) {
  const double c = std::cos(t.theta0);
  const double s = std::sin(t.theta0);
  const double dx = p.x - t.x0;
  const double dy = p.y - t.y0;
  PosePayload out = p;
  out.x = c * dx - s * dy + t.offset_x;
  out.y = s * dx + c * dy + t.offset_y;
  out.psi = wrap_pi(p.psi + t.theta0);
  return out;
}

inline PosePayload inverse_transform(const PosePayload& p,
                                     const FrameTransform& t) {
  const double c = std::cos(t.theta0);
  const double s = std::sin(t.theta0);
  const double dx = p.x - t.offset_x;
  const double dy = p.y - t.offset_y;
  PosePayload out = p;
  out.x = c * dx + s * dy + t.x0;
  out.y = -s * dx + c * dy + t.y0;
  out.psi = wrap_pi(p.psi - t.theta0);
  return out;
}

} // namespace vve
