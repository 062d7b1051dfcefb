// Wire codec, frame transform, latency injection, and trace ingest.
#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "vve/latency.hpp"
#include "vve/protocol.hpp"
#include "vve/trace.hpp"

using namespace vve;

namespace {

std::string temp_file(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  out << content;
}

} // namespace

// ---------------------------------------------------------------------------
// Codec

TEST(Protocol, GoldenHeartbeatBytes) {
  // Hand-assembled from the layout: magic(4,LE) version(1) type(1)
  // pad(2) seq(4,LE) t_us(8,LE), no payload.
  WireMessage m;
  m.type = MsgType::kHeartbeat;
  m.seq = 0;
  m.t_us = 0;
  m.payload = HeartbeatPayload{};
  const std::vector<std::uint8_t> want = {
      0x31, 0x45, 0x56, 0x56, // magic 0x56564531 little-endian
      0x01,                   // protocol version
      0x06,                   // heartbeat
      0x00, 0x00,             // pad
      0x00, 0x00, 0x00, 0x00, // seq
      0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, // t_us
  };
  EXPECT_EQ(encode(m), want);
  EXPECT_EQ(want.size(), kHeaderBytes);
}

TEST(Protocol, CorruptedMagicIsRejected) {
  auto bytes = encode(WireMessage{});
  bytes[0] ^= 0xff;
  try {
    decode(bytes);
    FAIL() << "decode accepted a corrupted magic";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.reason(), DecodeError::Reason::kBadMagic);
  }
}

TEST(Protocol, TwoActorRoundTrip) {
  WireMessage m;
  m.type = MsgType::kActors;
  m.seq = 42;
  m.t_us = 123456789;
  ActorsPayload p;
  p.actors.push_back({1, 80.5, -1.25, 1.5707963267948966, 1.4});
  p.actors.push_back({2, 82.5, 0.75, -1.5707963267948966, 1.4});
  m.payload = p;
  EXPECT_EQ(decode(encode(m)), m);
}

TEST(Protocol, EncodeDecodeIdentityOnRandomMessages) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> val(-1e3, 1e3);
  std::uniform_int_distribution<int> kind(0, 7);
  std::uniform_int_distribution<std::uint32_t> seq(0, 0xffffffffu);
  std::uniform_int_distribution<int> nact(0, 5);
  for (int i = 0; i < 10000; ++i) {
    WireMessage m;
    m.seq = seq(rng);
    m.t_us = static_cast<std::uint64_t>(seq(rng)) << 16;
    switch (kind(rng)) {
      case 0:
        m.type = MsgType::kHello;
        m.payload = HelloPayload{};
        break;
      case 1:
        m.type = MsgType::kStart;
        m.payload = StartPayload{rng()};
        break;
      case 2:
        m.type = MsgType::kAck;
        m.payload = AckPayload{};
        break;
      case 3: {
        m.type = MsgType::kPose;
        m.payload = PosePayload{val(rng), val(rng), val(rng),
                                val(rng), val(rng), val(rng)};
        break;
      }
      case 4: {
        m.type = MsgType::kActors;
        ActorsPayload p;
        const int n = nact(rng);
        for (int a = 0; a < n; ++a)
          p.actors.push_back({static_cast<std::uint32_t>(a + 1), val(rng),
                              val(rng), val(rng), std::abs(val(rng))});
        m.payload = p;
        break;
      }
      case 5:
        m.type = MsgType::kHeartbeat;
        m.payload = HeartbeatPayload{};
        break;
      case 6:
        m.type = MsgType::kBye;
        m.payload = ByePayload{static_cast<ByeReason>(i % 4)};
        break;
      default:
        m.type = MsgType::kCmd;
        m.payload = CmdPayload{static_cast<std::int32_t>(rng())};
        break;
    }
    ASSERT_EQ(decode(encode(m)), m) << "message kind " << static_cast<int>(m.type);
  }
}

TEST(Protocol, FuzzDecodeTotality) {
  // Any byte buffer must produce either a message or a typed error —
  // never a crash, never an out-of-bounds read.
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> len(0, 200);
  std::uniform_int_distribution<int> byte(0, 255);
  std::vector<std::uint8_t> buf;
  int decoded = 0, rejected = 0;
  for (int i = 0; i < 1000000; ++i) {
    buf.resize(static_cast<std::size_t>(len(rng)));
    for (auto& b : buf) b = static_cast<std::uint8_t>(byte(rng));
    // Half the runs start from a valid header to reach deep payload paths.
    if (i % 2 == 0 && buf.size() >= 6) {
      buf[0] = 0x31;
      buf[1] = 0x45;
      buf[2] = 0x56;
      buf[3] = 0x56;
      buf[5] = static_cast<std::uint8_t>(1 + i % 8);
    }
    try {
      (void)decode(buf.data(), buf.size());
      ++decoded;
    } catch (const DecodeError&) {
      ++rejected;
    }
  }
  EXPECT_EQ(decoded + rejected, 1000000);
  EXPECT_GT(rejected, 0);
}

TEST(Protocol, StructuredMutationsGiveTypedErrors) {
  // Truncation at every length of a valid ACTORS message.
  WireMessage m;
  m.type = MsgType::kActors;
  ActorsPayload p;
  p.actors.push_back({1, 1.0, 2.0, 3.0, 4.0});
  p.actors.push_back({2, 5.0, 6.0, 7.0, 8.0});
  m.payload = p;
  const auto bytes = encode(m);
  for (std::size_t cut = 0; cut < bytes.size(); ++cut) {
    EXPECT_THROW((void)decode(bytes.data(), cut), DecodeError) << "cut=" << cut;
  }
  // Unknown type code.
  auto bad_type = bytes;
  bad_type[5] = 99;
  EXPECT_THROW((void)decode(bad_type), DecodeError);
  // Duplicate actor ids.
  auto dup = bytes;
  // Second record's id starts after header(20) + count(2) + one record(36).
  dup[20 + 2 + 36] = dup[20 + 2]; // copy first id byte; ids become equal
  dup[20 + 2 + 37] = dup[20 + 3];
  dup[20 + 2 + 38] = dup[20 + 4];
  dup[20 + 2 + 39] = dup[20 + 5];
  try {
    (void)decode(dup);
    FAIL() << "duplicate actor ids accepted";
  } catch (const DecodeError& e) {
    EXPECT_EQ(e.reason(), DecodeError::Reason::kMalformedPayload);
  }
  // Unknown BYE reason.
  WireMessage bye;
  bye.type = MsgType::kBye;
  bye.payload = ByePayload{ByeReason::kDone};
  auto bye_bytes = encode(bye);
  bye_bytes[20] = 200;
  EXPECT_THROW((void)decode(bye_bytes), DecodeError);
}

TEST(Protocol, NonFiniteOutboundPoseIsRejected) {
  WireMessage m;
  m.type = MsgType::kPose;
  m.payload = PosePayload{std::nan(""), 0, 0, 0, 0, 0};
  EXPECT_THROW((void)encode(m), InvalidInputError);
}

// ---------------------------------------------------------------------------
// Frame transform

TEST(Transform, QuarterTurn) {
  FrameTransform T;
  T.theta0 = std::numbers::pi / 2.0;
  const PosePayload in{1.0, 0.0, 0.0, 5.0, 0.01, 0.02};
  const PosePayload out = transform_pose(in, T);
  EXPECT_NEAR(out.x, 0.0, 1e-15);
  EXPECT_NEAR(out.y, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(out.psi, std::numbers::pi / 2.0);
  // Kinematic quantities ride along unchanged.
  EXPECT_EQ(out.v, in.v);
  EXPECT_EQ(out.beta, in.beta);
  EXPECT_EQ(out.r, in.r);
}

TEST(Transform, IdentityIsBitExact) {
  const FrameTransform T{};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pos(-500.0, 500.0);
  std::uniform_real_distribution<double> ang(-3.14159, 3.14159);
  for (int i = 0; i < 1000; ++i) {
    const PosePayload p{pos(rng), pos(rng), ang(rng), 15.0, 0.0, 0.0};
    const PosePayload q = transform_pose(p, T);
    EXPECT_EQ(q, p);
  }
}

TEST(Transform, RoundTripWithinTolerance) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> pos(-1000.0, 1000.0);
  std::uniform_real_distribution<double> ang(-std::numbers::pi,
                                             std::numbers::pi);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    FrameTransform T{pos(rng), pos(rng), ang(rng), pos(rng), pos(rng)};
    const PosePayload p{pos(rng), pos(rng), ang(rng), 10.0, 0.1, -0.2};
    const PosePayload q = inverse_transform(transform_pose(p, T), T);
    worst = std::max({worst, std::abs(q.x - p.x), std::abs(q.y - p.y)});
    const double dpsi = std::abs(wrap_pi(q.psi - p.psi));
    worst = std::max(worst, dpsi);
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Transform, WrapPiNormalizes) {
  constexpr double pi = std::numbers::pi;
  EXPECT_NEAR(wrap_pi(pi + 0.5), -pi + 0.5, 1e-12);
  EXPECT_NEAR(wrap_pi(-pi - 0.5), pi - 0.5, 1e-12);
  EXPECT_NEAR(wrap_pi(7.0 * pi), pi, 1e-12);
  // In-range values pass through bit-exactly.
  EXPECT_EQ(wrap_pi(0.25), 0.25);
  EXPECT_EQ(wrap_pi(pi), pi);
  EXPECT_EQ(wrap_pi(-3.1), -3.1);
}

// ---------------------------------------------------------------------------
// Latency model

TEST(Latency, SeededModelIsDeterministic) {
  LatencyModel a(5.0, 2.0, 0.3, 77);
  LatencyModel b(5.0, 2.0, 0.3, 77);
  for (int i = 0; i < 1000; ++i) {
    const auto da = a.sample();
    const auto db = b.sample();
    ASSERT_EQ(da.has_value(), db.has_value());
    if (da) ASSERT_EQ(*da, *db);
  }
}

TEST(Latency, RejectsInvalidParameters) {
  EXPECT_THROW(LatencyModel(-1.0, 0.0, 0.0, 1), InvalidInputError);
  EXPECT_THROW(LatencyModel(0.0, -1.0, 0.0, 1), InvalidInputError);
  EXPECT_THROW(LatencyModel(0.0, 0.0, 1.0, 1), InvalidInputError);
  EXPECT_THROW(LatencyModel(0.0, 0.0, 1.5, 1), InvalidInputError);
}

TEST(Latency, PassThroughModelDelaysNothing) {
  LatencyModel m(0.0, 0.0, 0.0, 1);
  EXPECT_TRUE(m.pass_through());
  for (int i = 0; i < 100; ++i) {
    const auto d = m.sample();
    ASSERT_TRUE(d.has_value());
    EXPECT_EQ(*d, 0.0);
  }
}

TEST(Latency, JitterStaysWithinBandAroundBase) {
  LatencyModel m(20.0, 5.0, 0.0, 9);
  for (int i = 0; i < 10000; ++i) {
    const auto d = m.sample();
    ASSERT_TRUE(d.has_value());
    EXPECT_GE(*d, 15.0);
    EXPECT_LE(*d, 25.0);
  }
}

TEST(Latency, QueueReleasesInOrderAndCountsDrops) {
  LatencyModel m(10.0, 9.0, 0.4, 123);
  DelayQueue<int> q;
  int pushed = 0, last_accepted = -1;
  for (int i = 0; i < 500; ++i)
    if (q.push(i, static_cast<double>(i), m)) {
      ++pushed;
      last_accepted = i;
    }
  EXPECT_EQ(pushed + static_cast<int>(q.dropped()), 500);
  EXPECT_GT(q.dropped(), 0u);

  // Releases must preserve push order even when sampled delays invert.
  double t = 0.0;
  int last = -1;
  while (q.pending() > 0) {
    t = q.next_release();
    while (auto item = q.pop_due(t)) {
      EXPECT_GT(*item, last);
      last = *item;
    }
  }
  EXPECT_EQ(last, last_accepted); // the queue never loses an accepted item
}

TEST(Latency, ConstantDelayShiftsReleaseTimes) {
  LatencyModel m(20.0, 0.0, 0.0, 5);
  DelayQueue<int> q;
  for (int i = 0; i < 10; ++i) {
    ASSERT_TRUE(q.push(i, i * 10.0, m));
  }
  for (int i = 0; i < 10; ++i) {
    EXPECT_EQ(q.next_release(), i * 10.0 + 20.0);
    ASSERT_TRUE(q.pop_due(q.next_release()).has_value());
  }
}

// ---------------------------------------------------------------------------
// Trace ingest

TEST(Trace, RoundTripPreservesValues) {
  const std::string path = temp_file("vve_trace_rt.csv");
  std::vector<TraceRow> rows = {
      {0, 0.0, 0.0, 0.0, 15.0},
      {10000, 0.15, -0.001, 0.0005, 15.0},
      {20000, 0.3, -0.002, 0.001, 14.99},
  };
  write_trace(path, rows);
  EXPECT_EQ(read_trace(path), rows);
}

TEST(Trace, RejectsBadHeader) {
  const std::string path = temp_file("vve_trace_hdr.csv");
  write_file(path, "time,x,y,psi,v\n0,0,0,0,0\n");
  try {
    (void)read_trace(path);
    FAIL() << "bad header accepted";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.line(), 1u);
  }
}

TEST(Trace, RejectsMalformedRowsWithLineNumbers) {
  const std::string path = temp_file("vve_trace_bad.csv");
  write_file(path, "t_us,x,y,psi,v\n0,0,0,0,15\nabc,1,0,0,15\n");
  try {
    (void)read_trace(path);
    FAIL() << "bad timestamp accepted";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.line(), 3u);
  }

  write_file(path, "t_us,x,y,psi,v\n0,0,0,0,15\n5000,nan,0,0,15\n");
  EXPECT_THROW((void)read_trace(path), IngestError);

  write_file(path, "t_us,x,y,psi,v\n0,0,0,0,15\n5000,1,0,0\n");
  EXPECT_THROW((void)read_trace(path), IngestError);
}

TEST(Trace, RejectsDecreasingTimestamps) {
  const std::string path = temp_file("vve_trace_order.csv");
  write_file(path, "t_us,x,y,psi,v\n100,0,0,0,15\n50,1,0,0,15\n");
  try {
    (void)read_trace(path);
    FAIL() << "decreasing timestamps accepted";
  } catch (const IngestError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Trace, EmptyBodyIsAValidTrace) {
  const std::string path = temp_file("vve_trace_empty.csv");
  write_file(path, "t_us,x,y,psi,v\n");
  EXPECT_TRUE(read_trace(path).empty());
}
