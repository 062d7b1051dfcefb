// UDP session layer: handshake, lockstep mirroring, free-running streams,
// and the link's loss/ordering accounting.  Each test uses its own port
// pair so they can run in one process without rebinding races.
#include <gtest/gtest.h>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vve/config.hpp"
#include "vve/net.hpp"
#include "vve/observation.hpp"
#include "vve/runner.hpp"
#include "vve/session.hpp"
#include "vve/udp.hpp"

using namespace vve;

namespace {

Config link_config(int env_port, int ctl_port) {
  Config cfg;
  cfg.link.environment_port = env_port;
  cfg.link.controller_port = ctl_port;
  cfg.link.handshake_timeout_ms = 8000.0;
  cfg.link.step_timeout_ms = 8000.0;
  return cfg;
}

std::string fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir.string();
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write a policy that always picks `action`: zero weights everywhere and
/// a one-hot output bias, so argmax is constant for every observation.
std::string write_constant_policy(const Config& cfg, int action,
                                  const std::string& path) {
  NetworkSpec spec;
  spec.grid_dim = cfg.agent.grid_rows * cfg.agent.grid_cols;
  spec.fusion_dim = fusion_feature_count(cfg.scenario.ped_count);
  QNetwork net(spec);
  net.b5(action) = 1.0;
  net.save(path);
  return path;
}

/// Run `fn` on a thread, capturing any exception for the joining test.
class Worker {
public:
  template <typename F>
  explicit Worker(F fn)
      : thread_([this, fn = std::move(fn)] {
          try {
            fn();
          } catch (...) {
            error_ = std::current_exception();
          }
        }) {}

  void join_and_rethrow() {
    thread_.join();
    if (error_) std::rethrow_exception(error_);
  }

  /// Join and return the captured exception instead of throwing.
  std::exception_ptr join_and_take() {
    thread_.join();
    return error_;
  }

private:
  std::exception_ptr error_;
  std::thread thread_;
};

WireMessage recv_decoded(UdpSocket& sock, int timeout_ms) {
  const double deadline = mono_seconds() + timeout_ms / 1000.0;
  while (mono_seconds() < deadline) {
    sock.wait_readable(20);
    if (auto bytes = sock.recv()) return decode(*bytes);
  }
  throw std::runtime_error("no datagram within the test deadline");
}

} // namespace

TEST(Handshake, NominalBothSidesAgree) {
  const Config cfg = link_config(47110, 47111);
  Link env_link(cfg, true);
  Link ctl_link(cfg, false);

  Worker env([&] { handshake_environment(env_link, cfg); });
  StartPayload start{};
  Worker ctl([&] { start = handshake_controller(ctl_link, cfg); });
  env.join_and_rethrow();
  ctl.join_and_rethrow();

  EXPECT_EQ(start.config_hash, config_hash(cfg));
  EXPECT_GE(env_link.stats().sent, 1u);
  EXPECT_GE(ctl_link.stats().received, 1u);
}

TEST(Handshake, ControllerTimesOutWithoutEnvironment) {
  Config cfg = link_config(47112, 47113);
  cfg.link.handshake_timeout_ms = 300.0;
  Link ctl_link(cfg, false);
  EXPECT_THROW((void)handshake_controller(ctl_link, cfg), LinkError);
}

TEST(Handshake, VersionMismatchIsRefusedWithIncompatibleBye) {
  const Config cfg = link_config(47114, 47115);
  Link env_link(cfg, true);
  Worker env([&] { handshake_environment(env_link, cfg); });

  UdpSocket probe;
  probe.bind(cfg.link.bind_address,
             static_cast<std::uint16_t>(cfg.link.controller_port));
  probe.set_peer(cfg.link.bind_address,
                 static_cast<std::uint16_t>(cfg.link.environment_port));
  WireMessage hello;
  hello.type = MsgType::kHello;
  hello.payload = HelloPayload{};
  auto bytes = encode(hello);
  bytes[4] = 2; // a protocol revision this build does not speak
  probe.send(bytes);

  const WireMessage reply = recv_decoded(probe, 2000);
  ASSERT_EQ(reply.type, MsgType::kBye);
  EXPECT_EQ(std::get<ByePayload>(reply.payload).reason,
            ByeReason::kIncompatible);

  const std::exception_ptr err = env.join_and_take();
  ASSERT_TRUE(err);
  EXPECT_THROW(std::rethrow_exception(err), LinkError);
}

TEST(Handshake, RetransmittedStartIsToleratedUntilAck) {
  const Config cfg = link_config(47116, 47117);
  Link env_link(cfg, true);
  Worker env([&] { handshake_environment(env_link, cfg); });

  UdpSocket probe;
  probe.bind(cfg.link.bind_address,
             static_cast<std::uint16_t>(cfg.link.controller_port));
  probe.set_peer(cfg.link.bind_address,
                 static_cast<std::uint16_t>(cfg.link.environment_port));
  WireMessage hello;
  hello.type = MsgType::kHello;
  hello.payload = HelloPayload{};
  probe.send(encode(hello));

  // Withhold the ACK until the environment has retransmitted START,
  // as it must when the first START (or our ACK) goes missing.
  int starts = 0;
  while (starts < 2) {
    const WireMessage m = recv_decoded(probe, 4000);
    if (m.type == MsgType::kStart) {
      EXPECT_EQ(std::get<StartPayload>(m.payload).config_hash,
                config_hash(cfg));
      ++starts;
    }
  }
  WireMessage ack;
  ack.type = MsgType::kAck;
  ack.payload = AckPayload{};
  probe.send(encode(ack));

  env.join_and_rethrow(); // completes despite the delayed ACK
}

TEST(Handshake, ConfigurationMismatchAbortsBothSides) {
  Config env_cfg = link_config(47118, 47119);
  env_cfg.link.handshake_timeout_ms = 1500.0;
  Config ctl_cfg = env_cfg;
  ctl_cfg.scenario.v_set = 13.0; // any divergent tunable must be fatal

  Link env_link(env_cfg, true);
  Link ctl_link(ctl_cfg, false);
  Worker env([&] { handshake_environment(env_link, env_cfg); });
  Worker ctl([&] { (void)handshake_controller(ctl_link, ctl_cfg); });

  const std::exception_ptr ctl_err = ctl.join_and_take();
  const std::exception_ptr env_err = env.join_and_take();
  ASSERT_TRUE(ctl_err);
  try {
    std::rethrow_exception(ctl_err);
    FAIL() << "controller accepted a mismatched configuration";
  } catch (const LinkError& e) {
    EXPECT_NE(std::string(e.what()).find("configuration mismatch"),
              std::string::npos);
  }
  // The environment never hears a valid ACK and must give up too.
  ASSERT_TRUE(env_err);
  EXPECT_THROW(std::rethrow_exception(env_err), LinkError);
}

TEST(Session, LockstepRunIsBitIdenticalToSingleProcess) {
  const Config cfg = link_config(47120, 47121);
  const std::uint64_t seed = 7;
  const std::string root = fresh_dir("vve_link_lockstep");
  const std::string model =
      write_constant_policy(cfg, 0, root + "/policy.json");
  const std::string ref_dir = root + "/ref";
  const std::string env_dir = root + "/env";
  const std::string ctl_dir = root + "/ctl";

  mil_eval(cfg, seed, model, 1, ref_dir);

  Worker env([&] { hil_run_environment(cfg, seed, model, env_dir); });
  Worker ctl([&] { hil_run_controller(cfg, seed, model, ctl_dir); });
  env.join_and_rethrow();
  ctl.join_and_rethrow();

  const std::string hil_metrics = slurp(env_dir + "/metrics.csv");
  const std::string ref_metrics = slurp(ref_dir + "/metrics_ep0001.csv");
  ASSERT_FALSE(hil_metrics.empty());
  EXPECT_EQ(hil_metrics, ref_metrics);

  const auto deviation =
      nlohmann::json::parse(slurp(env_dir + "/deviation.json"));
  EXPECT_TRUE(deviation.at("bit_identical").get<bool>());
  EXPECT_EQ(deviation.at("rms_position_m").get<double>(), 0.0);

  const auto manifest =
      nlohmann::json::parse(slurp(env_dir + "/manifest.json"));
  EXPECT_EQ(manifest.at("status").get<std::string>(), "ok");
  const auto ctl_manifest =
      nlohmann::json::parse(slurp(ctl_dir + "/manifest.json"));
  EXPECT_EQ(ctl_manifest.at("status").get<std::string>(), "ok");
}

TEST(Session, LockstepSurvivesInjectedLatency) {
  Config cfg = link_config(47122, 47123);
  cfg.link.latency_base_ms = 2.0;
  cfg.link.latency_jitter_ms = 1.0;
  const std::uint64_t seed = 11;
  const std::string root = fresh_dir("vve_link_latency");
  const std::string model =
      write_constant_policy(cfg, 0, root + "/policy.json");

  Worker env([&] { hil_run_environment(cfg, seed, model, root + "/env"); });
  Worker ctl([&] { hil_run_controller(cfg, seed, model, root + "/ctl"); });
  env.join_and_rethrow();
  ctl.join_and_rethrow();

  // Latency delays delivery but must not change the mirrored trajectory.
  const auto deviation =
      nlohmann::json::parse(slurp(root + "/env/deviation.json"));
  EXPECT_TRUE(deviation.at("bit_identical").get<bool>());
}

TEST(Session, FreeRunningSessionCompletesAnEpisode) {
  Config cfg = link_config(47124, 47125);
  cfg.link.mode = "free";
  cfg.link.time_scale = 20.0;
  cfg.link.latency_base_ms = 1.0;
  cfg.link.latency_jitter_ms = 0.5;
  cfg.link.heartbeat_timeout_ms = 3000.0;
  const std::uint64_t seed = 3;
  const std::string root = fresh_dir("vve_link_free");
  const std::string model =
      write_constant_policy(cfg, 0, root + "/policy.json");

  Worker env([&] { hil_run_environment(cfg, seed, "", root + "/env"); });
  Worker ctl([&] { hil_run_controller(cfg, seed, model, root + "/ctl"); });
  env.join_and_rethrow();
  ctl.join_and_rethrow();

  const auto manifest =
      nlohmann::json::parse(slurp(root + "/env/manifest.json"));
  EXPECT_EQ(manifest.at("status").get<std::string>(), "ok");
  EXPECT_EQ(manifest.at("mode").get<std::string>(), "free");
  EXPECT_GT(manifest.at("episode").at("steps").get<int>(), 1);

  // The trace must cover the episode: one row per agent step plus the
  // terminal pose.
  const auto trace = read_trace(root + "/env/trace.csv");
  EXPECT_GT(trace.size(), 2u);
}

TEST(Session, PeerSilenceInFreeModeFailsWithPartialOutputs) {
  Config cfg = link_config(47126, 47127);
  cfg.link.mode = "free";
  cfg.link.time_scale = 4.0;
  cfg.link.handshake_timeout_ms = 4000.0;
  cfg.link.heartbeat_timeout_ms = 250.0;
  const std::string root = fresh_dir("vve_link_silence");

  // A bare handshake peer that goes silent right after ACK.
  Worker ctl([&] {
    Link ctl_link(cfg, false);
    (void)handshake_controller(ctl_link, cfg);
  });

  try {
    hil_run_environment(cfg, 5, "", root + "/env");
    FAIL() << "environment kept running without a live peer";
  } catch (const LinkError& e) {
    EXPECT_NE(std::string(e.what()).find("heartbeat"), std::string::npos);
  }
  ctl.join_and_rethrow();

  const auto manifest =
      nlohmann::json::parse(slurp(root + "/env/manifest.json"));
  EXPECT_EQ(manifest.at("status").get<std::string>(), "failed");
  EXPECT_FALSE(manifest.at("failure_cause").get<std::string>().empty());
}

TEST(Link, SequenceAccountingCountsGapsAndStaleness) {
  LatencyModel pass(0.0, 0.0, 0.0, 1);
  Link rx("127.0.0.1", 47128, true, pass);
  UdpSocket tx;
  tx.bind("127.0.0.1", 0);
  tx.set_peer("127.0.0.1", 47128);

  auto cmd_bytes = [](std::uint32_t seq) {
    WireMessage m;
    m.type = MsgType::kCmd;
    m.seq = seq;
    m.payload = CmdPayload{2};
    return encode(m);
  };

  tx.send(cmd_bytes(0));
  auto first = rx.recv_wait(1000);
  ASSERT_TRUE(first.has_value());
  EXPECT_EQ(first->seq, 0u);

  tx.send(cmd_bytes(5)); // datagrams 1..4 presumed lost
  auto second = rx.recv_wait(1000);
  ASSERT_TRUE(second.has_value());
  EXPECT_EQ(second->seq, 5u);
  EXPECT_EQ(rx.stats().seq_gaps, 4u);

  tx.send(cmd_bytes(3)); // late arrival: freshest-wins discards it
  EXPECT_FALSE(rx.recv_wait(150).has_value());
  EXPECT_EQ(rx.stats().stale_dropped, 1u);
  EXPECT_EQ(rx.stats().received, 2u);
}

TEST(Link, UndecodableDatagramsAreCountedNotFatal) {
  LatencyModel pass(0.0, 0.0, 0.0, 1);
  Link rx("127.0.0.1", 47129, true, pass);
  UdpSocket tx;
  tx.bind("127.0.0.1", 0);
  tx.set_peer("127.0.0.1", 47129);

  tx.send({'n', 'o', 't', ' ', 'a', ' ', 'f', 'r', 'a', 'm', 'e'});
  EXPECT_FALSE(rx.recv_wait(150).has_value());
  EXPECT_EQ(rx.stats().bad_datagrams, 1u);
  EXPECT_EQ(rx.stats().received, 0u);

  // A valid message after garbage still gets through.
  WireMessage hb;
  hb.type = MsgType::kHeartbeat;
  tx.send(encode(hb));
  auto m = rx.recv_wait(1000);
  ASSERT_TRUE(m.has_value());
  EXPECT_EQ(m->type, MsgType::kHeartbeat);
}
