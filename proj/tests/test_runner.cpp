// End-to-end command behavior through the library entry points: training
// artifacts, evaluation summaries, trace replay, and run manifests.
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vve/agent.hpp"
#include "vve/config.hpp"
#include "vve/csv.hpp"
#include "vve/net.hpp"
#include "vve/observation.hpp"
#include "vve/runner.hpp"
#include "vve/trace.hpp"

using namespace vve;

namespace {

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

nlohmann::json load_json(const std::string& path) {
  return nlohmann::json::parse(slurp(path));
}

Config tiny_training_config() {
  Config cfg;
  cfg.agent.episodes = 3;
  cfg.agent.buffer_capacity = 2000;
  cfg.agent.batch_size = 16;
  cfg.agent.eps_horizon = 2000;
  return cfg;
}

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

/// Straight-line constant-speed trace along +x at `hz` samples per second.
std::vector<TraceRow> straight_trace(double speed, double seconds, double hz) {
  std::vector<TraceRow> rows;
  const std::uint64_t step_us =
      static_cast<std::uint64_t>(std::llround(1e6 / hz));
  const auto n = static_cast<std::size_t>(seconds * hz) + 1;
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint64_t t_us = i * step_us;
    rows.push_back({t_us, speed * static_cast<double>(t_us) * 1e-6, 0.0, 0.0,
                    speed});
  }
  return rows;
}

} // namespace

// ---------------------------------------------------------------------------
// mil-train

TEST(MilTrain, SameSeedProducesIdenticalArtifacts) {
  const Config cfg = tiny_training_config();
  const std::string a = fresh_dir("vve_run_train_a");
  const std::string b = fresh_dir("vve_run_train_b");
  mil_train(cfg, 42, a);
  mil_train(cfg, 42, b);

  const std::string log_a = slurp(a + "/episodes.csv");
  EXPECT_FALSE(log_a.empty());
  EXPECT_EQ(log_a, slurp(b + "/episodes.csv"));
  EXPECT_EQ(slurp(a + "/model.json"), slurp(b + "/model.json"));

  const auto rows = read_csv(a + "/episodes.csv", episode_log_header());
  EXPECT_EQ(rows.size(), 3u);
  const auto manifest = load_json(a + "/manifest.json");
  EXPECT_EQ(manifest.at("status"), "ok");
  EXPECT_EQ(manifest.at("command"), "mil-train");
  EXPECT_EQ(manifest.at("seed").get<std::uint64_t>(), 42u);
  EXPECT_EQ(manifest.at("episodes_run").get<int>(), 3);
}

TEST(MilTrain, DifferentSeedsDiverge) {
  const Config cfg = tiny_training_config();
  const std::string a = fresh_dir("vve_run_seed_a");
  const std::string b = fresh_dir("vve_run_seed_b");
  mil_train(cfg, 1, a);
  mil_train(cfg, 2, b);
  EXPECT_NE(slurp(a + "/episodes.csv"), slurp(b + "/episodes.csv"));
}

TEST(MilTrain, ZeroEpisodesYieldsEmptyLogAndLoadableModel) {
  Config cfg = tiny_training_config();
  cfg.agent.episodes = 0;
  const std::string dir = fresh_dir("vve_run_train0");
  mil_train(cfg, 9, dir);

  EXPECT_TRUE(read_csv(dir + "/episodes.csv", episode_log_header()).empty());
  const QNetwork net = QNetwork::load(dir + "/model.json");
  EXPECT_EQ(net.spec().grid_dim, cfg.agent.grid_rows * cfg.agent.grid_cols);
  EXPECT_EQ(load_json(dir + "/manifest.json").at("status"), "ok");
}

// ---------------------------------------------------------------------------
// mil-eval

TEST(MilEval, HardBrakePolicyStopsShortOfTheCrosswalk) {
  const Config cfg;
  const std::string dir = fresh_dir("vve_run_eval_brake");
  const std::string model = write_constant_policy(cfg, 0, dir + "/policy.json");
  mil_eval(cfg, 21, model, 2, dir);

  const auto summary = load_json(dir + "/summary.json");
  const auto& agg = summary.at("aggregate");
  EXPECT_EQ(agg.at("episodes").get<int>(), 2);
  EXPECT_EQ(agg.at("stopped_before_crosswalk").get<int>(), 2);
  EXPECT_EQ(agg.at("collisions").get<int>(), 0);
  ASSERT_EQ(summary.at("episodes").size(), 2u);
  for (const auto& ep : summary.at("episodes")) {
    EXPECT_EQ(ep.at("terminal").get<std::string>(), "stopped");
    EXPECT_LT(ep.at("final_speed").get<double>(), 0.1);
  }

  // The per-step metrics parse back against the published header.
  const auto rows = read_csv(dir + "/metrics_ep0001.csv",
                             metrics_header(cfg.scenario.ped_count));
  ASSERT_FALSE(rows.empty());
  // Speed column starts at the initial speed and ends near zero.
  EXPECT_LT(std::strtod(rows.back()[4].c_str(), nullptr), 0.5);
}

TEST(MilEval, HoldSpeedThroughOccupiedCrosswalkCollides) {
  Config cfg;
  // Pin the pedestrians to a short patrol in the lane so ignoring them
  // is guaranteed to end in a collision.
  cfg.scenario.ped_patrol_half_span = 0.5;
  cfg.scenario.ped_speed = 0.1;
  const std::string dir = fresh_dir("vve_run_eval_collide");
  const std::string model = write_constant_policy(cfg, 4, dir + "/policy.json");
  mil_eval(cfg, 21, model, 1, dir);

  const auto summary = load_json(dir + "/summary.json");
  const auto& agg = summary.at("aggregate");
  EXPECT_EQ(agg.at("collisions").get<int>(), 1);
  EXPECT_EQ(agg.at("stopped_before_crosswalk").get<int>(), 0);
  // Driving into an occupied crosswalk must pass through the red band.
  EXPECT_GT(agg.at("red_steps_total").get<int>(), 0);
  EXPECT_EQ(summary.at("episodes")[0].at("terminal").get<std::string>(),
            "collision");
}

TEST(MilEval, EvaluationEpisodesAreReproducible) {
  const Config cfg;
  const std::string dir = fresh_dir("vve_run_eval_repro");
  const std::string model = write_constant_policy(cfg, 0, dir + "/policy.json");
  mil_eval(cfg, 5, model, 1, dir + "/a");
  mil_eval(cfg, 5, model, 1, dir + "/b");
  EXPECT_EQ(slurp(dir + "/a/metrics_ep0001.csv"),
            slurp(dir + "/b/metrics_ep0001.csv"));
}

TEST(MilEval, RejectsModelBuiltForADifferentLayout) {
  const Config cfg;
  const std::string dir = fresh_dir("vve_run_eval_badmodel");
  const std::string model = write_constant_policy(cfg, 0, dir + "/policy.json");
  Config other = cfg;
  other.agent.grid_rows = 16; // half-size grid: incompatible input layer
  EXPECT_THROW(mil_eval(other, 1, model, 1, dir + "/out"),
               ModelIncompatibleError);
}

TEST(MilEval, RejectsNonPositiveEpisodeCount) {
  const Config cfg;
  const std::string dir = fresh_dir("vve_run_eval_zero");
  const std::string model = write_constant_policy(cfg, 0, dir + "/policy.json");
  EXPECT_THROW(mil_eval(cfg, 1, model, 0, dir + "/out"), ConfigError);
}

TEST(Seeding, EvaluationStreamIsDisjointFromTraining) {
  // A model must never be evaluated on the very layouts it trained on.
  std::set<std::uint64_t> train_seeds;
  for (int ep = 1; ep <= 2000; ++ep)
    train_seeds.insert(mix_seed(42, 100 + static_cast<std::uint64_t>(ep)));
  std::set<std::uint64_t> eval_seeds;
  for (int ep = 1; ep <= 100; ++ep) {
    const std::uint64_t s = eval_episode_seed(42, ep);
    EXPECT_FALSE(train_seeds.count(s)) << "episode " << ep;
    eval_seeds.insert(s);
  }
  EXPECT_EQ(eval_seeds.size(), 100u); // and distinct among themselves
}

// ---------------------------------------------------------------------------
// deviation report

TEST(Deviation, FlagsDivergenceBetweenMetricsFiles) {
  const std::string dir = fresh_dir("vve_run_deviation");
  const auto header = metrics_header(0);
  auto write_metrics = [&](const std::string& name, double x1) {
    CsvWriter w(dir + "/" + name, header);
    w.row({"0.05", "0.75", "0", "0", "15", "15", "0", "0", "2", "0.1"});
    w.row({"0.1", csv_double(x1), "0", "0", "15", "15", "0", "0", "2", "0.1"});
  };
  write_metrics("self.csv", 1.5);
  write_metrics("ref.csv", 1.25);

  const auto report = deviation_report(dir + "/self.csv", dir + "/ref.csv", 0);
  EXPECT_FALSE(report.at("bit_identical").get<bool>());
  EXPECT_EQ(report.at("steps_compared").get<int>(), 2);
  EXPECT_DOUBLE_EQ(report.at("max_abs_dx_m").get<double>(), 0.25);
  EXPECT_DOUBLE_EQ(report.at("max_abs_dy_m").get<double>(), 0.0);

  const auto same = deviation_report(dir + "/self.csv", dir + "/self.csv", 0);
  EXPECT_TRUE(same.at("bit_identical").get<bool>());
  EXPECT_EQ(same.at("rms_position_m").get<double>(), 0.0);
}

// ---------------------------------------------------------------------------
// vve-replay

TEST(Replay, IdentityChannelReproducesTheTraceExactly) {
  const Config cfg; // zero latency, identity frame
  const std::string dir = fresh_dir("vve_run_replay_id");
  const auto rows = straight_trace(15.0, 3.0, 100.0);
  write_trace(dir + "/trace.csv", rows);

  const ReplayOutcome out = vve_replay(cfg, dir + "/trace.csv", dir, "max");
  EXPECT_EQ(out.rows, rows.size());
  EXPECT_EQ(out.applied, rows.size());
  EXPECT_EQ(out.dropped, 0u);
  EXPECT_DOUBLE_EQ(out.span_s, 3.0);
  EXPECT_EQ(out.rms_m, 0.0);
  EXPECT_EQ(out.max_m, 0.0);

  // With no impairment and no frame change the virtual trajectory is the
  // input trace, value for value.
  EXPECT_EQ(read_trace(dir + "/virtual.csv"), rows);

  const auto overlap = load_json(dir + "/overlap.json");
  EXPECT_EQ(overlap.at("rms_m").get<double>(), 0.0);
  EXPECT_EQ(overlap.at("pacing").get<std::string>(), "max");
}

TEST(Replay, AppliesTheConfiguredFrameMapping) {
  Config cfg;
  cfg.link.frame_theta0 = std::numbers::pi / 2.0;
  cfg.link.frame_offset_x = 100.0;
  cfg.link.frame_offset_y = -50.0;
  const std::string dir = fresh_dir("vve_run_replay_frame");
  const auto rows = straight_trace(10.0, 1.0, 50.0);
  write_trace(dir + "/trace.csv", rows);

  const ReplayOutcome out = vve_replay(cfg, dir + "/trace.csv", dir, "max");
  EXPECT_EQ(out.rms_m, 0.0); // error is measured in the mapped frame

  const FrameTransform T{0.0, 0.0, std::numbers::pi / 2.0, 100.0, -50.0};
  const auto virt = read_trace(dir + "/virtual.csv");
  ASSERT_EQ(virt.size(), rows.size());
  for (std::size_t i = 0; i < rows.size(); i += 10) {
    const PosePayload want =
        transform_pose({rows[i].x, rows[i].y, rows[i].psi, rows[i].v, 0, 0}, T);
    EXPECT_EQ(virt[i].x, want.x);
    EXPECT_EQ(virt[i].y, want.y);
    EXPECT_EQ(virt[i].psi, want.psi);
  }
}

TEST(Replay, ConstantLatencyShiftsTheTrajectoryByItsTravel) {
  Config cfg;
  cfg.link.latency_base_ms = 20.0;
  const double speed = 15.0;
  const std::string dir = fresh_dir("vve_run_replay_lat");
  write_trace(dir + "/trace.csv", straight_trace(speed, 3.0, 100.0));

  const ReplayOutcome out = vve_replay(cfg, dir + "/trace.csv", dir, "max");
  EXPECT_EQ(out.applied, out.rows);
  // Every pose arrives 20 ms stale; at constant speed that is a constant
  // 0.3 m positional lag.
  EXPECT_NEAR(out.max_m, speed * 0.020, 1e-9);
  EXPECT_GT(out.rms_m, 0.0);
  EXPECT_LE(out.rms_m, out.max_m);
}

TEST(Replay, DropInjectionIsAccountedAndDeterministic) {
  Config cfg;
  cfg.link.latency_base_ms = 5.0;
  cfg.link.drop_prob = 0.3;
  cfg.link.latency_seed = 77;
  const std::string dir = fresh_dir("vve_run_replay_drop");
  write_trace(dir + "/trace.csv", straight_trace(12.0, 2.0, 100.0));

  const ReplayOutcome a = vve_replay(cfg, dir + "/trace.csv", dir + "/a", "max");
  EXPECT_EQ(a.applied + a.dropped, a.rows);
  EXPECT_GT(a.dropped, 0u);
  EXPECT_GT(a.applied, 0u);

  const ReplayOutcome b = vve_replay(cfg, dir + "/trace.csv", dir + "/b", "max");
  EXPECT_EQ(a.applied, b.applied);
  EXPECT_EQ(a.dropped, b.dropped);
  EXPECT_EQ(a.rms_m, b.rms_m);
  EXPECT_EQ(slurp(dir + "/a/virtual.csv"), slurp(dir + "/b/virtual.csv"));
}

TEST(Replay, EmptyTraceCompletesWithZeroRows) {
  const Config cfg;
  const std::string dir = fresh_dir("vve_run_replay_empty");
  write_trace(dir + "/trace.csv", {});
  const ReplayOutcome out = vve_replay(cfg, dir + "/trace.csv", dir, "max");
  EXPECT_EQ(out.rows, 0u);
  EXPECT_EQ(out.applied, 0u);
  EXPECT_EQ(out.rms_m, 0.0);
  EXPECT_TRUE(read_trace(dir + "/virtual.csv").empty());
}

TEST(Replay, RejectsUnknownPacing) {
  const Config cfg;
  const std::string dir = fresh_dir("vve_run_replay_pacing");
  write_trace(dir + "/trace.csv", straight_trace(1.0, 0.1, 100.0));
  EXPECT_THROW((void)vve_replay(cfg, dir + "/trace.csv", dir, "turbo"),
               ConfigError);
}

// ---------------------------------------------------------------------------
// manifests

TEST(Manifest, RecordsCommandSeedConfigAndOutputs) {
  Config cfg;
  cfg.link.latency_seed = 123;
  const std::string dir = fresh_dir("vve_run_manifest");
  write_trace(dir + "/trace.csv", straight_trace(5.0, 0.5, 100.0));
  (void)vve_replay(cfg, dir + "/trace.csv", dir, "max");

  const auto m = load_json(dir + "/manifest.json");
  EXPECT_EQ(m.at("command"), "vve-replay");
  EXPECT_EQ(m.at("status"), "ok");
  EXPECT_EQ(m.at("seed").get<std::uint64_t>(), 123u);
  EXPECT_FALSE(m.at("version").get<std::string>().empty());
  EXPECT_FALSE(m.at("started_at").get<std::string>().empty());
  EXPECT_FALSE(m.at("finished_at").get<std::string>().empty());
  const auto& outputs = m.at("outputs");
  EXPECT_NE(std::find(outputs.begin(), outputs.end(), "virtual.csv"),
            outputs.end());
  // The configuration snapshot reflects the values the run actually used.
  EXPECT_EQ(m.at("config").at("link").at("latency_seed").get<std::uint64_t>(),
            123u);
}
