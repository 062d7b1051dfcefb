#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "vve/errors.hpp"

namespace vve {

/// Chassis parameters of the single-track model.
struct VehicleParams {
  double m = 1500.0;        ///< mass [kg]
  double l_f = 1.2;         ///< CG to front axle [m]
  double l_r = 1.5;         ///< CG to rear axle [m]
  double i_z = 2500.0;      ///< yaw inertia [kg m^2]
  double drag_coeff = 0.38; ///< aerodynamic term of road load [N s^2/m^2]
  double roll_coeff = 0.01; ///< rolling-resistance coefficient [-]
  double v_eps = 0.5;       ///< speed below which slip-angle math degenerates [m/s]

  double wheelbase() const { return l_f + l_r; }
};

/// Combined-slip tire parameters (shared by both axles).
struct TireParams {
  double c_x = 80000.0;  ///< longitudinal slip stiffness [N]
  double c_y = 50000.0;  ///< cornering stiffness [N/rad]
  double mu = 0.9;       ///< road friction coefficient [-]
  double s_clamp = 0.99; ///< |slip ratio| clamp to keep 1/(1-s) finite
  double slip_eps = 1e-6; ///< dead-zone threshold on the combined slip norm
  bool literal_g = false; ///< evaluate weighting polynomials with signed slip
                          ///< (asymmetric legacy form) instead of magnitudes
};

/// Wheel rotational dynamics parameters (per axle; front == rear by default).
struct WheelParams {
  double radius = 0.3;           ///< effective rolling radius [m]
  double inertia = 1.2;          ///< spin inertia of one axle [kg m^2]
  double v_slip_eps = 6.0;       ///< floor of the slip-ratio denominator [m/s]
  double brake_taper_omega = 3.0; ///< |omega| below which brake torque tapers [rad/s]
};

/// Crosswalk scenario layout and driving task parameters.
struct ScenarioParams {
  double lane_length = 120.0;      ///< straight lane length [m]
  double zone_entry = 80.0;        ///< distance from start to crosswalk entry [m]
  double zone_depth = 4.0;         ///< crosswalk extent along the lane [m]
  double zone_half_width = 2.0;    ///< crosswalk half width across the lane [m]
  double waypoint_spacing = 5.0;   ///< centerline waypoint spacing [m]
  int ped_count = 2;               ///< number of patrolling pedestrians
  double ped_speed = 1.4;          ///< pedestrian walking speed [m/s]
  double ped_patrol_half_span = 8.0; ///< patrol segment half length [m]
  double ped_radius = 0.35;        ///< pedestrian footprint radius [m]
  double v_set = 15.0;             ///< set speed of the ego vehicle [m/s]
  double v0 = 15.0;                ///< initial ego speed at episode start [m/s]
  double stop_margin = 3.0;        ///< desired stop distance short of the zone [m]
  double duration_max = 30.0;      ///< episode time limit [s]
  double ego_half_length = 2.3;    ///< ego collision footprint half length [m]
  double ego_half_width = 0.9;     ///< ego collision footprint half width [m]
  double lookahead_min = 5.0;      ///< pure-pursuit minimum lookahead [m]
  double lookahead_gain = 0.5;     ///< pure-pursuit speed gain [s]
  double steer_max = 0.5;          ///< steering angle clamp [rad]
};

/// Learning, reward, and simulation-stepping parameters.
struct AgentParams {
  double gamma = 0.99;
  std::uint64_t buffer_capacity = 100000;
  int batch_size = 64;
  int training_frequency = 4;  ///< environment steps between gradient updates
  int target_sync = 1000;      ///< environment steps between target-net copies
  double eps_start = 1.0;
  double eps_end = 0.05;
  std::uint64_t eps_horizon = 50000; ///< steps to anneal epsilon over
  int episodes = 1500;
  double lr = 1e-4;
  double momentum = 0.9;
  double grad_clip = 10.0;
  double w_v = 0.5;          ///< speed-tracking reward weight
  double w_j = 0.05;         ///< jerk (demand change) penalty weight
  double p_collision = 10.0; ///< collision penalty
  double b_stop = 2.0;       ///< compliant-stop bonus
  double w_ttz = 2.0;        ///< near-red time-to-zone penalty weight
  double ttz_penalty_threshold = 2.5; ///< both-TTZ threshold for that penalty [s]
  double dt_agent = 0.05;    ///< decision period [s]
  double dt_dynamics = 0.001; ///< integrator substep [s]
  std::string integrator = "rk4"; ///< "rk4" or "euler"
  int grid_rows = 32;        ///< occupancy grid rows (forward)
  int grid_cols = 16;        ///< occupancy grid columns (lateral)
  double grid_cell = 1.0;    ///< occupancy grid cell size [m]

  int substeps() const {
    return static_cast<int>(std::llround(dt_agent / dt_dynamics));
  }
};

/// Link endpoints, pacing, latency injection, and the coordinate mapping
/// between the physical test area and the virtual environment.
struct LinkParams {
  std::string bind_address = "127.0.0.1";
  int environment_port = 47001; ///< environment's UDP port
  int controller_port = 47002;  ///< controller's UDP port
  std::string mode = "lockstep"; ///< "lockstep" or "free"
  double handshake_timeout_ms = 5000.0;
  double step_timeout_ms = 10000.0;  ///< lockstep blocking-receive limit
  double heartbeat_hz = 2.0;
  double heartbeat_timeout_ms = 2000.0; ///< free-running peer-loss threshold
  double pose_rate_hz = 100.0;   ///< free-running pose stream rate
  double actors_rate_hz = 20.0;  ///< free-running actor stream rate
  double latency_base_ms = 0.0;
  double latency_jitter_ms = 0.0;
  double drop_prob = 0.0;
  std::uint64_t latency_seed = 1;
  double time_scale = 1.0; ///< free-running wall-clock compression factor
  double frame_x0 = 0.0;       ///< physical-frame origin mapped into the VE
  double frame_y0 = 0.0;
  double frame_theta0 = 0.0;   ///< physical-to-virtual rotation [rad]
  double frame_offset_x = 0.0; ///< virtual-frame translation
  double frame_offset_y = 0.0;
};

/// Full resolved configuration: every tunable of the pipeline.
struct Config {
  VehicleParams vehicle;
  TireParams tire;
  WheelParams wheel;
  ScenarioParams scenario;
  AgentParams agent;
  LinkParams link;
};

namespace detail {

using FieldRef = std::variant<double*, int*, bool*, std::uint64_t*, std::string*>;

struct Field {
  std::string section;
  std::string key;
  FieldRef ref;
};

/// Single source of truth mapping (section, key) pairs to struct members.
/// Parsing, overrides, printing, and the run manifest all walk this table.
inline std::vector<Field> field_table(Config& c) {
  std::vector<Field> t;
  auto add = [&t](const char* sec, const char* key, FieldRef ref) {
    t.push_back({sec, key, ref});
  };
  add("vehicle", "m", &c.vehicle.m);
  add("vehicle", "l_f", &c.vehicle.l_f);
  add("vehicle", "l_r", &c.vehicle.l_r);
  add("vehicle", "i_z", &c.vehicle.i_z);
  add("vehicle", "drag_coeff", &c.vehicle.drag_coeff);
  add("vehicle", "roll_coeff", &c.vehicle.roll_coeff);
  add("vehicle", "v_eps", &c.vehicle.v_eps);

  add("tire", "c_x", &c.tire.c_x);
  add("tire", "c_y", &c.tire.c_y);
  add("tire", "mu", &c.tire.mu);
  add("tire", "s_clamp", &c.tire.s_clamp);
  add("tire", "slip_eps", &c.tire.slip_eps);
  add("tire", "literal_g", &c.tire.literal_g);

  add("wheel", "radius", &c.wheel.radius);
  add("wheel", "inertia", &c.wheel.inertia);
  add("wheel", "v_slip_eps", &c.wheel.v_slip_eps);
  add("wheel", "brake_taper_omega", &c.wheel.brake_taper_omega);

  add("scenario", "lane_length", &c.scenario.lane_length);
  add("scenario", "zone_entry", &c.scenario.zone_entry);
  add("scenario", "zone_depth", &c.scenario.zone_depth);
  add("scenario", "zone_half_width", &c.scenario.zone_half_width);
  add("scenario", "waypoint_spacing", &c.scenario.waypoint_spacing);
  add("scenario", "ped_count", &c.scenario.ped_count);
  add("scenario", "ped_speed", &c.scenario.ped_speed);
  add("scenario", "ped_patrol_half_span", &c.scenario.ped_patrol_half_span);
  add("scenario", "ped_radius", &c.scenario.ped_radius);
  add("scenario", "v_set", &c.scenario.v_set);
  add("scenario", "v0", &c.scenario.v0);
  add("scenario", "stop_margin", &c.scenario.stop_margin);
  add("scenario", "duration_max", &c.scenario.duration_max);
  add("scenario", "ego_half_length", &c.scenario.ego_half_length);
  add("scenario", "ego_half_width", &c.scenario.ego_half_width);
  add("scenario", "lookahead_min", &c.scenario.lookahead_min);
  add("scenario", "lookahead_gain", &c.scenario.lookahead_gain);
  add("scenario", "steer_max", &c.scenario.steer_max);

  add("agent", "gamma", &c.agent.gamma);
  add("agent", "buffer_capacity", &c.agent.buffer_capacity);
  add("agent", "batch_size", &c.agent.batch_size);
  add("agent", "training_frequency", &c.agent.training_frequency);
  add("agent", "target_sync", &c.agent.target_sync);
  add("agent", "eps_start", &c.agent.eps_start);
  add("agent", "eps_end", &c.agent.eps_end);
  add("agent", "eps_horizon", &c.agent.eps_horizon);
  add("agent", "episodes", &c.agent.episodes);
  add("agent", "lr", &c.agent.lr);
  add("agent", "momentum", &c.agent.momentum);
  add("agent", "grad_clip", &c.agent.grad_clip);
  add("agent", "w_v", &c.agent.w_v);
  add("agent", "w_j", &c.agent.w_j);
  add("agent", "p_collision", &c.agent.p_collision);
  add("agent", "b_stop", &c.agent.b_stop);
  add("agent", "w_ttz", &c.agent.w_ttz);
  add("agent", "ttz_penalty_threshold", &c.agent.ttz_penalty_threshold);
  add("agent", "dt_agent", &c.agent.dt_agent);
  add("agent", "dt_dynamics", &c.agent.dt_dynamics);
  add("agent", "integrator", &c.agent.integrator);
  add("agent", "grid_rows", &c.agent.grid_rows);
  add("agent", "grid_cols", &c.agent.grid_cols);
  add("agent", "grid_cell", &c.agent.grid_cell);

  add("link", "bind_address", &c.link.bind_address);
  add("link", "environment_port", &c.link.environment_port);
  add("link", "controller_port", &c.link.controller_port);
  add("link", "mode", &c.link.mode);
  add("link", "handshake_timeout_ms", &c.link.handshake_timeout_ms);
  add("link", "step_timeout_ms", &c.link.step_timeout_ms);
  add("link", "heartbeat_hz", &c.link.heartbeat_hz);
  add("link", "heartbeat_timeout_ms", &c.link.heartbeat_timeout_ms);
  add("link", "pose_rate_hz", &c.link.pose_rate_hz);
  add("link", "actors_rate_hz", &c.link.actors_rate_hz);
  add("link", "latency_base_ms", &c.link.latency_base_ms);
  add("link", "latency_jitter_ms", &c.link.latency_jitter_ms);
  add("link", "drop_prob", &c.link.drop_prob);
  add("link", "latency_seed", &c.link.latency_seed);
  add("link", "time_scale", &c.link.time_scale);
  add("link", "frame_x0", &c.link.frame_x0);
  add("link", "frame_y0", &c.link.frame_y0);
  add("link", "frame_theta0", &c.link.frame_theta0);
  add("link", "frame_offset_x", &c.link.frame_offset_x);
  add("link", "frame_offset_y", &c.link.frame_offset_y);
  return t;
}

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return {};
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline void assign_field(const Field& f, const std::string& raw) {
  const std::string full = f.section + "." + f.key;
  const std::string value = trim(raw);
  if (value.empty())
    throw ConfigError("empty value", full);
  try {
    if (auto* p = std::get_if<double*>(&f.ref)) {
      std::size_t pos = 0;
      double v = std::stod(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      **p = v;
    } else if (auto* p = std::get_if<int*>(&f.ref)) {
      std::size_t pos = 0;
      long v = std::stol(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      **p = static_cast<int>(v);
    } else if (auto* p = std::get_if<std::uint64_t*>(&f.ref)) {
      std::size_t pos = 0;
      unsigned long long v = std::stoull(value, &pos);
      if (pos != value.size()) throw std::invalid_argument(value);
      **p = v;
    } else if (auto* p = std::get_if<bool*>(&f.ref)) {
      if (value == "true" || value == "1" || value == "yes") **p = true;
      else if (value == "false" || value == "0" || value == "no") **p = false;
      else throw std::invalid_argument(value);
    } else if (auto* p = std::get_if<std::string*>(&f.ref)) {
      **p = value;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("cannot parse value '" + value + "'", full);
  }
}

inline std::string format_field(const Field& f) {
  std::ostringstream os;
  if (auto* p = std::get_if<double*>(&f.ref)) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", **p);
    os << buf;
  } else if (auto* p = std::get_if<int*>(&f.ref)) {
    os << **p;
  } else if (auto* p = std::get_if<std::uint64_t*>(&f.ref)) {
    os << **p;
  } else if (auto* p = std::get_if<bool*>(&f.ref)) {
    os << (**p ? "true" : "false");
  } else if (auto* p = std::get_if<std::string*>(&f.ref)) {
    os << **p;
  }
  return os.str();
}

} // namespace detail

/// Apply one `section.key=value` override.  Unknown names are an error so
/// typos never silently fall back to defaults.
inline void apply_override(Config& c, const std::string& dotted_key,
                           const std::string& value) {
  std::size_t dot = dotted_key.find('.');
  if (dot == std::string::npos)
    throw ConfigError("override must be section.key=value", dotted_key);
  const std::string sec = dotted_key.substr(0, dot);
  const std::string key = dotted_key.substr(dot + 1);
  for (auto& f : detail::field_table(c)) {
    if (f.section == sec && f.key == key) {
      detail::assign_field(f, value);
      return;
    }
  }
  throw ConfigError("unknown configuration key", dotted_key);
}

/// Parse an INI-style stream of `[section]` headers and `key = value`
/// lines (# and ; start comments) over the given defaults.
inline void load_config_stream(Config& c, std::istream& in) {
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  auto fields = detail::field_table(c);
  while (std::getline(in, line)) {
    ++lineno;
    std::size_t cut = line.find_first_of("#;");
    if (cut != std::string::npos) line.erase(cut);
    line = detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("malformed section header at line " +
                          std::to_string(lineno));
      section = detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("expected key = value at line " +
                        std::to_string(lineno));
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = line.substr(eq + 1);
    bool found = false;
    for (auto& f : fields) {
      if (f.section == section && f.key == key) {
        detail::assign_field(f, value);
        found = true;
        break;
      }
    }
    if (!found)
      throw ConfigError("unknown configuration key", section + "." + key);
  }
}

inline void load_config_file(Config& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  load_config_stream(c, in);
}

/// Serialize the fully resolved configuration back to INI text.
/// `load_config_stream(print_config(c))` reproduces `c` exactly.
inline std::string print_config(const Config& c_in) {
  Config& c = const_cast<Config&>(c_in);
  std::ostringstream os;
  std::string current;
  for (auto& f : detail::field_table(c)) {
    if (f.section != current) {
      if (!current.empty()) os << "\n";
      os << "[" << f.section << "]\n";
      current = f.section;
    }
    os << f.key << " = " << detail::format_field(f) << "\n";
  }
  return os.str();
}

/// The full configuration as a JSON object (for run manifests).
inline nlohmann::json config_to_json(const Config& c_in) {
  Config& c = const_cast<Config&>(c_in);
  nlohmann::json j;
  for (auto& f : detail::field_table(c)) {
    nlohmann::json v;
    if (auto* p = std::get_if<double*>(&f.ref)) v = **p;
    else if (auto* p = std::get_if<int*>(&f.ref)) v = **p;
    else if (auto* p = std::get_if<std::uint64_t*>(&f.ref)) v = **p;
    else if (auto* p = std::get_if<bool*>(&f.ref)) v = **p;
    else if (auto* p = std::get_if<std::string*>(&f.ref)) v = **p;
    j[f.section][f.key] = v;
  }
  return j;
}

/// Cross-field sanity checks.  Throws ConfigError naming the first
/// offending key.
inline void validate(const Config& c) {
  auto require = [](bool ok, const char* key, const char* what) {
    if (!ok) throw ConfigError(what, key);
  };
  require(c.vehicle.m > 0, "vehicle.m", "must be positive");
  require(c.vehicle.l_f > 0, "vehicle.l_f", "must be positive");
  require(c.vehicle.l_r > 0, "vehicle.l_r", "must be positive");
  require(c.vehicle.i_z > 0, "vehicle.i_z", "must be positive");
  require(c.vehicle.drag_coeff >= 0, "vehicle.drag_coeff", "must be >= 0");
  require(c.vehicle.roll_coeff >= 0, "vehicle.roll_coeff", "must be >= 0");
  require(c.vehicle.v_eps > 0, "vehicle.v_eps", "must be positive");

  require(c.tire.c_x > 0, "tire.c_x", "must be positive");
  require(c.tire.c_y > 0, "tire.c_y", "must be positive");
  require(c.tire.mu > 0 && c.tire.mu <= 1.5, "tire.mu", "must be in (0, 1.5]");
  require(c.tire.s_clamp > 0 && c.tire.s_clamp < 1, "tire.s_clamp",
          "must be in (0, 1)");
  require(c.tire.slip_eps >= 0, "tire.slip_eps", "must be >= 0");

  require(c.wheel.radius > 0, "wheel.radius", "must be positive");
  require(c.wheel.inertia > 0, "wheel.inertia", "must be positive");
  require(c.wheel.v_slip_eps > 0, "wheel.v_slip_eps", "must be positive");
  require(c.wheel.brake_taper_omega > 0, "wheel.brake_taper_omega",
          "must be positive");

  require(c.scenario.lane_length > 0, "scenario.lane_length", "must be positive");
  require(c.scenario.zone_entry > 0 &&
              c.scenario.zone_entry + c.scenario.zone_depth <
                  c.scenario.lane_length,
          "scenario.zone_entry", "zone must lie inside the lane");
  require(c.scenario.zone_depth > 0, "scenario.zone_depth", "must be positive");
  require(c.scenario.zone_half_width > 0, "scenario.zone_half_width",
          "must be positive");
  require(c.scenario.waypoint_spacing > 0, "scenario.waypoint_spacing",
          "must be positive");
  require(c.scenario.ped_count >= 0, "scenario.ped_count", "must be >= 0");
  require(c.scenario.ped_speed >= 0, "scenario.ped_speed", "must be >= 0");
  require(c.scenario.ped_radius > 0, "scenario.ped_radius", "must be positive");
  require(c.scenario.v_set > 0, "scenario.v_set", "must be positive");
  require(c.scenario.v0 >= 0, "scenario.v0", "must be >= 0");
  require(c.scenario.stop_margin >= 0, "scenario.stop_margin", "must be >= 0");
  require(c.scenario.duration_max > 0, "scenario.duration_max",
          "must be positive");
  require(c.scenario.ego_half_length > 0, "scenario.ego_half_length",
          "must be positive");
  require(c.scenario.ego_half_width > 0, "scenario.ego_half_width",
          "must be positive");
  require(c.scenario.steer_max > 0, "scenario.steer_max", "must be positive");
  require(c.scenario.lookahead_min > 0, "scenario.lookahead_min",
          "must be positive");

  require(c.agent.gamma > 0 && c.agent.gamma < 1, "agent.gamma",
          "must be in (0, 1)");
  require(c.agent.buffer_capacity >= 1, "agent.buffer_capacity",
          "must be >= 1");
  require(c.agent.batch_size >= 1 &&
              static_cast<std::uint64_t>(c.agent.batch_size) <=
                  c.agent.buffer_capacity,
          "agent.batch_size", "must be in [1, buffer_capacity]");
  require(c.agent.training_frequency >= 1, "agent.training_frequency",
          "must be >= 1");
  require(c.agent.target_sync >= 1, "agent.target_sync", "must be >= 1");
  require(c.agent.eps_start >= 0 && c.agent.eps_start <= 1, "agent.eps_start",
          "must be in [0, 1]");
  require(c.agent.eps_end >= 0 && c.agent.eps_end <= 1, "agent.eps_end",
          "must be in [0, 1]");
  require(c.agent.eps_horizon >= 1, "agent.eps_horizon", "must be >= 1");
  require(c.agent.episodes >= 0, "agent.episodes", "must be >= 0");
  require(c.agent.lr > 0, "agent.lr", "must be positive");
  require(c.agent.momentum >= 0 && c.agent.momentum < 1, "agent.momentum",
          "must be in [0, 1)");
  require(c.agent.grad_clip > 0, "agent.grad_clip", "must be positive");
  require(c.agent.dt_agent > 0, "agent.dt_agent", "must be positive");
  require(c.agent.dt_dynamics > 0, "agent.dt_dynamics", "must be positive");
  double ratio = c.agent.dt_agent / c.agent.dt_dynamics;
  require(std::abs(ratio - std::llround(ratio)) < 1e-9 && ratio >= 1,
          "agent.dt_agent", "must be an integer multiple of dt_dynamics");
  require(c.agent.integrator == "rk4" || c.agent.integrator == "euler",
          "agent.integrator", "must be 'rk4' or 'euler'");
  require(c.agent.grid_rows > 0, "agent.grid_rows", "must be positive");
  require(c.agent.grid_cols > 0, "agent.grid_cols", "must be positive");
  require(c.agent.grid_cell > 0, "agent.grid_cell", "must be positive");

  require(c.link.environment_port > 0 && c.link.environment_port < 65536,
          "link.environment_port", "must be a valid port");
  require(c.link.controller_port > 0 && c.link.controller_port < 65536,
          "link.controller_port", "must be a valid port");
  require(c.link.mode == "lockstep" || c.link.mode == "free", "link.mode",
          "must be 'lockstep' or 'free'");
  require(c.link.handshake_timeout_ms > 0, "link.handshake_timeout_ms",
          "must be positive");
  require(c.link.step_timeout_ms > 0, "link.step_timeout_ms",
          "must be positive");
  require(c.link.heartbeat_hz > 0, "link.heartbeat_hz", "must be positive");
  require(c.link.pose_rate_hz > 0, "link.pose_rate_hz", "must be positive");
  require(c.link.actors_rate_hz > 0, "link.actors_rate_hz", "must be positive");
  require(c.link.latency_base_ms >= 0, "link.latency_base_ms", "must be >= 0");
  require(c.link.latency_jitter_ms >= 0, "link.latency_jitter_ms",
          "must be >= 0");
  require(c.link.time_scale > 0 && c.link.time_scale <= 100.0,
          "link.time_scale", "must be in (0, 100]");
  require(c.link.drop_prob >= 0 && c.link.drop_prob < 1, "link.drop_prob",
          "must be in [0, 1)");
}

} // namespace vve
