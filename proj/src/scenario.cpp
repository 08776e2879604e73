#include "airship/scenario.hpp"

#include <toml.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace airship::scenario {

namespace {

class Reader {
 public:
  std::vector<std::string> errors;

  void check_keys(const toml::table& t, const std::string& section,
                  std::initializer_list<const char*> known) {
    std::set<std::string> k(known.begin(), known.end());
    for (const auto& [key, node] : t) {
      (void)node;
      if (!k.count(std::string(key.str()))) {
        errors.push_back(join(section, std::string(key.str())) + ": unknown key");
      }
    }
  }

  void num(const toml::table& t, const std::string& section, const char* key, double& out) {
    const toml::node* n = t.get(key);
    if (!n) return;
    if (auto v = n->value<double>()) {
      out = *v;
    } else {
      errors.push_back(join(section, key) + ": expected a number");
    }
  }

  void integer(const toml::table& t, const std::string& section, const char* key, int& out) {
    const toml::node* n = t.get(key);
    if (!n) return;
    if (auto v = n->value<std::int64_t>()) {
      out = static_cast<int>(*v);
    } else {
      errors.push_back(join(section, key) + ": expected an integer");
    }
  }

  void boolean(const toml::table& t, const std::string& section, const char* key, bool& out) {
    const toml::node* n = t.get(key);
    if (!n) return;
    if (auto v = n->value<bool>()) {
      out = *v;
    } else {
      errors.push_back(join(section, key) + ": expected a boolean");
    }
  }

  void str(const toml::table& t, const std::string& section, const char* key, std::string& out) {
    const toml::node* n = t.get(key);
    if (!n) return;
    if (auto v = n->value<std::string>()) {
      out = *v;
    } else {
      errors.push_back(join(section, key) + ": expected a string");
    }
  }

  void angle(const toml::table& t, const std::string& section, const char* key, double& rad) {
    double deg = rad2deg(rad);
    num(t, section, key, deg);
    rad = deg2rad(deg);
  }

  template <int N>
  bool vec(const toml::node* n, const std::string& where, Eigen::Matrix<double, N, 1>& out) {
    const toml::array* a = n ? n->as_array() : nullptr;
    if (!a || a->size() != static_cast<std::size_t>(N)) {
      errors.push_back(where + ": expected an array of " + std::to_string(N) + " numbers");
      return false;
    }
    for (int i = 0; i < N; ++i) {
      auto v = (*a)[static_cast<std::size_t>(i)].value<double>();
      if (!v) {
        errors.push_back(where + ": expected an array of " + std::to_string(N) + " numbers");
        return false;
      }
      out(i) = *v;
    }
    return true;
  }

  template <int N>
  void vec(const toml::table& t, const std::string& section, const char* key,
           Eigen::Matrix<double, N, 1>& out) {
    if (const toml::node* n = t.get(key)) vec<N>(n, join(section, key), out);
  }

  template <int N>
  void vec_list(const toml::table& t, const std::string& section, const char* key,
                std::vector<Eigen::Matrix<double, N, 1>>& out) {
    const toml::node* n = t.get(key);
    if (!n) return;
    const toml::array* a = n->as_array();
    if (!a) {
      errors.push_back(join(section, key) + ": expected an array of points");
      return;
    }
    out.clear();
    for (std::size_t i = 0; i < a->size(); ++i) {
      Eigen::Matrix<double, N, 1> v;
      if (vec<N>(&(*a)[i], join(section, key) + "[" + std::to_string(i) + "]", v)) out.push_back(v);
    }
  }

  const toml::table* section(const toml::table& root, const char* name) {
    const toml::node* n = root.get(name);
    if (!n) return nullptr;
    if (!n->is_table()) {
      errors.push_back(std::string(name) + ": expected a table");
      return nullptr;
    }
    return n->as_table();
  }

  static std::string join(const std::string& section, const std::string& key) {
    return section.empty() ? key : section + "." + key;
  }
};

void read_environment(Reader& r, const toml::table& t, Scenario& s) {
  const std::string sec = "environment";
  r.check_keys(t, sec,
               {"regime", "mean_wind", "gusts", "gust_std", "gust_time_constant",
                "thermal_spawn_rate", "thermal_spawn_radius", "thermal_radius", "thermal_peak",
                "thermal_lifetime", "hard_cap", "thermals"});
  std::string regime_name;
  r.str(t, sec, "regime", regime_name);
  if (!regime_name.empty()) {
    try {
      s.environment = environment::regime(regime_name);
    } catch (const std::exception& e) {
      r.errors.push_back(sec + ".regime: " + e.what());
    }
  }
  auto& e = s.environment;
  r.vec<3>(t, sec, "mean_wind", e.mean_wind);
  r.boolean(t, sec, "gusts", e.gusts_enabled);
  r.vec<3>(t, sec, "gust_std", e.gust_std);
  r.num(t, sec, "gust_time_constant", e.gust_time_constant);
  r.num(t, sec, "thermal_spawn_rate", e.thermal_spawn_rate);
  r.num(t, sec, "thermal_spawn_radius", e.thermal_spawn_radius);
  r.num(t, sec, "thermal_radius", e.thermal_radius);
  r.num(t, sec, "thermal_peak", e.thermal_peak);
  r.num(t, sec, "thermal_lifetime", e.thermal_lifetime);
  r.num(t, sec, "hard_cap", e.hard_cap);
  if (const toml::node* n = t.get("thermals")) {
    const toml::array* a = n->as_array();
    if (!a) {
      r.errors.push_back(sec + ".thermals: expected an array of tables");
      return;
    }
    for (std::size_t i = 0; i < a->size(); ++i) {
      const std::string ts = sec + ".thermals[" + std::to_string(i) + "]";
      const toml::table* tt = (*a)[i].as_table();
      if (!tt) {
        r.errors.push_back(ts + ": expected a table");
        continue;
      }
      r.check_keys(*tt, ts, {"center", "radius", "peak", "birth", "death"});
      environment::ThermalColumn th;
      r.vec<2>(*tt, ts, "center", th.center);
      r.num(*tt, ts, "radius", th.radius);
      r.num(*tt, ts, "peak", th.peak_vertical);
      r.num(*tt, ts, "birth", th.birth);
      r.num(*tt, ts, "death", th.death);
      e.thermals.push_back(th);
    }
  }
}

void read_subject(Reader& r, const toml::table& t, Scenario& s, const std::string& base_dir) {
  const std::string sec = "subject";
  r.check_keys(t, sec,
               {"behavior", "start", "speed", "jitter", "jitter_time_constant", "anchor_pull",
                "waypoints", "loop", "wander_radius", "script", "graze_cap", "walk_cap",
                "trot_cap"});
  auto& c = s.subject;
  std::string behavior;
  r.str(t, sec, "behavior", behavior);
  if (!behavior.empty()) {
    try {
      c.behavior = subject::behavior_from_string(behavior);
    } catch (const ConfigError& e) {
      r.errors.push_back(sec + ".behavior: " + e.what());
    }
  }
  r.vec<2>(t, sec, "start", c.start);
  r.num(t, sec, "speed", c.speed);
  r.num(t, sec, "jitter", c.jitter);
  r.num(t, sec, "jitter_time_constant", c.jitter_time_constant);
  r.num(t, sec, "anchor_pull", c.anchor_pull);
  r.vec_list<2>(t, sec, "waypoints", c.waypoints);
  r.boolean(t, sec, "loop", c.loop_waypoints);
  r.num(t, sec, "wander_radius", c.wander_radius);
  r.num(t, sec, "graze_cap", c.graze_cap);
  r.num(t, sec, "walk_cap", c.walk_cap);
  r.num(t, sec, "trot_cap", c.trot_cap);
  std::string script;
  r.str(t, sec, "script", script);
  if (!script.empty()) {
    std::filesystem::path p(script);
    if (p.is_relative()) p = std::filesystem::path(base_dir) / p;
    try {
      c.script = subject::load_trajectory_csv(p.string());
    } catch (const ConfigError& e) {
      r.errors.push_back(sec + ".script: " + e.what());
    }
  }
}

void read_vehicles(Reader& r, const toml::node* n, Scenario& s) {
  const toml::array* a = n->as_array();
  if (!a) {
    r.errors.push_back("vehicles: expected an array of tables");
    return;
  }
  for (std::size_t i = 0; i < a->size(); ++i) {
    const std::string sec = "vehicles[" + std::to_string(i) + "]";
    const toml::table* t = (*a)[i].as_table();
    if (!t) {
      r.errors.push_back(sec + ": expected a table");
      continue;
    }
    r.check_keys(*t, sec, {"position", "heading_deg", "airspeed", "mode", "waypoints"});
    VehicleSpec v;
    r.vec<3>(*t, sec, "position", v.position);
    r.angle(*t, sec, "heading_deg", v.heading);
    r.num(*t, sec, "airspeed", v.airspeed);
    std::string mode;
    r.str(*t, sec, "mode", mode);
    if (!mode.empty()) {
      try {
        v.mode = control::mode_from_string(mode);
      } catch (const std::exception& e) {
        r.errors.push_back(sec + ".mode: " + e.what());
      }
    }
    r.vec_list<3>(*t, sec, "waypoints", v.waypoints);
    s.vehicles.push_back(v);
  }
}

}  // namespace

Scenario parse_scenario(const std::string& toml_text, const std::string& base_dir) {
  toml::table root;
  try {
    root = toml::parse(toml_text);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << "scenario parse error: " << e.description() << " (line " << e.source().begin.line
        << ")";
    throw ConfigError(msg.str());
  }

  Scenario s;
  Reader r;
  r.check_keys(root, "",
               {"name", "duration", "seed", "telemetry_hz", "track_initialized", "vehicles",
                "airship", "environment", "subject", "controller", "skybox", "mpc", "wind_estimator",
                "sensors", "camera", "detection", "tracker", "comms"});
  r.str(root, "", "name", s.name);
  r.num(root, "", "duration", s.duration);
  if (const toml::node* n = root.get("seed")) {
    if (auto v = n->value<std::int64_t>(); v && *v >= 0) {
      s.seed = static_cast<std::uint64_t>(*v);
    } else {
      r.errors.push_back("seed: expected a non-negative integer");
    }
  }
  r.integer(root, "", "telemetry_hz", s.telemetry_hz);
  r.boolean(root, "", "track_initialized", s.track_initialized);

  if (const toml::node* n = root.get("vehicles")) read_vehicles(r, n, s);

  if (const toml::table* t = r.section(root, "airship")) {
    auto& a = s.airship;
    r.check_keys(*t, "airship",
                 {"length", "volume", "air_density", "cg_below_cb", "ballast_mass", "payload_mass",
                  "battery_mass", "battery_capacity_ah", "battery_voltage", "throttle_cap"});
    r.num(*t, "airship", "length", a.length);
    r.num(*t, "airship", "volume", a.volume);
    r.num(*t, "airship", "air_density", a.air_density);
    r.num(*t, "airship", "cg_below_cb", a.cg_below_cb);
    r.num(*t, "airship", "ballast_mass", a.mass.ballast_mass);
    r.num(*t, "airship", "payload_mass", a.mass.payload_mass);
    r.num(*t, "airship", "battery_mass", a.mass.battery_mass);
    r.num(*t, "airship", "battery_capacity_ah", a.battery_capacity_ah);
    r.num(*t, "airship", "battery_voltage", a.battery_voltage);
    r.num(*t, "airship", "throttle_cap", a.throttle_cap);
  }
  if (const toml::table* t = r.section(root, "environment")) read_environment(r, *t, s);
  if (const toml::table* t = r.section(root, "subject")) read_subject(r, *t, s, base_dir);
  if (const toml::table* t = r.section(root, "controller")) {
    auto& c = s.controller;
    const std::string sec = "controller";
    r.check_keys(*t, sec,
                 {"v_min", "v_max", "max_turn_rate", "max_climb_rate", "geofence_lookahead",
                  "manual_bypasses_geofence", "capture_radius", "emergency_airspeed",
                  "stale_timeout"});
    r.num(*t, sec, "v_min", c.v_min);
    r.num(*t, sec, "v_max", c.v_max);
    r.num(*t, sec, "max_turn_rate", c.max_turn_rate);
    r.num(*t, sec, "max_climb_rate", c.max_climb_rate);
    r.num(*t, sec, "geofence_lookahead", c.geofence_lookahead);
    r.boolean(*t, sec, "manual_bypasses_geofence", c.manual_bypasses_geofence);
    r.num(*t, sec, "capture_radius", c.capture_radius);
    r.num(*t, sec, "emergency_airspeed", c.emergency_airspeed);
    r.num(*t, sec, "stale_timeout", c.stale_timeout);
  }
  if (const toml::table* t = r.section(root, "skybox")) {
    r.check_keys(*t, "skybox", {"min", "max", "margin"});
    r.vec<3>(*t, "skybox", "min", s.skybox.min_corner);
    r.vec<3>(*t, "skybox", "max", s.skybox.max_corner);
    r.num(*t, "skybox", "margin", s.skybox.margin);
  }
  if (const toml::table* t = r.section(root, "mpc")) {
    auto& m = s.mpc;
    const std::string sec = "mpc";
    r.check_keys(*t, sec,
                 {"horizon", "dt", "w_cam", "w_sep", "w_dist", "w_u", "w_speed", "w_penalty",
                  "standoff_altitude", "d_vehicle", "r_subject_min", "v_min", "v_max", "v_pref",
                  "max_turn_rate", "max_climb_rate", "iterations", "bank_per_accel",
                  "skybox_inset"});
    r.integer(*t, sec, "horizon", m.horizon);
    r.num(*t, sec, "dt", m.dt);
    r.num(*t, sec, "w_cam", m.w_cam);
    r.num(*t, sec, "w_sep", m.w_sep);
    r.num(*t, sec, "w_dist", m.w_dist);
    r.num(*t, sec, "w_u", m.w_u);
    r.num(*t, sec, "w_speed", m.w_speed);
    r.num(*t, sec, "w_penalty", m.w_penalty);
    r.num(*t, sec, "standoff_altitude", m.standoff_altitude);
    r.num(*t, sec, "d_vehicle", m.d_vehicle);
    r.num(*t, sec, "r_subject_min", m.r_subject_min);
    r.num(*t, sec, "v_min", m.v_min);
    r.num(*t, sec, "v_max", m.v_max);
    r.num(*t, sec, "v_pref", m.v_pref);
    r.num(*t, sec, "max_turn_rate", m.max_turn_rate);
    r.num(*t, sec, "max_climb_rate", m.max_climb_rate);
    r.integer(*t, sec, "iterations", m.iterations);
    r.num(*t, sec, "bank_per_accel", m.bank_per_accel);
    r.num(*t, sec, "skybox_inset", m.skybox_inset);
  }
  if (const toml::table* t = r.section(root, "wind_estimator")) {
    r.check_keys(*t, "wind_estimator", {"time_constant", "turn_gate"});
    r.num(*t, "wind_estimator", "time_constant", s.wind_estimator.time_constant);
    r.num(*t, "wind_estimator", "turn_gate", s.wind_estimator.turn_gate);
  }
  if (const toml::table* t = r.section(root, "sensors")) {
    auto& n = s.sensor_noise;
    const std::string sec = "sensors";
    r.check_keys(*t, sec,
                 {"noise_scale", "accel_std", "gyro_std", "gps_pos_std", "gps_vel_std", "baro_std",
                  "mag_std", "pitot_std", "gyro_bias", "accel_bias", "gps_hz", "baro_hz", "mag_hz",
                  "pitot_hz"});
    r.num(*t, sec, "accel_std", n.accel_std);
    r.num(*t, sec, "gyro_std", n.gyro_std);
    r.num(*t, sec, "gps_pos_std", n.gps_pos_std);
    r.num(*t, sec, "gps_vel_std", n.gps_vel_std);
    r.num(*t, sec, "baro_std", n.baro_std);
    r.num(*t, sec, "mag_std", n.mag_std);
    r.num(*t, sec, "pitot_std", n.pitot_std);
    r.vec<3>(*t, sec, "gyro_bias", n.gyro_bias);
    r.vec<3>(*t, sec, "accel_bias", n.accel_bias);
    double scale = 1.0;
    r.num(*t, sec, "noise_scale", scale);
    if (scale != 1.0) {
      for (double* v : {&n.accel_std, &n.gyro_std, &n.gps_pos_std, &n.gps_vel_std, &n.baro_std,
                        &n.mag_std, &n.pitot_std}) {
        *v *= scale;
      }
    }
    r.integer(*t, sec, "gps_hz", s.sensor_rates.gps_hz);
    r.integer(*t, sec, "baro_hz", s.sensor_rates.baro_hz);
    r.integer(*t, sec, "mag_hz", s.sensor_rates.mag_hz);
    r.integer(*t, sec, "pitot_hz", s.sensor_rates.pitot_hz);
  }
  if (const toml::table* t = r.section(root, "camera")) {
    r.check_keys(*t, "camera", {"azimuth_deg", "depression_deg", "hfov_deg", "vfov_deg", "max_range"});
    r.angle(*t, "camera", "azimuth_deg", s.camera.mount_azimuth);
    r.angle(*t, "camera", "depression_deg", s.camera.mount_depression);
    r.angle(*t, "camera", "hfov_deg", s.camera.hfov);
    r.angle(*t, "camera", "vfov_deg", s.camera.vfov);
    r.num(*t, "camera", "max_range", s.camera.max_range);
  }
  if (const toml::table* t = r.section(root, "detection")) {
    r.check_keys(*t, "detection", {"p_hi", "p_lo", "pixel_noise_std", "roi_sigma"});
    r.num(*t, "detection", "p_hi", s.detection.p_hi);
    r.num(*t, "detection", "p_lo", s.detection.p_lo);
    r.num(*t, "detection", "pixel_noise_std", s.detection.pixel_noise_std);
    r.num(*t, "detection", "roi_sigma", s.detection.roi_sigma);
  }
  if (const toml::table* t = r.section(root, "tracker")) {
    r.check_keys(*t, "tracker", {"accel_noise", "init_pos_std", "init_vel_std", "fusion_lag"});
    r.num(*t, "tracker", "accel_noise", s.tracker.accel_noise);
    r.num(*t, "tracker", "init_pos_std", s.tracker.init_pos_std);
    r.num(*t, "tracker", "init_vel_std", s.tracker.init_vel_std);
    r.num(*t, "tracker", "fusion_lag", s.tracker.fusion_lag);
  }
  if (const toml::table* t = r.section(root, "comms")) {
    r.check_keys(*t, "comms", {"range", "full_quality_fraction", "latency", "jitter", "extra_loss"});
    r.num(*t, "comms", "range", s.comms.range);
    r.num(*t, "comms", "full_quality_fraction", s.comms.full_quality_fraction);
    r.num(*t, "comms", "latency", s.comms.latency);
    r.num(*t, "comms", "jitter", s.comms.jitter);
    r.num(*t, "comms", "extra_loss", s.comms.extra_loss);
  }

  // The planner shares the camera mount and the controller's limits.
  s.mpc.camera_depression = s.camera.mount_depression;
  s.mpc.camera_azimuth = s.camera.mount_azimuth;
  s.tracker.pixel_noise_std = s.detection.pixel_noise_std;
  s.ekf.gps_pos_std = std::max(s.sensor_noise.gps_pos_std, 0.05);
  s.ekf.gps_vel_std = std::max(s.sensor_noise.gps_vel_std, 0.01);
  s.ekf.baro_std = std::max(s.sensor_noise.baro_std, 0.05);
  s.ekf.mag_std = std::max(s.sensor_noise.mag_std, 0.005);
  s.ekf.pitot_std = std::max(s.sensor_noise.pitot_std, 0.05);

  if (!r.errors.empty()) {
    std::string msg = "invalid scenario:";
    for (const auto& e : r.errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }

  std::ostringstream canon;
  canon << root;
  s.canonical = canon.str();
  s.validate();
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  const auto dir = std::filesystem::path(path).parent_path();
  return parse_scenario(ss.str(), dir.empty() ? "." : dir.string());
}

void Scenario::validate() const {
  std::vector<std::string> errors;
  auto guard = [&errors](const char* field, auto&& fn) {
    try {
      fn();
    } catch (const std::exception& e) {
      errors.push_back(std::string(field) + ": " + e.what());
    }
  };
  if (!(duration > 0.0)) errors.push_back("duration: must be positive");
  if (telemetry_hz < 1 || 500 % telemetry_hz != 0) {
    errors.push_back("telemetry_hz: must divide the 500 Hz physics rate");
  }
  guard("skybox", [&] { skybox.validate(); });
  guard("airship", [&] { dynamics::AirshipModel m(airship); });
  guard("mpc", [&] { mpc.validate(); });
  guard("camera", [&] { camera.validate(); });
  guard("subject", [&] { subject.validate(); });
  if (!(detection.p_hi >= 0.0 && detection.p_hi <= 1.0 && detection.p_lo >= 0.0 &&
        detection.p_lo <= 1.0)) {
    errors.push_back("detection: probabilities must lie in [0, 1]");
  }
  if (!(comms.range > 0.0) || !(comms.full_quality_fraction >= 0.0 && comms.full_quality_fraction < 1.0)) {
    errors.push_back("comms: range must be positive and full_quality_fraction in [0, 1)");
  }
  if (!(comms.extra_loss >= 0.0 && comms.extra_loss <= 1.0)) {
    errors.push_back("comms.extra_loss: must lie in [0, 1]");
  }
  if (!(controller.v_min > 0.0 && controller.v_max > controller.v_min)) {
    errors.push_back("controller: airspeed limits must satisfy 0 < v_min < v_max");
  }
  for (std::size_t i = 0; i < vehicles.size(); ++i) {
    if (!skybox.contains(vehicles[i].position)) {
      errors.push_back("vehicles[" + std::to_string(i) + "].position: outside the sky-box");
    }
    if (!(vehicles[i].airspeed >= 0.0)) {
      errors.push_back("vehicles[" + std::to_string(i) + "].airspeed: must be >= 0");
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid scenario:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

std::string Scenario::hash() const {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(canonical)));
  return buf;
}

}  // namespace airship::scenario
