#include "airship/simulation.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <thread>

namespace airship::sim {

using telemetry::quat_json;
using telemetry::vec_json;

namespace {

constexpr double kDt = 1.0 / kPhysicsHz;

Json setpoints_json(const control::Setpoints& sp) {
  return {{"airspeed", sp.airspeed},
          {"turn_rate", sp.turn_rate},
          {"climb_rate", sp.climb_rate},
          {"mode", control::to_string(sp.mode)}};
}

std::string guard_name(control::GuardState g) {
  switch (g) {
    case control::GuardState::pass: return "pass";
    case control::GuardState::guarding: return "guarding";
    case control::GuardState::emergency: return "emergency";
  }
  return "pass";
}

}  // namespace

Simulation::Simulation(scenario::Scenario sc, std::optional<std::uint64_t> seed_override)
    : sc_(std::move(sc)), seed_(seed_override.value_or(sc_.seed)) {
  sc_.validate();
  model_ = std::make_unique<dynamics::AirshipModel>(sc_.airship);
  wind_ = std::make_unique<environment::WindField>(sc_.environment,
                                                   derive_seed(seed_, "environment"));
  network_ = std::make_unique<perception::Network>(sc_.comms, derive_seed(seed_, "comms"));
  subject_ = subject::initial_subject(sc_.subject);
  subject_rng_.seed(derive_seed(seed_, "subject"));
  end_tick_ = static_cast<std::int64_t>(std::llround(sc_.duration * kPhysicsHz));

  for (std::size_t i = 0; i < sc_.vehicles.size(); ++i) {
    const auto& spec = sc_.vehicles[i];
    VehicleRuntime v;
    v.id = static_cast<int>(i);
    v.spec = spec;
    v.truth.position = spec.position;
    v.truth.attitude = quat_from_euler(0.0, 0.0, spec.heading);
    v.truth.airspeed = spec.airspeed;
    v.truth.velocity = v.truth.attitude * Vec3(spec.airspeed, 0.0, 0.0) +
                       wind_->sample_wind(spec.position).vector;
    v.sensors = std::make_unique<estimation::SensorSuite>(sc_.sensor_noise, sc_.sensor_rates,
                                                          kPhysicsHz);
    v.nav = std::make_unique<estimation::NavFilter>(sc_.ekf, v.truth, 0.0);
    v.fc = std::make_unique<control::FlightController>(sc_.controller, *model_);
    v.mode = spec.mode;
    v.rate_setpoints = {std::max(spec.airspeed, sc_.controller.v_min), 0.0, 0.0,
                        control::Mode::rate};
    v.manual_setpoints = v.rate_setpoints;
    v.manual_setpoints.mode = control::Mode::manual;
    v.planner_setpoints = v.rate_setpoints;
    v.hold_point = spec.position;
    v.power.battery_capacity = sc_.airship.battery_capacity_ah;
    v.power.battery_voltage = sc_.airship.battery_voltage;
    v.tracker = perception::CooperativeTracker(sc_.tracker);
    v.sensor_rng.seed(derive_seed(seed_, "sensors", i));
    v.detection_rng.seed(derive_seed(seed_, "detection", i));
    if (sc_.track_initialized) v.tracker.reinitialize(subject_.position.head<2>(), 0.0);
    if (v.mode == control::Mode::autonomous && !sc_.track_initialized) v.mode = control::Mode::rate;
    vehicles_.push_back(std::move(v));
  }
}

Simulation::~Simulation() = default;

Json Simulation::header() const {
  return {{"kind", "header"},
          {"t", 0},
          {"schema_version", telemetry::kSchemaVersion},
          {"scenario", sc_.name},
          {"scenario_hash", sc_.hash()},
          {"seed", seed_},
          {"duration", sc_.duration},
          {"vehicles", static_cast<int>(vehicles_.size())},
          {"physics_hz", kPhysicsHz},
          {"telemetry_hz", sc_.telemetry_hz},
          {"camera",
           {{"azimuth", sc_.camera.mount_azimuth},
            {"depression", sc_.camera.mount_depression},
            {"hfov", sc_.camera.hfov},
            {"vfov", sc_.camera.vfov},
            {"max_range", sc_.camera.max_range}}},
          {"skybox", {{"min", vec_json(sc_.skybox.min_corner)}, {"max", vec_json(sc_.skybox.max_corner)}}},
          {"battery",
           {{"capacity_ah", sc_.airship.battery_capacity_ah},
            {"voltage", sc_.airship.battery_voltage}}},
          {"standoff_altitude", sc_.mpc.standoff_altitude}};
}

void Simulation::emit(Json rec) {
  if (sink_) sink_(rec);
}

void Simulation::event(const std::string& name, Json fields) {
  fields["kind"] = "event";
  fields["t"] = time_us();
  fields["event"] = name;
  emit(std::move(fields));
}

void Simulation::start() {
  if (started_) return;
  started_ = true;
  emit(header());
  if (!vehicles_.empty()) emit_telemetry();
  if (end_tick_ <= 0) finish();
}

void Simulation::enqueue(Command c) {
  std::lock_guard<std::mutex> lock(queue_mutex_);
  queue_.push_back(std::move(c));
}

void Simulation::drain_commands() {
  std::deque<Command> pending;
  {
    std::lock_guard<std::mutex> lock(queue_mutex_);
    pending.swap(queue_);
  }
  for (const Command& c : pending) apply_command(c);
}

void Simulation::apply_command(const Command& c) {
  emit({{"kind", "command"},
        {"t", time_us()},
        {"command", c.kind},
        {"seq", c.seq},
        {"client", c.client},
        {"payload", c.payload}});
  auto ack = [&](bool accepted, const std::string& reason = "") {
    Json f = {{"seq", c.seq}, {"client", c.client}, {"command", c.kind}, {"accepted", accepted}};
    if (!reason.empty()) f["reason"] = reason;
    event("ack", std::move(f));
  };
  auto vehicle_index = [&](const Json& p) -> std::optional<std::size_t> {
    if (!p.contains("vehicle") || !p["vehicle"].is_number_integer()) return std::nullopt;
    const auto id = p["vehicle"].get<std::int64_t>();
    if (id < 0 || id >= static_cast<std::int64_t>(vehicles_.size())) return std::nullopt;
    return static_cast<std::size_t>(id);
  };

  try {
    const Json& p = c.payload;
    if (c.kind == "select_subject") {
      const auto vi = vehicle_index(p);
      if (!vi) return ack(false, "unknown vehicle");
      const Vec2 px(p.at("u").get<double>(), p.at("v").get<double>());
      if (!(px.array() >= 0.0).all() || !(px.array() <= 1.0).all()) {
        return ack(false, "pixel outside image");
      }
      const auto& est = vehicles_[*vi].nav->estimate();
      const auto pose = perception::camera_pose(est.position, est.attitude, sc_.camera);
      Vec3 g;
      try {
        g = perception::pixel_to_ground(pose, sc_.camera, px);
      } catch (const perception::NoGroundIntersection&) {
        return ack(false, "no ground intersection");
      }
      for (auto& v : vehicles_) v.tracker.reinitialize(g.head<2>(), time());
      event("track_reinitialized", {{"point", vec_json(Vec2(g.head<2>()))}, {"source", *vi}});
      return ack(true);
    }
    if (c.kind == "set_mode") {
      const auto vi = vehicle_index(p);
      if (!vi) return ack(false, "unknown vehicle");
      const control::Mode m = control::mode_from_string(p.at("mode").get<std::string>());
      VehicleRuntime& v = vehicles_[*vi];
      if (m == control::Mode::autonomous && !v.tracker.track().initialized) {
        return ack(false, "no subject selected");
      }
      if (m == control::Mode::waypoint && v.spec.waypoints.empty()) {
        return ack(false, "no waypoints configured");
      }
      if (m == control::Mode::hold_position) v.hold_point = v.nav->estimate().position;
      if (m == control::Mode::waypoint) v.waypoint_index = 0;
      if (m == control::Mode::rate) v.rate_setpoints.airspeed = std::max(v.nav->estimate().airspeed, sc_.controller.v_min);
      const std::string from = control::to_string(v.mode);
      v.mode = m;
      event("mode_change", {{"vehicle", v.id}, {"from", from}, {"to", control::to_string(m)}});
      return ack(true);
    }
    if (c.kind == "manual_control") {
      const auto vi = vehicle_index(p);
      if (!vi) return ack(false, "unknown vehicle");
      VehicleRuntime& v = vehicles_[*vi];
      if (v.mode != control::Mode::manual) return ack(false, "vehicle not in manual mode");
      v.manual_setpoints.airspeed = p.value("airspeed", v.manual_setpoints.airspeed);
      v.manual_setpoints.turn_rate = p.value("turn_rate", v.manual_setpoints.turn_rate);
      v.manual_setpoints.climb_rate = p.value("climb_rate", v.manual_setpoints.climb_rate);
      return ack(true);
    }
    if (c.kind == "set_rate") {
      const auto vi = vehicle_index(p);
      if (!vi) return ack(false, "unknown vehicle");
      VehicleRuntime& v = vehicles_[*vi];
      v.rate_setpoints.airspeed = p.value("airspeed", v.rate_setpoints.airspeed);
      v.rate_setpoints.turn_rate = p.value("turn_rate", v.rate_setpoints.turn_rate);
      v.rate_setpoints.climb_rate = p.value("climb_rate", v.rate_setpoints.climb_rate);
      return ack(true);
    }
    if (c.kind == "sim_control") return ack(false, "pacing is not available in this run");
    return ack(false, "unknown command");
  } catch (const std::exception& e) {
    return ack(false, std::string("malformed payload: ") + e.what());
  }
}

void Simulation::deliver_messages() {
  auto arrivals = network_->deliver_until(time());
  if (arrivals.empty()) return;
  std::vector<bool> touched(vehicles_.size(), false);
  for (auto& [rx, m] : arrivals) {
    vehicles_[static_cast<std::size_t>(rx)].tracker.add_measurement(m);
    touched[static_cast<std::size_t>(rx)] = true;
  }
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    if (!touched[i]) continue;
    vehicles_[i].tracker.step(time());
    ++counters_.tracker_steps;
  }
}

void Simulation::run_perception() {
  ++counters_.perception;
  const double now = time();
  std::vector<Vec3> positions;
  for (const auto& v : vehicles_) positions.push_back(v.truth.position);
  for (auto& v : vehicles_) {
    const auto true_pose = perception::camera_pose(v.truth.position, v.truth.attitude, sc_.camera);
    const auto& est = v.nav->estimate();
    const auto est_pose = perception::camera_pose(est.position, est.attitude, sc_.camera);
    const auto projection = perception::project_subject(true_pose, sc_.camera, subject_.position);
    auto det = perception::simulate_detection(projection, v.tracker.track(), est_pose, sc_.camera,
                                              sc_.detection, now, v.id, v.detection_rng);
    if (!det) continue;
    auto m = perception::detection_to_measurement(*det, est_pose, sc_.camera, est.covariance,
                                                  sc_.tracker);
    if (!m) continue;
    m->sequence = v.detection_seq++;
    v.tracker.add_measurement(*m);
    network_->broadcast(v.id, *m, positions, now);
    emit({{"kind", "detection"},
          {"t", time_us()},
          {"vehicle", v.id},
          {"pixel", vec_json(det->pixel)},
          {"stamp", det->timestamp},
          {"ground", vec_json(m->position)},
          {"ground_std", std::sqrt(m->covariance.trace() / 2.0)}});
  }
  for (auto& v : vehicles_) {
    v.tracker.step(now);
    ++counters_.tracker_steps;
    if (v.tracker.take_reset_event()) event("track_reset", {{"vehicle", v.id}});
  }
}

void Simulation::run_planner() {
  std::vector<std::size_t> ids;
  for (std::size_t i = 0; i < vehicles_.size(); ++i) {
    if (vehicles_[i].mode == control::Mode::autonomous) ids.push_back(i);
  }
  if (ids.empty()) {
    plan_.reset();
    return;
  }
  ++counters_.planner;
  std::vector<estimation::NavEstimate> states;
  std::vector<formation::Control> previous;
  for (std::size_t i : ids) {
    const auto& v = vehicles_[i];
    states.push_back(v.nav->estimate());
    const auto& sp = v.planner_setpoints;
    previous.emplace_back(sp.airspeed, sp.turn_rate, sp.climb_rate);
  }
  // Shared inputs come from the lowest-id autonomous vehicle.
  const VehicleRuntime& lead = vehicles_[ids.front()];
  const perception::SubjectTrack track = lead.tracker.track();

  const formation::FormationPlan* warm =
      plan_ && plan_->vehicles.size() == ids.size() ? &*plan_ : nullptr;
  formation::FormationPlan plan = formation::plan_formation(
      states, track, lead.wind_estimate, sc_.mpc, warm, sc_.skybox, &previous);

  for (std::size_t k = 1; k < plan.cost_history.size(); ++k) {
    if (plan.cost_history[k] > plan.cost_history[k - 1]) {
      event("planner_not_monotone", {{"iteration", k}});
      break;
    }
  }
  if (plan.fault) event("plan_fault", Json::object());

  Json ids_json = Json::array();
  for (std::size_t k = 0; k < ids.size(); ++k) {
    VehicleRuntime& v = vehicles_[ids[k]];
    const formation::Control& u = plan.vehicles[k].controls.front();
    v.planner_setpoints = {u(0), u(1), u(2), control::Mode::autonomous};
    v.has_plan = true;
    ids_json.push_back(v.id);
  }
  const auto& b = plan.breakdown;
  emit({{"kind", "plan_summary"},
        {"t", time_us()},
        {"vehicles", ids_json},
        {"cost", plan.total_cost},
        {"terms",
         {{"camera", b.camera},
          {"distance", b.distance},
          {"separation", b.separation},
          {"control_rate", b.control_rate},
          {"speed", b.speed},
          {"vehicle_penalty", b.vehicle_penalty},
          {"subject_penalty", b.subject_penalty},
          {"skybox_penalty", b.skybox_penalty},
          {"airspeed_penalty", b.airspeed_penalty}}},
        {"iterations", plan.iterations},
        {"residuals",
         {{"vehicle_distance", plan.residuals.vehicle_distance},
          {"subject_distance", plan.residuals.subject_distance},
          {"skybox", plan.residuals.skybox},
          {"airspeed", plan.residuals.airspeed}}},
        {"degraded", plan.degraded},
        {"fault", plan.fault}});
  plan_ = std::move(plan);
}

control::Setpoints Simulation::mode_setpoints(VehicleRuntime& v) {
  const auto& est = v.nav->estimate();
  const auto& cc = sc_.controller;
  switch (v.mode) {
    case control::Mode::manual: return v.manual_setpoints;
    case control::Mode::rate: return v.rate_setpoints;
    case control::Mode::autonomous: return v.planner_setpoints;
    case control::Mode::hold_position: {
      control::Setpoints sp = control::waypoint_nav(est, v.hold_point, cc.v_min, cc);
      const double d = (v.hold_point.head<2>() - est.position.head<2>()).norm();
      if (d < cc.capture_radius) sp.turn_rate = std::min(cc.v_min / cc.capture_radius, cc.max_turn_rate);
      sp.mode = control::Mode::hold_position;
      return sp;
    }
    case control::Mode::waypoint: {
      const auto& wps = v.spec.waypoints;
      if (wps.empty()) return v.rate_setpoints;
      const Vec3& target = wps[v.waypoint_index % wps.size()];
      if ((target.head<2>() - est.position.head<2>()).norm() < cc.capture_radius) {
        v.waypoint_index = (v.waypoint_index + 1) % wps.size();
      }
      return control::waypoint_nav(est, wps[v.waypoint_index % wps.size()],
                                   v.rate_setpoints.airspeed, cc);
    }
  }
  return v.rate_setpoints;
}

void Simulation::emit_telemetry() {
  ++counters_.telemetry;
  const std::int64_t t = time_us();
  emit({{"kind", "true_state"},
        {"t", t},
        {"entity", "subject"},
        {"p", vec_json(subject_.position)},
        {"v", vec_json(subject_.velocity)},
        {"behavior", subject::to_string(subject_.behavior)}});
  for (const auto& v : vehicles_) {
    const auto& s = v.truth;
    emit({{"kind", "true_state"},
          {"t", t},
          {"vehicle", v.id},
          {"p", vec_json(s.position)},
          {"v", vec_json(s.velocity)},
          {"q", quat_json(s.attitude)},
          {"w", vec_json(s.body_rates)},
          {"airspeed", s.airspeed}});
    const auto& e = v.nav->estimate();
    const auto& P = e.covariance;
    emit({{"kind", "nav_estimate"},
          {"t", t},
          {"vehicle", v.id},
          {"p", vec_json(e.position)},
          {"v", vec_json(e.velocity)},
          {"q", quat_json(e.attitude)},
          {"airspeed", e.airspeed},
          {"pos_std", vec_json(Vec3(P.diagonal().segment<3>(0).cwiseSqrt()))},
          {"att_std", vec_json(Vec3(P.diagonal().segment<3>(6).cwiseSqrt()))},
          {"rejected", v.nav->rejected()}});
    Json sp = setpoints_json(v.applied);
    sp["kind"] = "setpoints";
    sp["t"] = t;
    sp["vehicle"] = v.id;
    sp["vehicle_mode"] = control::to_string(v.mode);
    sp["guard"] = guard_name(v.guard);
    emit(std::move(sp));
    const auto& a = v.actuators;
    emit({{"kind", "actuators"},
          {"t", t},
          {"vehicle", v.id},
          {"throttle_left", a.throttle_left},
          {"throttle_right", a.throttle_right},
          {"rudder_yaw", a.rudder_yaw},
          {"rudder_pitch", a.rudder_pitch}});
    emit({{"kind", "power"},
          {"t", t},
          {"vehicle", v.id},
          {"power_w", v.power_w},
          {"current_a", v.power.current_draw},
          {"energy_wh", v.power.energy_used}});
    emit({{"kind", "wind_truth"}, {"t", t}, {"vehicle", v.id}, {"w", vec_json(v.wind_truth)}});
    emit({{"kind", "wind_estimate"},
          {"t", t},
          {"vehicle", v.id},
          {"w", vec_json(v.wind_estimate.vector)},
          {"confidence", v.wind_estimate.confidence}});
    const auto& tr = v.tracker.track();
    Json cov = Json::array();
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) cov.push_back(tr.covariance(r, c));
    }
    emit({{"kind", "track"},
          {"t", t},
          {"vehicle", v.id},
          {"initialized", tr.initialized},
          {"mean", {tr.mean(0), tr.mean(1), tr.mean(2), tr.mean(3)}},
          {"cov", cov}});
  }
}

bool Simulation::step() {
  if (!started_) start();
  if (finished_) return false;
  try {
    drain_commands();
    deliver_messages();
    if (tick_ % kPerceptionDivider == 0) run_perception();
    if (tick_ % kPlannerDivider == 0) run_planner();

    const double now = time();
    for (auto& v : vehicles_) {
      control::Setpoints sp = mode_setpoints(v);
      const auto guarded = control::skybox_guard(v.nav->estimate(), sp, sc_.skybox, sc_.controller,
                                                  v.wind_estimate.vector);
      if (guarded.state != v.guard) {
        event("guard", {{"vehicle", v.id}, {"state", guard_name(guarded.state)}});
        v.guard = guarded.state;
      }
      v.applied = guarded.setpoints;
      v.actuators = v.fc->fc_step(v.nav->estimate(), v.applied, kDt, now);
      const double rms = std::sqrt(0.5 * (v.actuators.throttle_left * v.actuators.throttle_left +
                                          v.actuators.throttle_right * v.actuators.throttle_right));
      v.power_w = dynamics::power_draw(model_->propulsion, rms, v.truth.airspeed);
      v.power.accumulate(v.power_w, kDt);
    }

    std::vector<dynamics::VehicleTrueState> previous;
    for (auto& v : vehicles_) {
      previous.push_back(v.truth);
      v.wind_truth = wind_->sample_wind(v.truth.position).vector;
      v.truth = dynamics::step_dynamics(*model_, v.truth, v.actuators, v.wind_truth, kDt);
    }
    ++counters_.physics;
    wind_->advance_environment(kDt);
    ++tick_;

    for (std::size_t i = 0; i < vehicles_.size(); ++i) {
      auto& v = vehicles_[i];
      const auto frame =
          v.sensors->simulate_sensors(v.truth, previous[i], v.wind_truth, tick_, v.sensor_rng);
      if (frame.imu) v.nav->predict(*frame.imu, kDt);
      v.nav->update(frame);
      if (v.nav->take_reset_event()) event("ekf_reset", {{"vehicle", v.id}});
      if (frame.pitot) {
        const auto& e = v.nav->estimate();
        v.wind_estimate = formation::estimate_wind(
            v.wind_estimate, e.velocity.head<2>(), e.airspeed, e.heading(), e.turn_rate(),
            1.0 / sc_.sensor_rates.pitot_hz, sc_.wind_estimator);
      }
    }

    if (tick_ % kSubjectDivider == 0) {
      ++counters_.subject;
      subject::StepEvents ev;
      subject_ = subject::step_subject(subject_, sc_.subject,
                                       static_cast<double>(kSubjectDivider) / kPhysicsHz,
                                       subject_rng_, &ev);
      if (ev.script_exhausted) event("script_exhausted", Json::object());
    }

    if (!vehicles_.empty() && tick_ % (kPhysicsHz / sc_.telemetry_hz) == 0) emit_telemetry();
  } catch (const IntegrationFault& e) {
    faulted_ = true;
    event("fault", {{"what", e.what()}});
    finish("fault");
    return false;
  }
  if (tick_ >= end_tick_) {
    finish();
    return false;
  }
  return true;
}

void Simulation::run_to_end() {
  if (!started_) start();
  while (step()) {
  }
}

void Simulation::finish(const std::string& reason) {
  if (finished_) return;
  finished_ = true;
  event("end", {{"reason", reason}});
}

RunResult run_scenario(scenario::Scenario sc, const std::string& out_dir, const RunOptions& opts) {
  if (opts.duration) sc.duration = *opts.duration;
  Simulation sim(std::move(sc), opts.seed);
  std::filesystem::create_directories(out_dir);
  const std::string stem = sim.scenario().name + "_" + std::to_string(sim.seed());
  RunResult result;
  result.log_path = (std::filesystem::path(out_dir) / (stem + ".jsonl")).string();
  result.metrics_path = (std::filesystem::path(out_dir) / (stem + "_metrics.csv")).string();
  {
    telemetry::LogWriter writer(result.log_path);
    sim.set_sink([&writer](const Json& r) { writer.write(r); });
    sim.start();
    const auto wall0 = std::chrono::steady_clock::now();
    while (sim.step()) {
      if (opts.realtime && sim.tick() % 50 == 0) {
        std::this_thread::sleep_until(wall0 + std::chrono::microseconds(sim.time_us()));
      }
    }
  }
  result.fault = sim.faulted();
  result.metrics = telemetry::compute_metrics(telemetry::read_log(result.log_path));
  std::ofstream csv(result.metrics_path);
  csv << telemetry::metrics_csv_header() << "\n"
      << telemetry::metrics_csv_row(result.metrics, sim.scenario().name, sim.seed()) << "\n";
  return result;
}

}  // namespace airship::sim
