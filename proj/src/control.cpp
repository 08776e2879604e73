#include "airship/control.hpp"

#include <algorithm>

namespace airship::control {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::manual: return "manual";
    case Mode::rate: return "rate";
    case Mode::hold_position: return "hold_position";
    case Mode::waypoint: return "waypoint";
    case Mode::autonomous: return "autonomous";
  }
  return "rate";
}

Mode mode_from_string(const std::string& s) {
  if (s == "manual") return Mode::manual;
  if (s == "rate") return Mode::rate;
  if (s == "hold_position") return Mode::hold_position;
  if (s == "waypoint") return Mode::waypoint;
  if (s == "autonomous") return Mode::autonomous;
  throw std::invalid_argument("unknown mode '" + s + "'");
}

void SkyBox::validate() const {
  if (!((max_corner - min_corner).array() > 0.0).all()) {
    throw ConfigError("sky-box max corner must exceed min corner on every axis");
  }
  if (!(margin > 0.0)) throw ConfigError("sky-box margin must be positive");
}

bool SkyBox::contains(const Vec3& p) const {
  return (p.array() >= min_corner.array()).all() && (p.array() <= max_corner.array()).all();
}

double SkyBox::excursion(const Vec3& p) const {
  const Vec3 below = (min_corner - p).cwiseMax(0.0);
  const Vec3 above = (p - max_corner).cwiseMax(0.0);
  return (below + above).norm();
}

double PidLoop::update(double error, double rate, double dt) {
  const double previous = integral_;
  integral_ += error * dt;
  if (gains_.ki > 0.0) {
    const double bound = gains_.integrator_limit / gains_.ki;
    integral_ = std::clamp(integral_, -bound, bound);
  } else {
    integral_ = 0.0;
  }
  const double raw = gains_.kp * error + gains_.ki * integral_ - gains_.kd * rate;
  const double out = std::clamp(raw, gains_.output_min, gains_.output_max);
  // Stop integrating further into saturation.
  if (out != raw && ((raw > out && error > 0.0) || (raw < out && error < 0.0))) {
    integral_ = previous;
  }
  return out;
}

dynamics::ActuatorCommand manual_mapping(const Setpoints& sp, const ControllerConfig& cfg,
                                         const dynamics::AirshipModel& model) {
  const double v = std::clamp(sp.airspeed, 0.0, cfg.v_max);
  const double throttle = std::min(model.trim_throttle(v), cfg.throttle_cap);
  dynamics::ActuatorCommand c{throttle, throttle, sp.turn_rate / cfg.max_turn_rate,
                              sp.climb_rate / cfg.max_climb_rate};
  return c.clamped(cfg.throttle_cap);
}

namespace {

double turn_towards(const estimation::NavEstimate& est, const Vec2& target, double gain,
                    double limit) {
  const Vec2 d = target - est.position.head<2>();
  const double bearing = std::atan2(d.y(), d.x());
  const double err = wrap_angle(bearing - est.heading());  // CCW positive
  return std::clamp(-gain * err, -limit, limit);
}

}  // namespace

// Air heading whose wind triangle puts the ground track on `course`; straight
// into the wind when the crosswind or headwind is too strong for `airspeed`.
double crab_heading(double course, double airspeed, const Vec2& wind) {
  const Vec2 d(std::cos(course), std::sin(course));
  const Vec2 n(-d.y(), d.x());
  const double cross = wind.dot(n);
  if (std::abs(cross) < airspeed) {
    const double offset = std::asin(-cross / airspeed);
    if (airspeed * std::cos(offset) + wind.dot(d) > 0.5) return course + offset;
  }
  if (wind.norm() < 1e-6) return course;
  return std::atan2(-wind.y(), -wind.x());
}

GuardResult skybox_guard(const estimation::NavEstimate& est, const Setpoints& sp,
                         const SkyBox& box, const ControllerConfig& cfg, const Vec2& wind) {
  GuardResult r;
  r.setpoints = sp;
  if (sp.mode == Mode::manual && cfg.manual_bypasses_geofence) return r;

  const Vec3 center = box.center();
  const Vec2 to_center = center.head<2>() - est.position.head<2>();
  const double airspeed =
      std::clamp(std::max(cfg.emergency_airspeed, wind.norm() + 2.0), cfg.v_min, cfg.v_max);
  const double heading =
      crab_heading(std::atan2(to_center.y(), to_center.x()), airspeed, wind);
  const double heading_err = wrap_angle(heading - est.heading());
  const double return_turn = std::clamp(-cfg.guard_turn_gain * heading_err, -cfg.max_turn_rate,
                                        cfg.max_turn_rate);

  if (!box.contains(est.position)) {
    r.state = GuardState::emergency;
    r.horizontal_override = r.vertical_override = true;
    r.setpoints.mode = Mode::rate;
    r.setpoints.airspeed = airspeed;
    r.setpoints.turn_rate = return_turn;
    r.setpoints.climb_rate = std::clamp(0.3 * (center.z() - est.position.z()),
                                        -cfg.max_climb_rate, cfg.max_climb_rate);
    return r;
  }

  // horizontally the vehicle also drifts while it turns onto the return heading
  const double turn_time = std::abs(heading_err) / cfg.max_turn_rate;
  const Vec2 predicted_xy =
      est.position.head<2>() + (cfg.geofence_lookahead + turn_time) * est.velocity.head<2>();
  const double predicted_z = est.position.z() + cfg.geofence_lookahead * est.velocity.z();
  const Vec3 lo = box.min_corner.array() + box.margin;
  const Vec3 hi = box.max_corner.array() - box.margin;

  const bool out_xy = predicted_xy.x() < lo.x() || predicted_xy.x() > hi.x() ||
                      predicted_xy.y() < lo.y() || predicted_xy.y() > hi.y();
  if (out_xy) {
    r.horizontal_override = true;
    r.setpoints.airspeed = airspeed;
    r.setpoints.turn_rate = return_turn;
  }
  if (predicted_z > hi.z()) {
    r.vertical_override = true;
    r.setpoints.climb_rate = -cfg.max_climb_rate;
  } else if (predicted_z < lo.z()) {
    r.vertical_override = true;
    r.setpoints.climb_rate = cfg.max_climb_rate;
  }
  if (r.horizontal_override || r.vertical_override) {
    r.state = GuardState::guarding;
    r.setpoints.mode = Mode::rate;
  }
  return r;
}

Setpoints waypoint_nav(const estimation::NavEstimate& est, const Vec3& target, double airspeed,
                       const ControllerConfig& cfg) {
  Setpoints sp;
  sp.mode = Mode::waypoint;
  sp.airspeed = std::max(airspeed, cfg.v_min);
  sp.turn_rate = turn_towards(est, target.head<2>(), cfg.waypoint_turn_gain, cfg.max_turn_rate);
  sp.climb_rate = std::clamp(cfg.waypoint_climb_gain * (target.z() - est.position.z()),
                             -cfg.max_climb_rate, cfg.max_climb_rate);
  return sp;
}

FlightController::FlightController(ControllerConfig cfg, const dynamics::AirshipModel& model)
    : cfg_(std::move(cfg)),
      model_(&model),
      airspeed_(cfg_.airspeed),
      turn_(cfg_.turn),
      climb_(cfg_.climb),
      pitch_(cfg_.pitch) {
  if (!(cfg_.v_min > 0.0) || !(cfg_.v_max > cfg_.v_min)) {
    throw ConfigError("airspeed limits must satisfy 0 < v_min < v_max");
  }
}

void FlightController::reset() {
  airspeed_.reset();
  turn_.reset();
  climb_.reset();
  pitch_.reset();
}

Setpoints FlightController::clamp_setpoints(const Setpoints& sp) const {
  Setpoints c = sp;
  c.airspeed = std::clamp(sp.airspeed, cfg_.v_min, cfg_.v_max);
  c.turn_rate = std::clamp(sp.turn_rate, -cfg_.max_turn_rate, cfg_.max_turn_rate);
  c.climb_rate = std::clamp(sp.climb_rate, -cfg_.max_climb_rate, cfg_.max_climb_rate);
  return c;
}

double FlightController::schedule(double airspeed) const {
  // Rudder authority grows with dynamic pressure.
  const double v = std::max(airspeed, 3.0);
  return std::min(4.0, (cfg_.reference_airspeed * cfg_.reference_airspeed) / (v * v));
}

dynamics::ActuatorCommand FlightController::fc_step(const estimation::NavEstimate& est,
                                                    const Setpoints& requested, double dt,
                                                    double now) {
  Setpoints sp = requested;
  status_.stale_estimate = now - est.time > cfg_.stale_timeout;
  if (status_.stale_estimate) {
    sp = Setpoints{cfg_.v_min, 0.0, 0.0, Mode::rate};
  }
  if (sp.mode == Mode::manual) {
    return manual_mapping(sp, cfg_, *model_);
  }
  sp = clamp_setpoints(sp);

  const double gain = schedule(est.airspeed);

  const double throttle =
      model_->trim_throttle(sp.airspeed) + airspeed_.update(sp.airspeed - est.airspeed, 0.0, dt);

  const double rudder_yaw = gain * turn_.update(sp.turn_rate - est.turn_rate(), 0.0, dt);

  const double pitch_target = climb_.update(sp.climb_rate - est.velocity.z(), 0.0, dt);
  const double pitch_rate = -est.body_rates.y();
  const double rudder_pitch =
      gain * pitch_.update(std::clamp(pitch_target, -cfg_.max_pitch, cfg_.max_pitch) - est.pitch(),
                           pitch_rate, dt);

  constexpr double kDifferential = 0.05;
  dynamics::ActuatorCommand cmd{throttle + kDifferential * rudder_yaw,
                                throttle - kDifferential * rudder_yaw, rudder_yaw, rudder_pitch};
  return cmd.clamped(cfg_.throttle_cap);
}

}  // namespace airship::control
