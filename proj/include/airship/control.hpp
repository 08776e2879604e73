#pragma once

#include "airship/common.hpp"
#include "airship/dynamics.hpp"
#include "airship/estimation.hpp"

#include <optional>
#include <string>

namespace airship::control {

enum class Mode { manual, rate, hold_position, waypoint, autonomous };

std::string to_string(Mode m);
/// Throws std::invalid_argument on unknown names.
Mode mode_from_string(const std::string& s);

struct Setpoints {
  double airspeed{6.0};   // m/s
  double turn_rate{0.0};  // rad/s, positive = right turn (clockwise from above)
  double climb_rate{0.0}; // m/s
  Mode mode{Mode::rate};
};

struct SkyBox {
  Vec3 min_corner{-400.0, -400.0, 5.0};
  Vec3 max_corner{400.0, 400.0, 120.0};
  double margin{10.0};

  void validate() const;
  bool contains(const Vec3& p) const;
  /// Distance outside the box, 0 when inside.
  double excursion(const Vec3& p) const;
  Vec3 center() const { return 0.5 * (min_corner + max_corner); }
};

struct PidGains {
  double kp{0.0};
  double ki{0.0};
  double kd{0.0};
  double output_min{-1.0};
  double output_max{1.0};
  double integrator_limit{1.0};  // |ki * integral| bound
};

/// PID with clamped output and a bounded integrator contribution.
class PidLoop {
 public:
  PidLoop() = default;
  explicit PidLoop(PidGains g) : gains_(g) {}

  /// `rate` is the measured derivative of the controlled variable; the D term
  /// acts on it (not on the error) to avoid setpoint kicks.
  double update(double error, double rate, double dt);
  void reset() { integral_ = 0.0; }
  double integrator() const { return gains_.ki * integral_; }
  const PidGains& gains() const { return gains_; }

 private:
  PidGains gains_{};
  double integral_{0.0};
};

struct ControllerConfig {
  double v_min{4.0};
  double v_max{11.0};
  double throttle_cap{0.8};
  double max_turn_rate{0.35};   // rad/s
  double max_climb_rate{1.5};   // m/s
  double max_pitch{deg2rad(20.0)};
  double stale_timeout{0.5};    // s
  double reference_airspeed{8.0};  // gain-schedule reference, m/s

  PidGains airspeed{0.06, 0.015, 0.0, -0.5, 0.5, 0.2};
  PidGains turn{6.0, 3.0, 0.0, -1.0, 1.0, 0.6};
  PidGains climb{deg2rad(8.0), deg2rad(2.0), 0.0, -deg2rad(20.0), deg2rad(20.0), deg2rad(12.0)};
  PidGains pitch{2.0, 0.5, 1.2, -1.0, 1.0, 0.5};
  double turn_damping{1.0};     // rudder per rad/s of yaw acceleration proxy (D on rate)

  // Guard and navigation
  double geofence_lookahead{10.0};  // s
  double guard_turn_gain{1.5};     // rad/s per rad of bearing error
  bool manual_bypasses_geofence{false};
  double waypoint_turn_gain{1.0};
  double waypoint_climb_gain{0.3};
  double capture_radius{60.0};
  double emergency_airspeed{8.0};
};

/// Direct stick mapping used in manual mode (no cascades).
dynamics::ActuatorCommand manual_mapping(const Setpoints& sp, const ControllerConfig& cfg,
                                         const dynamics::AirshipModel& model);

enum class GuardState { pass, guarding, emergency };

struct GuardResult {
  Setpoints setpoints;
  GuardState state{GuardState::pass};
  bool vertical_override{false};
  bool horizontal_override{false};
};

/// Replaces setpoints that would carry the vehicle out of the box within the
/// lookahead. Returns the input unchanged when nothing is predicted to exit.
/// `wind` (horizontal estimate) sets the crab angle and airspeed of the return leg.
GuardResult skybox_guard(const estimation::NavEstimate& est, const Setpoints& sp,
                         const SkyBox& box, const ControllerConfig& cfg,
                         const Vec2& wind = Vec2::Zero());

/// Air heading that holds ground `course` at `airspeed` in `wind`; into the wind if it cannot.
double crab_heading(double course, double airspeed, const Vec2& wind);

/// Bearing P-controller towards `target`; airspeed is max(v, v_min).
Setpoints waypoint_nav(const estimation::NavEstimate& est, const Vec3& target, double airspeed,
                       const ControllerConfig& cfg);

struct FcStatus {
  bool stale_estimate{false};
};

/// Cascaded airspeed / turn-rate / climb-rate controller.
class FlightController {
 public:
  FlightController(ControllerConfig cfg, const dynamics::AirshipModel& model);

  /// `now` is the controller clock used to judge estimate staleness.
  dynamics::ActuatorCommand fc_step(const estimation::NavEstimate& est, const Setpoints& sp,
                                    double dt, double now);

  const FcStatus& status() const { return status_; }
  const ControllerConfig& config() const { return cfg_; }
  const PidLoop& airspeed_loop() const { return airspeed_; }
  const PidLoop& turn_loop() const { return turn_; }
  const PidLoop& climb_loop() const { return climb_; }
  const PidLoop& pitch_loop() const { return pitch_; }
  void reset();

  /// Clamp applied to every setpoint before the cascade.
  Setpoints clamp_setpoints(const Setpoints& sp) const;

 private:
  double schedule(double airspeed) const;

  ControllerConfig cfg_;
  const dynamics::AirshipModel* model_;
  PidLoop airspeed_, turn_, climb_, pitch_;
  FcStatus status_;
};

}  // namespace airship::control
