#pragma once

#include "airship/common.hpp"
#include "airship/control.hpp"
#include "airship/estimation.hpp"
#include "airship/perception.hpp"

#include <optional>
#include <string>
#include <vector>

namespace airship::formation {

struct WindEstimate {
  Vec2 vector{Vec2::Zero()};
  double vertical{0.0};
  double confidence{0.0};     // 0 before any accepted sample, -> 1 with settled history
  double time_constant{5.0};  // s
  bool initialized{false};
  double accepted_time{0.0};  // s of accepted samples
};

struct WindEstimatorConfig {
  double time_constant{5.0};
  double turn_gate{0.2};  // rad/s
};

/// v_ground - airspeed * (cos psi, sin psi).
Vec2 instantaneous_wind(const Vec2& groundspeed, double airspeed, double heading);

/// Low-pass update; samples with |turn_rate| above the gate are ignored.
WindEstimate estimate_wind(const WindEstimate& prev, const Vec2& groundspeed, double airspeed,
                           double heading, double turn_rate, double dt,
                           const WindEstimatorConfig& cfg = {});

struct MpcConfig {
  int horizon{20};
  double dt{0.5};
  double w_cam{40.0};
  double w_sep{4.0};
  double w_dist{0.02};
  double w_u{2.0};
  double w_speed{0.05};
  double w_penalty{20.0};
  double standoff_altitude{30.0};
  double camera_depression{deg2rad(30.0)};
  double camera_azimuth{deg2rad(90.0)};
  double d_vehicle{20.0};
  double r_subject_min{15.0};
  double v_min{4.0};
  double v_max{11.0};
  double v_pref{5.0};
  double max_turn_rate{0.3};
  double max_climb_rate{1.0};
  int iterations{50};
  /// Steady bank (rad) per m/s^2 of lateral acceleration; tilts the boresight.
  double bank_per_accel{0.1};
  Vec3 control_scale{1.0, 0.1, 0.5};  // airspeed, turn rate, climb rate
  double skybox_inset{20.0};
  double overflight_smoothing{0.5};   // m, keeps the distance differentiable at 0
  double slowest_time_constant{4.0};  // s, vehicle response used in validation

  void validate() const;
  /// Horizontal standoff that centers the subject at the standoff altitude.
  double standoff_radius() const { return standoff_altitude / std::tan(camera_depression); }
};

/// Kinematic state of the MPC plant: x, y, z, heading.
using PlantState = Eigen::Vector4d;
/// airspeed, turn_rate (positive right), climb_rate.
using Control = Eigen::Vector3d;

PlantState plant_state(const estimation::NavEstimate& est);

/// Exact-arc step of the unicycle-with-climb displaced by `wind`.
PlantState plant_step(const PlantState& x, const Control& u, const Vec2& wind, double dt);

std::vector<PlantState> rollout(const PlantState& initial, const std::vector<Control>& controls,
                                const Vec2& wind, double dt);
std::vector<PlantState> rollout(const estimation::NavEstimate& initial,
                                const std::vector<Control>& controls, const Vec2& wind,
                                const MpcConfig& cfg);

struct CostBreakdown {
  double camera{0.0};
  double distance{0.0};
  double separation{0.0};
  double control_rate{0.0};
  double speed{0.0};
  double vehicle_penalty{0.0};
  double subject_penalty{0.0};
  double skybox_penalty{0.0};
  double airspeed_penalty{0.0};

  double total() const {
    return camera + distance + separation + control_rate + speed + vehicle_penalty +
           subject_penalty + skybox_penalty + airspeed_penalty;
  }
};

/// Everything the cost depends on besides the control sequences.
struct PlanningProblem {
  std::vector<PlantState> initial;   // per vehicle
  std::vector<Control> previous;     // per vehicle, last applied setpoint
  Vec2 subject{Vec2::Zero()};
  Vec2 subject_velocity{Vec2::Zero()};
  Vec2 wind{Vec2::Zero()};
  std::optional<control::SkyBox> skybox;
  MpcConfig cfg;

  int vehicles() const { return static_cast<int>(initial.size()); }
};

/// Controls flattened vehicle-major: [vehicle][step][channel].
using ControlVector = Eigen::VectorXd;

CostBreakdown evaluate_cost(const PlanningProblem& problem, const ControlVector& u);
/// Cost and its exact gradient with respect to u (adjoint pass).
double cost_and_gradient(const PlanningProblem& problem, const ControlVector& u,
                         ControlVector& gradient);

ControlVector clamp_controls(const PlanningProblem& problem, const ControlVector& u);

struct VehiclePlan {
  std::vector<Control> controls;
  std::vector<PlantState> trajectory;  // horizon + 1 states, starting at the initial one
};

struct ConstraintResiduals {
  double vehicle_distance{0.0};  // m below d_vehicle, 0 when satisfied
  double subject_distance{0.0};  // m below r_subject_min
  double skybox{0.0};            // m outside the inset box
  double airspeed{0.0};          // m/s outside bounds
};

struct FormationPlan {
  std::vector<VehiclePlan> vehicles;
  double total_cost{0.0};
  CostBreakdown breakdown;
  ConstraintResiduals residuals;
  std::vector<double> cost_history;  // one entry per accepted iterate, starting with the initial
  int iterations{0};
  bool degraded{false};
  bool fault{false};
};

/// Warm start for the next call: every vehicle's controls shifted one step.
FormationPlan shift_plan(const FormationPlan& plan);

ControlVector solve(const PlanningProblem& problem, const ControlVector& initial,
                    std::vector<double>* cost_history = nullptr);

FormationPlan plan_formation(const std::vector<estimation::NavEstimate>& states,
                             const perception::SubjectTrack& track, const WindEstimate& wind,
                             const MpcConfig& cfg, const FormationPlan* warm_start = nullptr,
                             const std::optional<control::SkyBox>& skybox = std::nullopt,
                             const std::vector<Control>* previous = nullptr);

}  // namespace airship::formation
