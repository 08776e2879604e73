#pragma once

#include "airship/common.hpp"

#include <optional>
#include <span>

namespace airship::dynamics {

/// Prolate-spheroid equivalent of the hull.
struct HullGeometry {
  double length{};            // m
  double volume{};            // m^3
  double semi_major{};        // m
  double semi_minor{};        // m
  double fineness_ratio{};    // length / max diameter
  double ref_area_frontal{};  // m^2
};

/// Fineness ratio must land in [2, 10]; anything else throws ConfigError.
HullGeometry derive_geometry(double length, double volume);

/// Lamb's inertia coefficients for a prolate spheroid.
struct AddedMassFactors {
  double k_axial{};
  double k_lateral{};
  double k_rotational{};
};

AddedMassFactors lamb_factors(const HullGeometry& hull);

struct MassBudget {
  double envelope_mass{0.430};
  double fin_mass_each{0.200};
  int fin_count{3};
  double lift_gas_mass{0.643};
  double payload_mass{1.737};
  double battery_mass{1.000};
  double ballast_mass{0.300};

  double total_mass() const {
    return envelope_mass + fin_mass_each * fin_count + lift_gas_mass + payload_mass + battery_mass +
           ballast_mass;
  }
  /// Total mass minus displaced air mass (positive = heavier than air).
  double net_heaviness(double displaced_air_mass) const {
    return total_mass() - displaced_air_mass;
  }
};

/// Measured operating points the propulsion and drag models are fitted to.
struct CalibrationTargets {
  double throttle_high{0.8};
  double airspeed_high{11.0};  // m/s
  double power_high{333.0};    // W
  double throttle_low{0.4};
  double airspeed_low{6.0};    // m/s
  double power_low{100.0};     // W
  double propulsive_efficiency{0.45};
};

/// Coefficients derived from CalibrationTargets; see calibrate().
struct PropulsionModel {
  double thrust_coeff{};       // N per throttle^2 (both motors)
  double drag_area{};          // C_d * A, m^2, quadratic axial drag
  double flutter_speed{};      // m/s; axial drag scales by (1 + v / flutter_speed)
  double power_avionics{};     // W
  double power_coeff{};        // W per throttle^2
};

PropulsionModel calibrate(const CalibrationTargets& targets, double air_density);

struct AirshipParams {
  double length{5.5};
  double volume{3.6};
  MassBudget mass{};
  CalibrationTargets calibration{};
  double air_density{1.225};

  double cg_below_cb{0.5};          // m, gondola pendulum arm
  double thrust_line_z{-0.35};      // m, body z of propellers
  double motor_arm{0.25};           // m, lateral offset of each propeller
  double crossflow_cd{0.6};         // on planform area pi*a*b
  double hull_normal_slope{0.6};    // per rad, on volume^(2/3)
  double fin_area{1.2};             // m^2, effective per control plane
  double fin_lift_slope{3.0};       // per rad
  double fin_arm{2.4};              // m aft of centre of buoyancy
  double rudder_effectiveness{0.6}; // m^2 equivalent area at full deflection
  double rot_damping_linear{0.8};   // N m s
  double rot_damping_quadratic{3.0};// N m s^2
  double throttle_cap{0.8};

  double battery_capacity_ah{10.0};
  double battery_voltage{14.5};
};

/// Everything step_dynamics needs, precomputed once from AirshipParams.
struct AirshipModel {
  AirshipParams params;
  HullGeometry hull;
  AddedMassFactors added;
  PropulsionModel propulsion;
  double displaced_air_mass{};
  double net_heaviness{};
  Vec3 effective_mass;     // body axes, rigid + added
  Vec3 inertia;            // body axes about the CB, rigid + added
  Vec3 cg_offset;          // body, CG relative to CB
  /// Inverse of the 6x6 generalized mass about the CB (translation then
  /// rotation), including the CG-offset coupling.
  Eigen::Matrix<double, 6, 6> inverse_mass_matrix;
  double planform_area{};

  explicit AirshipModel(const AirshipParams& p = {});

  double thrust(double throttle) const;
  /// Axial drag magnitude at a given body-x airspeed (N).
  double axial_drag(double airspeed) const;
  /// Throttle that balances axial drag in level flight at `airspeed`.
  double trim_throttle(double airspeed) const;
  /// Inverse of trim_throttle under the same idealisation.
  double trim_airspeed(double throttle) const;
};

struct VehicleTrueState {
  Vec3 position{Vec3::Zero()};   // world ENU, m
  Vec3 velocity{Vec3::Zero()};   // world, m/s
  Quat attitude{Quat::Identity()};  // body (FLU) -> world
  Vec3 body_rates{Vec3::Zero()};    // rad/s
  double airspeed{0.0};          // along body x relative to air, >= 0
};

struct ActuatorCommand {
  double throttle_left{0.0};
  double throttle_right{0.0};
  double rudder_yaw{0.0};    // +1 turns right (clockwise seen from above)
  double rudder_pitch{0.0};  // +1 pitches nose up

  /// Clamps every channel to its range and throttles to `throttle_cap`.
  ActuatorCommand clamped(double throttle_cap) const;
};

/// Body-frame air-relative velocity.
Vec3 air_relative_body_velocity(const VehicleTrueState& s, const Vec3& wind);

struct ForceBreakdown {
  Vec3 force_body;
  Vec3 moment_body;
};

ForceBreakdown compute_forces(const AirshipModel& model, const VehicleTrueState& state,
                              const ActuatorCommand& cmd, const Vec3& wind);

/// Semi-implicit Euler step. dt must lie in (0, 0.05]. Throws IntegrationFault
/// when the result is not finite.
VehicleTrueState step_dynamics(const AirshipModel& model, const VehicleTrueState& state,
                               const ActuatorCommand& cmd, const Vec3& wind, double dt);

struct PowerState {
  double battery_capacity{10.0};  // Ah
  double battery_voltage{14.5};   // V
  double current_draw{0.0};       // A
  double energy_used{0.0};        // Wh

  /// Integrates `power_w` over dt (rectangle rule) and refreshes current_draw.
  void accumulate(double power_w, double dt);
};

/// Electrical power at a throttle setting; airspeed is accepted for interface
/// symmetry but the fitted model depends on throttle only.
double power_draw(const PropulsionModel& prop, double throttle, double airspeed);

inline constexpr double kUnlimitedEndurance = -1.0;

/// Battery capacity divided by mean current of the history, in minutes.
/// Returns kUnlimitedEndurance when the mean current is zero.
double endurance_estimate(std::span<const double> current_history_a, double capacity_ah);

/// Endurance at steady level cruise at `airspeed`, using the trim map.
double cruise_endurance_minutes(const AirshipModel& model, double airspeed);

}  // namespace airship::dynamics
