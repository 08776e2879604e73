#include "airship/dynamics.hpp"

#include <algorithm>
#include <numeric>

namespace airship::dynamics {

HullGeometry derive_geometry(double length, double volume) {
  if (!(length > 0.0) || !(volume > 0.0)) {
    throw ConfigError("hull length and volume must be positive");
  }
  HullGeometry g;
  g.length = length;
  g.volume = volume;
  g.semi_major = 0.5 * length;
  g.semi_minor = std::sqrt(3.0 * volume / (4.0 * kPi * g.semi_major));
  g.fineness_ratio = length / (2.0 * g.semi_minor);
  g.ref_area_frontal = kPi * g.semi_minor * g.semi_minor;
  if (g.fineness_ratio < 2.0 || g.fineness_ratio > 10.0) {
    throw ConfigError("nonphysical hull: fineness ratio " + std::to_string(g.fineness_ratio) +
                      " outside [2, 10]");
  }
  return g;
}

AddedMassFactors lamb_factors(const HullGeometry& hull) {
  const double ratio = hull.semi_minor / hull.semi_major;
  const double e = std::sqrt(1.0 - ratio * ratio);
  const double e2 = e * e;
  const double e3 = e2 * e;
  const double log_term = std::log((1.0 + e) / (1.0 - e));
  const double alpha0 = 2.0 * (1.0 - e2) / e3 * (0.5 * log_term - e);
  const double beta0 = 1.0 / e2 - (1.0 - e2) / (2.0 * e3) * log_term;
  AddedMassFactors k;
  k.k_axial = alpha0 / (2.0 - alpha0);
  k.k_lateral = beta0 / (2.0 - beta0);
  k.k_rotational = e2 * e2 * (beta0 - alpha0) /
                   ((2.0 - e2) * (2.0 * e2 - (2.0 - e2) * (beta0 - alpha0)));
  return k;
}

PropulsionModel calibrate(const CalibrationTargets& t, double air_density) {
  const double th2 = t.throttle_high * t.throttle_high;
  const double tl2 = t.throttle_low * t.throttle_low;
  if (!(th2 > tl2) || !(t.airspeed_high > t.airspeed_low) || !(t.airspeed_low > 0.0)) {
    throw ConfigError("calibration operating points must be ordered and positive");
  }
  PropulsionModel m;
  m.power_coeff = (t.power_high - t.power_low) / (th2 - tl2);
  m.power_avionics = t.power_high - m.power_coeff * th2;
  if (m.power_avionics < 0.0) throw ConfigError("calibration yields negative avionics power");

  const double thrust_high =
      t.propulsive_efficiency * (t.power_high - m.power_avionics) / t.airspeed_high;
  m.thrust_coeff = thrust_high / th2;
  const double thrust_low = m.thrust_coeff * tl2;

  // D(v) = a v^2 + c v^3 through both drag balances.
  const double vh = t.airspeed_high, vl = t.airspeed_low;
  Eigen::Matrix2d A;
  A << vh * vh, vh * vh * vh, vl * vl, vl * vl * vl;
  const Eigen::Vector2d coeffs = A.partialPivLu().solve(Eigen::Vector2d(thrust_high, thrust_low));
  const double a = coeffs(0), c = coeffs(1);
  if (!(a > 0.0)) throw ConfigError("calibration yields non-positive quadratic drag");
  m.drag_area = 2.0 * a / air_density;
  m.flutter_speed = c > 0.0 ? a / c : std::numeric_limits<double>::infinity();
  return m;
}

AirshipModel::AirshipModel(const AirshipParams& p)
    : params(p),
      hull(derive_geometry(p.length, p.volume)),
      added(lamb_factors(hull)),
      propulsion(calibrate(p.calibration, p.air_density)) {
  displaced_air_mass = p.air_density * p.volume;
  net_heaviness = p.mass.net_heaviness(displaced_air_mass);
  const double total = p.mass.total_mass();
  if (!(total > 0.0)) throw ConfigError("total mass must be positive");

  const double rho_v = displaced_air_mass;
  effective_mass = Vec3(total + added.k_axial * rho_v, total + added.k_lateral * rho_v,
                        total + added.k_lateral * rho_v);

  const double a = hull.semi_major, b = hull.semi_minor;
  const double shell = p.mass.envelope_mass + p.mass.lift_gas_mass;
  const double fins = p.mass.fin_mass_each * p.mass.fin_count;
  const double gondola = p.mass.payload_mass + p.mass.battery_mass + p.mass.ballast_mass;
  // Gondola height chosen so the composite CG sits cg_below_cb under the CB.
  const double gondola_z = gondola > 0.0 ? p.cg_below_cb * total / gondola : 0.0;
  const double fin_radius = b + 0.3;

  double ixx = shell * 2.0 * b * b / 5.0 + fins * fin_radius * fin_radius + gondola * gondola_z * gondola_z;
  double iyy = shell * (a * a + b * b) / 5.0 + fins * p.fin_arm * p.fin_arm + gondola * gondola_z * gondola_z;
  double izz = shell * (a * a + b * b) / 5.0 + fins * p.fin_arm * p.fin_arm;
  const double added_rot = added.k_rotational * rho_v * (a * a + b * b) / 5.0;
  inertia = Vec3(ixx, iyy + added_rot, izz + added_rot);
  planform_area = kPi * a * b;

  cg_offset = Vec3(0.0, 0.0, -p.cg_below_cb);
  Eigen::Matrix<double, 6, 6> M = Eigen::Matrix<double, 6, 6>::Zero();
  M.topLeftCorner<3, 3>() = effective_mass.asDiagonal();
  M.topRightCorner<3, 3>() = -total * skew(cg_offset);
  M.bottomLeftCorner<3, 3>() = total * skew(cg_offset);
  M.bottomRightCorner<3, 3>() = inertia.asDiagonal();
  inverse_mass_matrix = M.inverse();
}

double AirshipModel::thrust(double throttle) const {
  return propulsion.thrust_coeff * throttle * throttle;
}

double AirshipModel::axial_drag(double airspeed) const {
  const double v = std::abs(airspeed);
  return 0.5 * params.air_density * propulsion.drag_area * v * v *
         (1.0 + v / propulsion.flutter_speed);
}

double AirshipModel::trim_throttle(double airspeed) const {
  if (airspeed <= 0.0) return 0.0;
  return std::sqrt(axial_drag(airspeed) / propulsion.thrust_coeff);
}

double AirshipModel::trim_airspeed(double throttle) const {
  const double target = thrust(throttle);
  if (target <= 0.0) return 0.0;
  double lo = 0.0, hi = 1.0;
  while (axial_drag(hi) < target) hi *= 2.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (axial_drag(mid) < target ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

ActuatorCommand ActuatorCommand::clamped(double throttle_cap) const {
  const double cap = std::clamp(throttle_cap, 0.0, 1.0);
  ActuatorCommand c;
  c.throttle_left = std::clamp(throttle_left, 0.0, cap);
  c.throttle_right = std::clamp(throttle_right, 0.0, cap);
  c.rudder_yaw = std::clamp(rudder_yaw, -1.0, 1.0);
  c.rudder_pitch = std::clamp(rudder_pitch, -1.0, 1.0);
  return c;
}

Vec3 air_relative_body_velocity(const VehicleTrueState& s, const Vec3& wind) {
  return s.attitude.conjugate() * (s.velocity - wind);
}

ForceBreakdown compute_forces(const AirshipModel& model, const VehicleTrueState& state,
                              const ActuatorCommand& raw_cmd, const Vec3& wind) {
  const AirshipParams& p = model.params;
  const ActuatorCommand cmd = raw_cmd.clamped(p.throttle_cap);
  const double rho = p.air_density;
  const Quat& q = state.attitude;
  const Vec3 u = q.conjugate() * (state.velocity - wind);
  const Vec3& w = state.body_rates;

  Vec3 force = Vec3::Zero();
  Vec3 moment = Vec3::Zero();

  // Buoyancy at the CB (origin), weight at the CG below it.
  const double total = p.mass.total_mass();
  force += q.conjugate() * Vec3(0.0, 0.0, -model.net_heaviness * kGravity);
  const Vec3 weight_body = q.conjugate() * Vec3(0.0, 0.0, -total * kGravity);
  moment += Vec3(0.0, 0.0, -p.cg_below_cb).cross(weight_body);

  // Propellers.
  const double half = 0.5 * model.propulsion.thrust_coeff;
  const double tl = half * cmd.throttle_left * cmd.throttle_left;
  const double tr = half * cmd.throttle_right * cmd.throttle_right;
  force.x() += tl + tr;
  moment += Vec3(0.0, p.thrust_line_z * (tl + tr), -p.motor_arm * (tl - tr));

  // Hull axial drag with high-speed flutter augmentation.
  force.x() -= std::copysign(model.axial_drag(u.x()), u.x());

  // Hull cross-flow drag and linear normal force.
  const Vec3 u_perp(0.0, u.y(), u.z());
  force -= 0.5 * rho * p.crossflow_cd * model.planform_area * u_perp.norm() * u_perp;
  const double hull_ref = std::cbrt(p.volume * p.volume);
  force -= 0.5 * rho * hull_ref * p.hull_normal_slope * std::abs(u.x()) * u_perp;

  // Munk moment from the added-mass asymmetry.
  const double rho_v = model.displaced_air_mass;
  const Vec3 added_momentum(model.added.k_axial * rho_v * u.x(), model.added.k_lateral * rho_v * u.y(),
                            model.added.k_lateral * rho_v * u.z());
  moment -= u.cross(added_momentum);

  // Tail fins and rudders see the local flow including rotation.
  const Vec3 r_fin(-p.fin_arm, 0.0, 0.0);
  const Vec3 u_fin = u + w.cross(r_fin);
  const double fin_gain = 0.5 * rho * p.fin_area * p.fin_lift_slope * std::abs(u_fin.x());
  Vec3 fin_force(0.0, -fin_gain * u_fin.y(), -fin_gain * u_fin.z());
  const double q_fin = 0.5 * rho * u_fin.x() * std::abs(u_fin.x());
  fin_force.y() += q_fin * p.rudder_effectiveness * cmd.rudder_yaw;
  fin_force.z() -= q_fin * p.rudder_effectiveness * cmd.rudder_pitch;
  force += fin_force;
  moment += r_fin.cross(fin_force);

  moment -= (p.rot_damping_linear + p.rot_damping_quadratic * w.norm()) * w;

  return {force, moment};
}

VehicleTrueState step_dynamics(const AirshipModel& model, const VehicleTrueState& state,
                               const ActuatorCommand& cmd, const Vec3& wind, double dt) {
  if (!(dt > 0.0) || dt > 0.05) throw std::invalid_argument("dt must lie in (0, 0.05]");
  const ForceBreakdown fm = compute_forces(model, state, cmd, wind);

  const Vec3& I = model.inertia;
  const Vec3& w = state.body_rates;
  const Vec3& r = model.cg_offset;
  const double m = model.params.mass.total_mass();
  Eigen::Matrix<double, 6, 1> rhs;
  rhs.head<3>() = fm.force_body - m * w.cross(w.cross(r));
  rhs.tail<3>() = fm.moment_body - w.cross(I.cwiseProduct(w));
  const Eigen::Matrix<double, 6, 1> acc = model.inverse_mass_matrix * rhs;
  const Vec3 accel_body = acc.head<3>();
  const Vec3 ang_accel = acc.tail<3>();

  VehicleTrueState next;
  next.velocity = state.velocity + dt * (state.attitude * accel_body);
  next.position = state.position + dt * next.velocity;
  next.body_rates = w + dt * ang_accel;
  next.attitude = (state.attitude * quat_exp(dt * next.body_rates)).normalized();
  next.airspeed = std::max(0.0, air_relative_body_velocity(next, wind).x());

  if (!next.position.allFinite() || !next.velocity.allFinite() || !next.body_rates.allFinite() ||
      !next.attitude.coeffs().allFinite()) {
    throw IntegrationFault("non-finite vehicle state after dynamics step");
  }
  return next;
}

void PowerState::accumulate(double power_w, double dt) {
  current_draw = power_w / battery_voltage;
  energy_used += power_w * dt / 3600.0;
}

double power_draw(const PropulsionModel& prop, double throttle, double /*airspeed*/) {
  return prop.power_avionics + prop.power_coeff * throttle * throttle;
}

double endurance_estimate(std::span<const double> current_history_a, double capacity_ah) {
  if (current_history_a.empty()) throw std::invalid_argument("empty current history");
  if (!(capacity_ah > 0.0)) throw std::invalid_argument("battery capacity must be positive");
  const double mean = std::accumulate(current_history_a.begin(), current_history_a.end(), 0.0) /
                      static_cast<double>(current_history_a.size());
  if (mean <= 0.0) return kUnlimitedEndurance;
  return capacity_ah / mean * 60.0;
}

double cruise_endurance_minutes(const AirshipModel& model, double airspeed) {
  const double throttle = model.trim_throttle(airspeed);
  const double current =
      power_draw(model.propulsion, throttle, airspeed) / model.params.battery_voltage;
  const double history[] = {current};
  return endurance_estimate(history, model.params.battery_capacity_ah);
}

}  // namespace airship::dynamics
