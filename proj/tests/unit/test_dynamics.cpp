#include "airship/dynamics.hpp"

#include <doctest.h>

#include <vector>

using namespace airship;
using namespace airship::dynamics;

namespace {

VehicleTrueState fly(const AirshipModel& m, VehicleTrueState s, const ActuatorCommand& c, const Vec3& wind,
                     double seconds, double dt = 0.002) {
  const int n = static_cast<int>(std::lround(seconds / dt));
  for (int i = 0; i < n; ++i) s = step_dynamics(m, s, c, wind, dt);
  return s;
}

}  // namespace

TEST_CASE("hull geometry of the 5.5 m, 3.6 m^3 envelope") {
  const auto h = derive_geometry(5.5, 3.6);
  // spheroid volume (4/3) pi a b^2 solved for b
  const double b = std::sqrt(3.0 * 3.6 / (4.0 * kPi * 2.75));
  CHECK(h.semi_major == doctest::Approx(2.75));
  CHECK(h.semi_minor == doctest::Approx(b).epsilon(1e-12));
  CHECK(h.semi_minor == doctest::Approx(0.559).epsilon(1e-3));
  CHECK(h.fineness_ratio == doctest::Approx(5.5 / (2.0 * b)));
  CHECK(h.fineness_ratio == doctest::Approx(4.92).epsilon(1e-3));
}

TEST_CASE("constructed inverse and invalid fineness") {
  const auto h = derive_geometry(2.0, 4.0 / 3.0 * kPi * 1.0 * 0.25);
  CHECK(h.semi_minor == doctest::Approx(0.5).epsilon(1e-12));
  CHECK_THROWS_AS(derive_geometry(1.0, 3.6), ConfigError);   // fatter than a sphere
  CHECK_THROWS_AS(derive_geometry(40.0, 0.5), ConfigError);  // needle
}

TEST_CASE("heavier than air: sinks with zero throttle") {
  AirshipModel m;
  CHECK(m.net_heaviness > 0.0);
  VehicleTrueState s;
  s.position = {0, 0, 50};
  s = fly(m, s, {}, Vec3::Zero(), 2.0);
  CHECK(s.velocity.z() < 0.0);
  CHECK(s.position.z() < 50.0);
}

TEST_CASE("full-cap throttle from rest reaches 11 m/s") {
  AirshipModel m;
  VehicleTrueState s;
  s.position = {0, 0, 100};
  s = fly(m, s, {0.8, 0.8, 0, 0}, Vec3::Zero(), 60.0);
  CHECK(s.airspeed == doctest::Approx(11.0).epsilon(0.5 / 11.0));
}

TEST_CASE("uniform wind frame equivalence over 10 s") {
  AirshipModel m;
  const Vec3 w(3.0, -2.0, 0.0);
  VehicleTrueState a;
  a.position = {0, 0, 60};
  a.velocity = {4.0, 1.0, 0.0};
  a.attitude = quat_from_euler(0.0, 0.0, 0.3);
  VehicleTrueState b = a;
  b.velocity = a.velocity - w;
  const ActuatorCommand c{0.5, 0.45, 0.2, -0.1};
  const double dt = 0.002;
  for (int i = 0; i < 5000; ++i) {
    a = step_dynamics(m, a, c, w, dt);
    b = step_dynamics(m, b, c, Vec3::Zero(), dt);
  }
  const Vec3 shift = w * 10.0;
  CHECK((a.position - b.position - shift).norm() < 1e-6);
  CHECK((a.velocity - b.velocity - w).norm() < 1e-9);
  CHECK(a.attitude.angularDistance(b.attitude) < 1e-9);
}

TEST_CASE("power model operating points") {
  AirshipModel m;
  CHECK(power_draw(m.propulsion, 0.8, 11.0) == doctest::Approx(333.0).epsilon(0.10));
  CHECK(power_draw(m.propulsion, 0.4, 6.0) == doctest::Approx(100.0).epsilon(0.15));
  CHECK(power_draw(m.propulsion, 0.0, 0.0) == doctest::Approx(m.propulsion.power_avionics));
}

TEST_CASE("endurance estimate") {
  const std::vector<double> i23(100, 23.0);
  CHECK(endurance_estimate(i23, 10.0) == doctest::Approx(10.0 / 23.0 * 60.0));
  CHECK(endurance_estimate(i23, 10.0) == doctest::Approx(26.1).epsilon(0.5 / 26.1));
  const std::vector<double> zero(10, 0.0);
  CHECK(endurance_estimate(zero, 10.0) == kUnlimitedEndurance);
  CHECK_THROWS(endurance_estimate(std::vector<double>{}, 10.0));
  AirshipModel m;
  CHECK(cruise_endurance_minutes(m, 8.0) == doctest::Approx(50.0).epsilon(0.1));
}

TEST_CASE("actuator clamp respects the throttle cap") {
  const ActuatorCommand c = ActuatorCommand{1.5, -0.2, 3.0, -4.0}.clamped(0.8);
  CHECK(c.throttle_left == 0.8);
  CHECK(c.throttle_right == 0.0);
  CHECK(c.rudder_yaw == 1.0);
  CHECK(c.rudder_pitch == -1.0);
}

TEST_CASE("trim map is strictly increasing on [0.1, 0.8]") {
  AirshipModel m;
  double prev = -1.0;
  for (double th = 0.1; th <= 0.8 + 1e-12; th += 0.05) {
    const double v = m.trim_airspeed(th);
    CHECK(v > prev);
    CHECK(m.trim_throttle(v) == doctest::Approx(th).epsilon(1e-9));
    prev = v;
  }
  // steady state of the full model agrees in direction
  VehicleTrueState s;
  s.position = {0, 0, 100};
  const double lo = fly(m, s, {0.3, 0.3, 0, 0}, Vec3::Zero(), 40.0).airspeed;
  const double hi = fly(m, s, {0.5, 0.5, 0, 0}, Vec3::Zero(), 40.0).airspeed;
  CHECK(hi > lo);
}

TEST_CASE("quaternion norm and energy monotonicity over a long maneuver") {
  AirshipModel m;
  VehicleTrueState s;
  s.position = {0, 0, 80};
  PowerState p;
  double prev_energy = 0.0;
  Rng rng(3);
  ActuatorCommand c;
  for (int i = 0; i < 100000; ++i) {
    if (i % 5000 == 0) {
      c = {uniform01(rng) * 0.8, uniform01(rng) * 0.8, 2.0 * uniform01(rng) - 1.0, 2.0 * uniform01(rng) - 1.0};
    }
    s = step_dynamics(m, s, c, Vec3(2.0, 1.0, 0.0), 0.002);
    REQUIRE(std::abs(s.attitude.norm() - 1.0) < 1e-9);
    p.accumulate(power_draw(m.propulsion, 0.5 * (c.throttle_left + c.throttle_right), s.airspeed), 0.002);
    REQUIRE(p.energy_used >= prev_energy);
    prev_energy = p.energy_used;
  }
}

TEST_CASE("invalid step size and non-finite states") {
  AirshipModel m;
  VehicleTrueState s;
  CHECK_THROWS(step_dynamics(m, s, {}, Vec3::Zero(), 0.0));
  CHECK_THROWS(step_dynamics(m, s, {}, Vec3::Zero(), 0.06));
  s.velocity.x() = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(step_dynamics(m, s, {}, Vec3::Zero(), 0.002), IntegrationFault);
}
