#include "airship/estimation.hpp"

#include <doctest.h>

using namespace airship;
using namespace airship::estimation;
using dynamics::VehicleTrueState;

namespace {

VehicleTrueState cruising(double speed = 6.0) {
  VehicleTrueState s;
  s.position = {0, 0, 50};
  s.velocity = {speed, 0, 0};
  s.airspeed = speed;
  return s;
}

}  // namespace

TEST_CASE("zero-noise GPS equals truth") {
  SensorSuite sensors(SensorNoise::zero(), SensorRates{});
  VehicleTrueState s = cruising();
  s.position = {12.5, -3.0, 41.0};
  Rng rng(1);
  const auto f = sensors.simulate_sensors(s, s, Vec3::Zero(), 0, rng);
  REQUIRE(f.gps);
  CHECK(f.gps->position == s.position);
  CHECK(f.gps->velocity == s.velocity);
  REQUIRE(f.baro);
  CHECK(f.baro->altitude == s.position.z());
}

TEST_CASE("pitot reads 6 when hovering nose into a 6 m/s wind") {
  SensorSuite sensors(SensorNoise::zero(), SensorRates{});
  VehicleTrueState s;
  s.position = {0, 0, 30};
  s.attitude = quat_from_euler(0, 0, kPi);  // nose west
  Rng rng(1);
  const auto f = sensors.simulate_sensors(s, s, Vec3(6.0, 0.0, 0.0), 0, rng);
  REQUIRE(f.pitot);
  CHECK(f.pitot->airspeed == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("gyro bias shows up as the long-run mean error") {
  SensorNoise n = SensorNoise::zero();
  n.gyro_std = 0.01;
  n.gyro_bias = {0.003, -0.002, 0.001};
  SensorSuite sensors(n, SensorRates{});
  VehicleTrueState s = cruising();
  s.body_rates = {0.01, 0.02, -0.05};
  Rng rng(5);
  const int N = 20000;
  Vec3 sum = Vec3::Zero();
  for (int i = 0; i < N; ++i) sum += sensors.simulate_sensors(s, s, Vec3::Zero(), i, rng).imu->gyro - s.body_rates;
  const Vec3 mean = sum / N;
  for (int k = 0; k < 3; ++k) CHECK(std::abs(mean(k) - n.gyro_bias(k)) < 3.0 * n.gyro_std / std::sqrt(N));
}

TEST_CASE("sensor rates on the tick grid") {
  SensorSuite sensors(SensorNoise::zero(), SensorRates{});
  VehicleTrueState s = cruising();
  Rng rng(1);
  int imu = 0, gps = 0, baro = 0;
  for (int i = 0; i < 500; ++i) {
    const auto f = sensors.simulate_sensors(s, s, Vec3::Zero(), i, rng);
    imu += f.imu.has_value();
    gps += f.gps.has_value();
    baro += f.baro.has_value();
  }
  CHECK(imu == 500);
  CHECK(gps == 5);
  CHECK(baro == 25);
}

TEST_CASE("predict with zero dt is the identity") {
  EkfConfig cfg;
  const NavEstimate est = make_estimate(cruising(), cfg, 3.0);
  ImuSample imu;
  imu.accel = {0.3, -0.1, 9.9};
  imu.gyro = {0.01, 0.0, 0.2};
  const NavEstimate out = ekf_predict(est, imu, 0.0, cfg);
  CHECK(out.position == est.position);
  CHECK(out.velocity == est.velocity);
  CHECK(out.attitude.coeffs() == est.attitude.coeffs());
  CHECK(out.covariance == est.covariance);
}

TEST_CASE("predict-only: covariance trace strictly increases and stays SPD") {
  EkfConfig cfg;
  NavEstimate est = make_estimate(cruising(), cfg, 0.0);
  ImuSample imu;
  imu.accel = {0.0, 0.0, kGravity};
  double trace = est.covariance.trace();
  for (int i = 0; i < 2000; ++i) {
    est = ekf_predict(est, imu, 0.002, cfg);
    REQUIRE(est.covariance.trace() > trace);
    REQUIRE(covariance_is_spd(est.covariance));
    trace = est.covariance.trace();
  }
}

TEST_CASE("strapdown follows truth in straight flight with perfect IMU") {
  dynamics::AirshipModel model;
  SensorSuite sensors(SensorNoise::zero(), SensorRates{});
  EkfConfig cfg;
  VehicleTrueState s = cruising();
  NavEstimate est = make_estimate(s, cfg, 0.0);
  Rng rng(1);
  const dynamics::ActuatorCommand c{0.45, 0.45, 0, 0};
  for (int i = 1; i <= 500; ++i) {
    const auto prev = s;
    s = dynamics::step_dynamics(model, s, c, Vec3::Zero(), 0.002);
    est = ekf_predict(est, *sensors.simulate_sensors(s, prev, Vec3::Zero(), i, rng).imu, 0.002, cfg);
  }
  CHECK((est.position - s.position).norm() < 0.01);
}

TEST_CASE("zero-noise filter tracks a maneuvering vehicle for 60 s") {
  dynamics::AirshipModel model;
  SensorSuite sensors(SensorNoise::zero(), SensorRates{});
  EkfConfig cfg;
  VehicleTrueState s = cruising();
  NavFilter f(cfg, s, 0.0);
  Rng rng(1);
  dynamics::ActuatorCommand c{0.5, 0.5, 0.3, 0.1};
  double max_pos = 0.0, max_att = 0.0;
  for (int i = 1; i <= 30000; ++i) {
    if (i % 5000 == 0) c.rudder_yaw = -c.rudder_yaw;
    const auto prev = s;
    s = dynamics::step_dynamics(model, s, c, Vec3::Zero(), 0.002);
    const auto frame = sensors.simulate_sensors(s, prev, Vec3::Zero(), i, rng);
    f.predict(*frame.imu, 0.002);
    f.update(frame);
    max_pos = std::max(max_pos, (f.estimate().position - s.position).norm());
    max_att = std::max(max_att, f.estimate().attitude.angularDistance(s.attitude));
  }
  CHECK(max_pos < 0.05);
  CHECK(rad2deg(max_att) < 0.2);
  CHECK(f.resets() == 0);
}

TEST_CASE("update with the predicted value leaves the mean and shrinks covariance") {
  EkfConfig cfg;
  NavEstimate est = make_estimate(cruising(), cfg, 0.0);
  const NavEstimate before = est;
  CHECK(ekf_update(est, GpsSample{before.position, before.velocity, 0.0}, cfg) == UpdateResult::accepted);
  CHECK((est.position - before.position).norm() < 1e-12);
  CHECK((est.velocity - before.velocity).norm() < 1e-12);
  CHECK(est.covariance.trace() < before.covariance.trace());
  CHECK(est.covariance.block<6, 6>(0, 0).trace() < before.covariance.block<6, 6>(0, 0).trace());
  CHECK(covariance_is_spd(est.covariance));

  NavEstimate b = before;
  CHECK(ekf_update(b, BaroSample{before.position.z(), 0.0}, cfg) == UpdateResult::accepted);
  CHECK(b.covariance(2, 2) < before.covariance(2, 2));
  NavEstimate m = before;
  CHECK(ekf_update(m, MagSample{before.attitude.conjugate() * kMagneticNorth, 0.0}, cfg) ==
        UpdateResult::accepted);
  CHECK(m.covariance.block<3, 3>(kAtt, kAtt).trace() < before.covariance.block<3, 3>(kAtt, kAtt).trace());
  CHECK(m.attitude.angularDistance(before.attitude) < 1e-12);
}

TEST_CASE("100 sigma outlier is gated and counted") {
  EkfConfig cfg;
  NavFilter f(cfg, cruising(), 0.0);
  const NavEstimate before = f.estimate();
  SensorFrame frame;
  frame.gps = GpsSample{before.position + Vec3(100.0 * 2.2, 0, 0), before.velocity, 0.0};
  f.update(frame);
  CHECK(f.rejected() == 1);
  CHECK(f.estimate().position == before.position);
  CHECK(f.estimate().covariance == before.covariance);
}

TEST_CASE("NEES is zero at the truth and grows with error") {
  EkfConfig cfg;
  const auto s = cruising();
  NavEstimate est = make_estimate(s, cfg, 0.0);
  CHECK(nees(est, s) == doctest::Approx(0.0));
  est.position.x() += 2.0;  // one init sigma
  CHECK(nees(est, s) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("turn rate sign convention") {
  NavEstimate est;
  est.body_rates = {0, 0, -0.2};  // yawing clockwise
  CHECK(est.turn_rate() == doctest::Approx(0.2));
}
