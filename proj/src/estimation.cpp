#include "airship/estimation.hpp"

#include <boost/math/distributions/chi_squared.hpp>

#include <Eigen/Cholesky>

#include <map>

namespace airship::estimation {

namespace {

const Vec3 kGravityWorld(0.0, 0.0, -kGravity);

double gate_threshold(int dof, double probability) {
  thread_local std::map<std::pair<int, double>, double> cache;
  const auto key = std::make_pair(dof, probability);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const double q = boost::math::quantile(boost::math::chi_squared(dof), probability);
  cache.emplace(key, q);
  return q;
}

void symmetrize(Mat15& p) { p = 0.5 * (p + p.transpose()).eval(); }

void inject(NavEstimate& est, const Vec15& dx) {
  est.position += dx.segment<3>(kPos);
  est.velocity += dx.segment<3>(kVel);
  est.attitude = (est.attitude * quat_exp(dx.segment<3>(kAtt))).normalized();
  est.gyro_bias += dx.segment<3>(kGyroBias);
  est.accel_bias += dx.segment<3>(kAccelBias);
}

template <int M>
UpdateResult kalman_update(NavEstimate& est, const Eigen::Matrix<double, M, 1>& innovation,
                           const Eigen::Matrix<double, M, 15>& H,
                           const Eigen::Matrix<double, M, M>& R, double gate_probability) {
  using MatM = Eigen::Matrix<double, M, M>;
  const MatM S = H * est.covariance * H.transpose() + R;
  const Eigen::LDLT<MatM> ldlt(S);
  const double d2 = innovation.dot(ldlt.solve(innovation));
  if (!std::isfinite(d2) || d2 > gate_threshold(M, gate_probability)) {
    return UpdateResult::rejected;
  }
  const Eigen::Matrix<double, 15, M> K =
      ldlt.solve(H * est.covariance).transpose();  // P H^T S^-1 (S and P symmetric)
  const Vec15 dx = K * innovation;
  const Mat15 I_KH = Mat15::Identity() - K * H;
  Mat15 P = I_KH * est.covariance * I_KH.transpose() + K * R * K.transpose();
  symmetrize(P);
  est.covariance = P;
  inject(est, dx);
  return UpdateResult::accepted;
}

}  // namespace

double NavEstimate::pitch() const {
  const Vec3 fwd = attitude * Vec3::UnitX();
  return std::asin(std::clamp(fwd.z(), -1.0, 1.0));
}

double NavEstimate::turn_rate() const { return -(attitude * body_rates).z(); }

SensorSuite::SensorSuite(SensorNoise noise, SensorRates rates, int tick_hz)
    : noise_(std::move(noise)), rates_(rates), tick_hz_(tick_hz) {
  for (int hz : {rates_.imu_hz, rates_.gps_hz, rates_.baro_hz, rates_.mag_hz, rates_.pitot_hz}) {
    if (hz <= 0 || tick_hz_ % hz != 0) {
      throw ConfigError("sensor rates must divide the physics rate");
    }
  }
}

bool SensorSuite::fires(std::int64_t tick, int hz) const { return tick % (tick_hz_ / hz) == 0; }

SensorFrame SensorSuite::simulate_sensors(const dynamics::VehicleTrueState& truth,
                                          const dynamics::VehicleTrueState& previous,
                                          const Vec3& wind, std::int64_t tick, Rng& rng) const {
  const double dt = tick_dt();
  const double t = static_cast<double>(tick) * dt;
  auto noisy = [&rng](double std_dev) { return std_dev > 0.0 ? std_dev * standard_normal(rng) : 0.0; };
  auto noisy3 = [&](double std_dev) { return Vec3(noisy(std_dev), noisy(std_dev), noisy(std_dev)); };

  SensorFrame f;
  if (fires(tick, rates_.imu_hz)) {
    ImuSample imu;
    const Vec3 accel_world = (truth.velocity - previous.velocity) / dt;
    imu.accel = previous.attitude.conjugate() * (accel_world - kGravityWorld) + noise_.accel_bias +
                noisy3(noise_.accel_std);
    imu.gyro = truth.body_rates + noise_.gyro_bias + noisy3(noise_.gyro_std);
    imu.time = t;
    f.imu = imu;
  }
  if (fires(tick, rates_.gps_hz)) {
    f.gps = GpsSample{truth.position + noisy3(noise_.gps_pos_std),
                      truth.velocity + noisy3(noise_.gps_vel_std), t};
  }
  if (fires(tick, rates_.baro_hz)) {
    f.baro = BaroSample{truth.position.z() + noisy(noise_.baro_std), t};
  }
  if (fires(tick, rates_.mag_hz)) {
    Vec3 m = truth.attitude.conjugate() * kMagneticNorth + noisy3(noise_.mag_std);
    f.mag = MagSample{m.normalized(), t};
  }
  if (fires(tick, rates_.pitot_hz)) {
    const Vec3 air = dynamics::air_relative_body_velocity(truth, wind);
    f.pitot = PitotSample{std::max(0.0, std::abs(air.x()) + noisy(noise_.pitot_std)), t};
  }
  return f;
}

Mat15 EkfConfig::initial_covariance() const {
  Mat15 P = Mat15::Zero();
  P.block<3, 3>(kPos, kPos) = init_pos_std.cwiseAbs2().asDiagonal();
  P.block<3, 3>(kVel, kVel) = init_vel_std.cwiseAbs2().asDiagonal();
  P.block<3, 3>(kAtt, kAtt) = init_att_std.cwiseAbs2().asDiagonal();
  P.block<3, 3>(kGyroBias, kGyroBias) = Mat3::Identity() * init_gyro_bias_std * init_gyro_bias_std;
  P.block<3, 3>(kAccelBias, kAccelBias) =
      Mat3::Identity() * init_accel_bias_std * init_accel_bias_std;
  return P;
}

NavEstimate make_estimate(const dynamics::VehicleTrueState& initial, const EkfConfig& cfg,
                          double time) {
  NavEstimate est;
  est.position = initial.position;
  est.velocity = initial.velocity;
  est.attitude = initial.attitude;
  est.body_rates = initial.body_rates;
  est.airspeed = initial.airspeed;
  est.airspeed_variance = cfg.pitot_std * cfg.pitot_std + 1.0;
  est.covariance = cfg.initial_covariance();
  est.time = time;
  return est;
}

NavEstimate ekf_predict(const NavEstimate& est, const ImuSample& imu, double dt,
                        const EkfConfig& cfg) {
  if (dt < 0.0) throw std::invalid_argument("negative predict interval");
  if (dt == 0.0) return est;

  const Vec3 omega = imu.gyro - est.gyro_bias;
  const Vec3 f = imu.accel - est.accel_bias;
  const Mat3 R = est.attitude.toRotationMatrix();

  NavEstimate out = est;
  out.velocity = est.velocity + dt * (R * f + kGravityWorld);
  out.position = est.position + dt * out.velocity;
  out.attitude = (est.attitude * quat_exp(omega * dt)).normalized();
  out.body_rates = omega;
  out.time = est.time + dt;

  const Mat3 Rf = R * skew(f);
  Mat15 Phi = Mat15::Identity();
  Phi.block<3, 3>(kPos, kVel) = Mat3::Identity() * dt;
  Phi.block<3, 3>(kPos, kAtt) = -Rf * dt * dt;
  Phi.block<3, 3>(kPos, kAccelBias) = -R * dt * dt;
  Phi.block<3, 3>(kVel, kAtt) = -Rf * dt;
  Phi.block<3, 3>(kVel, kAccelBias) = -R * dt;
  Phi.block<3, 3>(kAtt, kAtt) = quat_exp(-omega * dt).toRotationMatrix();
  Phi.block<3, 3>(kAtt, kGyroBias) = -Mat3::Identity() * dt;

  Mat15 Q = Mat15::Zero();
  const double qa = cfg.accel_noise * cfg.accel_noise * dt;
  Q.block<3, 3>(kVel, kVel) = Mat3::Identity() * qa;
  Q.block<3, 3>(kPos, kPos) = Mat3::Identity() * qa * dt * dt;
  Q.block<3, 3>(kPos, kVel) = Mat3::Identity() * qa * dt;
  Q.block<3, 3>(kVel, kPos) = Mat3::Identity() * qa * dt;
  Q.block<3, 3>(kAtt, kAtt) = Mat3::Identity() * cfg.gyro_noise * cfg.gyro_noise * dt;
  Q.block<3, 3>(kGyroBias, kGyroBias) =
      Mat3::Identity() * cfg.gyro_bias_walk * cfg.gyro_bias_walk * dt;
  Q.block<3, 3>(kAccelBias, kAccelBias) =
      Mat3::Identity() * cfg.accel_bias_walk * cfg.accel_bias_walk * dt;

  out.covariance = Phi * est.covariance * Phi.transpose() + Q;
  symmetrize(out.covariance);
  out.airspeed_variance = est.airspeed_variance + cfg.airspeed_walk * cfg.airspeed_walk * dt;
  return out;
}

UpdateResult ekf_update(NavEstimate& est, const GpsSample& gps, const EkfConfig& cfg) {
  Eigen::Matrix<double, 6, 1> y;
  y << gps.position - est.position, gps.velocity - est.velocity;
  Eigen::Matrix<double, 6, 15> H = Eigen::Matrix<double, 6, 15>::Zero();
  H.block<3, 3>(0, kPos) = Mat3::Identity();
  H.block<3, 3>(3, kVel) = Mat3::Identity();
  Eigen::Matrix<double, 6, 6> R = Eigen::Matrix<double, 6, 6>::Zero();
  R.block<3, 3>(0, 0) = Mat3::Identity() * cfg.gps_pos_std * cfg.gps_pos_std;
  R.block<3, 3>(3, 3) = Mat3::Identity() * cfg.gps_vel_std * cfg.gps_vel_std;
  return kalman_update<6>(est, y, H, R, cfg.gate_probability);
}

UpdateResult ekf_update(NavEstimate& est, const BaroSample& baro, const EkfConfig& cfg) {
  Eigen::Matrix<double, 1, 1> y;
  y << baro.altitude - est.position.z();
  Eigen::Matrix<double, 1, 15> H = Eigen::Matrix<double, 1, 15>::Zero();
  H(0, kPos + 2) = 1.0;
  Eigen::Matrix<double, 1, 1> R;
  R << cfg.baro_std * cfg.baro_std;
  return kalman_update<1>(est, y, H, R, cfg.gate_probability);
}

UpdateResult ekf_update(NavEstimate& est, const MagSample& mag, const EkfConfig& cfg) {
  const Vec3 predicted = est.attitude.conjugate() * kMagneticNorth;
  const Vec3 y = mag.field - predicted;
  Eigen::Matrix<double, 3, 15> H = Eigen::Matrix<double, 3, 15>::Zero();
  H.block<3, 3>(0, kAtt) = skew(predicted);
  const Mat3 R = Mat3::Identity() * cfg.mag_std * cfg.mag_std;
  return kalman_update<3>(est, y, H, R, cfg.gate_probability);
}

UpdateResult ekf_update(NavEstimate& est, const PitotSample& pitot, const EkfConfig& cfg) {
  const double r = cfg.pitot_std * cfg.pitot_std;
  const double s = est.airspeed_variance + r;
  const double y = pitot.airspeed - est.airspeed;
  if (y * y / s > gate_threshold(1, cfg.gate_probability)) return UpdateResult::rejected;
  const double k = est.airspeed_variance / s;
  est.airspeed = std::max(0.0, est.airspeed + k * y);
  est.airspeed_variance = (1.0 - k) * est.airspeed_variance;
  return UpdateResult::accepted;
}

bool covariance_is_spd(const Mat15& p) {
  if (!p.allFinite()) return false;
  if (!p.isApprox(p.transpose(), 1e-9)) return false;
  const Eigen::LLT<Mat15> llt(p);
  return llt.info() == Eigen::Success;
}

double nees(const NavEstimate& est, const dynamics::VehicleTrueState& truth) {
  Eigen::Matrix<double, 9, 1> e;
  e.segment<3>(0) = truth.position - est.position;
  e.segment<3>(3) = truth.velocity - est.velocity;
  const Quat dq = est.attitude.conjugate() * truth.attitude;
  const Eigen::AngleAxisd aa(dq.normalized());
  e.segment<3>(6) = aa.angle() * aa.axis();
  const Eigen::Matrix<double, 9, 9> P = est.covariance.topLeftCorner<9, 9>();
  return e.dot(P.ldlt().solve(e));
}

NavFilter::NavFilter(EkfConfig cfg, const dynamics::VehicleTrueState& initial, double time)
    : cfg_(std::move(cfg)), est_(make_estimate(initial, cfg_, time)) {}

void NavFilter::predict(const ImuSample& imu, double dt) {
  NavEstimate next = ekf_predict(est_, imu, dt, cfg_);
  if (!covariance_is_spd(next.covariance)) {
    // Re-seed from the last GPS fix with the initial uncertainty.
    next.covariance = cfg_.initial_covariance();
    next.gyro_bias.setZero();
    next.accel_bias.setZero();
    if (last_gps_) {
      next.position = last_gps_->position;
      next.velocity = last_gps_->velocity;
    }
    ++resets_;
    reset_pending_ = true;
  }
  est_ = std::move(next);
}

void NavFilter::update(const SensorFrame& frame) {
  auto count = [this](UpdateResult r) {
    if (r == UpdateResult::rejected) ++rejected_;
  };
  if (frame.gps) {
    last_gps_ = frame.gps;
    count(ekf_update(est_, *frame.gps, cfg_));
  }
  if (frame.baro) count(ekf_update(est_, *frame.baro, cfg_));
  if (frame.mag) count(ekf_update(est_, *frame.mag, cfg_));
  if (frame.pitot) count(ekf_update(est_, *frame.pitot, cfg_));
}

bool NavFilter::take_reset_event() {
  const bool r = reset_pending_;
  reset_pending_ = false;
  return r;
}

}  // namespace airship::estimation
