#pragma once

#include "airship/common.hpp"
#include "airship/dynamics.hpp"

#include <optional>

namespace airship::estimation {

using Mat15 = Eigen::Matrix<double, 15, 15>;
using Vec15 = Eigen::Matrix<double, 15, 1>;

// Error-state layout.
inline constexpr int kPos = 0;
inline constexpr int kVel = 3;
inline constexpr int kAtt = 6;
inline constexpr int kGyroBias = 9;
inline constexpr int kAccelBias = 12;

/// Horizontal magnetic north in the flat ENU world.
inline const Vec3 kMagneticNorth{0.0, 1.0, 0.0};

struct ImuSample {
  Vec3 accel{Vec3::Zero()};  // specific force, body, m/s^2
  Vec3 gyro{Vec3::Zero()};   // body, rad/s
  double time{0.0};
};
struct GpsSample {
  Vec3 position{Vec3::Zero()};
  Vec3 velocity{Vec3::Zero()};
  double time{0.0};
};
struct BaroSample {
  double altitude{0.0};
  double time{0.0};
};
struct MagSample {
  Vec3 field{Vec3::UnitY()};  // unit vector, body frame
  double time{0.0};
};
struct PitotSample {
  double airspeed{0.0};
  double time{0.0};
};

/// Channels that fired on one tick.
struct SensorFrame {
  std::optional<ImuSample> imu;
  std::optional<GpsSample> gps;
  std::optional<BaroSample> baro;
  std::optional<MagSample> mag;
  std::optional<PitotSample> pitot;
};

struct SensorNoise {
  double accel_std{0.05};
  double gyro_std{0.002};
  Vec3 accel_bias{Vec3::Zero()};
  Vec3 gyro_bias{Vec3::Zero()};
  double gps_pos_std{1.0};
  double gps_vel_std{0.1};
  double baro_std{0.3};
  double mag_std{0.02};
  double pitot_std{0.2};

  static SensorNoise zero() {
    SensorNoise n;
    n.accel_std = n.gyro_std = n.gps_pos_std = n.gps_vel_std = n.baro_std = n.mag_std =
        n.pitot_std = 0.0;
    return n;
  }
};

struct SensorRates {
  int imu_hz{500};
  int gps_hz{5};
  int baro_hz{25};
  int mag_hz{25};
  int pitot_hz{25};
};

/// Produces sensor readings from ground truth on the physics tick grid.
class SensorSuite {
 public:
  SensorSuite(SensorNoise noise, SensorRates rates, int tick_hz = 500);

  /// `previous` is the truth one physics tick earlier; the IMU integrates
  /// across [previous, truth]. `tick` is the physics tick index of `truth`.
  SensorFrame simulate_sensors(const dynamics::VehicleTrueState& truth,
                               const dynamics::VehicleTrueState& previous, const Vec3& wind,
                               std::int64_t tick, Rng& rng) const;

  const SensorNoise& noise() const { return noise_; }
  const SensorRates& rates() const { return rates_; }
  double tick_dt() const { return 1.0 / tick_hz_; }

 private:
  bool fires(std::int64_t tick, int hz) const;

  SensorNoise noise_;
  SensorRates rates_;
  int tick_hz_;
};

struct NavEstimate {
  Vec3 position{Vec3::Zero()};
  Vec3 velocity{Vec3::Zero()};
  Quat attitude{Quat::Identity()};
  Vec3 gyro_bias{Vec3::Zero()};
  Vec3 accel_bias{Vec3::Zero()};
  Mat15 covariance{Mat15::Identity()};
  double airspeed{0.0};
  double airspeed_variance{1.0};
  Vec3 body_rates{Vec3::Zero()};  // bias-corrected gyro of the last predict
  double time{0.0};

  double heading() const { return heading_of(attitude); }
  /// Nose-up positive.
  double pitch() const;
  /// Positive for a right (clockwise from above) turn.
  double turn_rate() const;
};

struct EkfConfig {
  double accel_noise{0.05};      // m/s^2 / sqrt(Hz)
  double gyro_noise{0.002};      // rad/s / sqrt(Hz)
  double gyro_bias_walk{1e-5};   // rad/s^2 / sqrt(Hz)
  double accel_bias_walk{1e-4};  // m/s^3 / sqrt(Hz)
  double gps_pos_std{1.0};
  double gps_vel_std{0.1};
  double baro_std{0.3};
  double mag_std{0.02};
  double pitot_std{0.2};
  double airspeed_walk{0.5};     // m/s / sqrt(s)
  double gate_probability{0.999};

  Vec3 init_pos_std{Vec3::Constant(2.0)};
  Vec3 init_vel_std{Vec3::Constant(0.5)};
  Vec3 init_att_std{Vec3::Constant(deg2rad(2.0))};
  double init_gyro_bias_std{0.002};
  double init_accel_bias_std{0.05};

  Mat15 initial_covariance() const;
};

enum class UpdateResult { accepted, rejected };

NavEstimate make_estimate(const dynamics::VehicleTrueState& initial, const EkfConfig& cfg,
                          double time);

/// Strapdown propagation with semi-implicit integration. dt = 0 is the
/// identity. Covariance comes back symmetrised.
NavEstimate ekf_predict(const NavEstimate& est, const ImuSample& imu, double dt,
                        const EkfConfig& cfg);

UpdateResult ekf_update(NavEstimate& est, const GpsSample& gps, const EkfConfig& cfg);
UpdateResult ekf_update(NavEstimate& est, const BaroSample& baro, const EkfConfig& cfg);
UpdateResult ekf_update(NavEstimate& est, const MagSample& mag, const EkfConfig& cfg);
/// The pitot channel drives a scalar airspeed filter carried alongside the
/// error state (wind is not part of the 15-state model).
UpdateResult ekf_update(NavEstimate& est, const PitotSample& pitot, const EkfConfig& cfg);

bool covariance_is_spd(const Mat15& p);

/// Normalized estimation error squared over position, velocity and attitude.
double nees(const NavEstimate& est, const dynamics::VehicleTrueState& truth);

/// One vehicle's filter: owns the estimate, rejection counters and resets.
class NavFilter {
 public:
  NavFilter(EkfConfig cfg, const dynamics::VehicleTrueState& initial, double time);

  void predict(const ImuSample& imu, double dt);
  /// Applies whichever measurement channels are present in the frame.
  void update(const SensorFrame& frame);

  const NavEstimate& estimate() const { return est_; }
  const EkfConfig& config() const { return cfg_; }
  int rejected() const { return rejected_; }
  int resets() const { return resets_; }
  /// True once if a reset happened since the last call.
  bool take_reset_event();

 private:
  EkfConfig cfg_;
  NavEstimate est_;
  std::optional<GpsSample> last_gps_;
  int rejected_{0};
  int resets_{0};
  bool reset_pending_{false};
};

}  // namespace airship::estimation
