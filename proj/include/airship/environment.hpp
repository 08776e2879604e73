#pragma once

#include "airship/common.hpp"

#include <array>
#include <limits>
#include <vector>

namespace airship::environment {

struct WindSample {
  Vec3 vector{Vec3::Zero()};  // world, m/s
};

/// Per-axis Ornstein-Uhlenbeck gust process, discretised exactly.
struct GustProcess {
  Vec3 state{Vec3::Zero()};
  double time_constant{std::numeric_limits<double>::infinity()};  // s
  Vec3 stationary_std{Vec3::Zero()};

  /// x <- phi x + sigma sqrt(1 - phi^2) n, phi = exp(-dt / tau).
  void advance(double dt, Rng& rng);
};

struct ThermalColumn {
  Vec2 center{Vec2::Zero()};  // at birth; drifts with the horizontal mean wind
  double radius{30.0};
  double peak_vertical{2.0};  // + updraft, - microburst
  double birth{0.0};
  double death{std::numeric_limits<double>::infinity()};

  bool active(double t) const { return t >= birth && t <= death; }
  /// Tapered Gaussian profile: exactly `peak_vertical` at the centre, zero at
  /// and beyond three radii, continuous everywhere.
  double vertical_at(const Vec2& current_center, const Vec2& xy) const;
};

struct EnvironmentConfig {
  Vec3 mean_wind{Vec3::Zero()};
  bool gusts_enabled{false};
  double gust_time_constant{5.0};
  Vec3 gust_std{1.0, 1.0, 0.3};
  std::vector<ThermalColumn> thermals;
  double thermal_spawn_rate{0.0};  // per second, Poisson
  double thermal_spawn_radius{200.0};  // spawn disc around origin, m
  double thermal_radius{30.0};
  double thermal_peak{1.5};        // magnitude; sign drawn 50/50
  double thermal_lifetime{120.0};
  double hard_cap{25.0};
};

/// Named regimes: "calm", "field", "storm".
EnvironmentConfig regime(const std::string& name);

class WindField {
 public:
  WindField(EnvironmentConfig cfg, std::uint64_t seed);

  /// Mean + gust + active thermals at `position` and the current field time.
  /// Read-only; `time` must equal the field's current time (asserted loosely:
  /// thermal activity is evaluated at `time`).
  WindSample sample_wind(const Vec3& position, double time) const;
  WindSample sample_wind(const Vec3& position) const { return sample_wind(position, time_); }

  void advance_environment(double dt);

  double time() const { return time_; }
  const GustProcess& gust() const { return gust_; }
  const std::vector<ThermalColumn>& thermals() const { return thermals_; }
  const EnvironmentConfig& config() const { return cfg_; }
  Vec2 thermal_center(const ThermalColumn& th, double time) const;

 private:
  EnvironmentConfig cfg_;
  Rng rng_;
  GustProcess gust_;
  std::vector<ThermalColumn> thermals_;
  double time_{0.0};
};

}  // namespace airship::environment
