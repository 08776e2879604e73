#include "airship/environment.hpp"

#include <algorithm>

namespace airship::environment {

void GustProcess::advance(double dt, Rng& rng) {
  if (!std::isfinite(time_constant)) return;
  const double phi = std::exp(-dt / time_constant);
  const double scale = std::sqrt(std::max(0.0, 1.0 - phi * phi));
  for (int i = 0; i < 3; ++i) {
    state(i) = phi * state(i) + stationary_std(i) * scale * standard_normal(rng);
  }
}

double ThermalColumn::vertical_at(const Vec2& current_center, const Vec2& xy) const {
  const double r2 = (xy - current_center).squaredNorm();
  const double cutoff2 = 9.0 * radius * radius;
  if (r2 >= cutoff2) return 0.0;
  const double floor = std::exp(-4.5);
  const double g = std::exp(-0.5 * r2 / (radius * radius));
  return peak_vertical * (g - floor) / (1.0 - floor);
}

EnvironmentConfig regime(const std::string& name) {
  EnvironmentConfig c;
  if (name == "calm") {
    c.mean_wind = Vec3(0.5, 0.0, 0.0);
    c.gusts_enabled = true;
    c.gust_std = Vec3(0.2, 0.2, 0.05);
  } else if (name == "field") {
    c.mean_wind = Vec3(6.0, 0.0, 0.0);
    c.gusts_enabled = true;
    c.gust_std = Vec3(1.0, 1.0, 0.3);
  } else if (name == "storm") {
    c.mean_wind = Vec3(10.0, 0.0, 0.0);
    c.gusts_enabled = true;
    c.gust_time_constant = 3.0;
    c.gust_std = Vec3(2.5, 2.5, 0.8);
    c.thermal_spawn_rate = 1.0 / 60.0;
  } else if (name != "none") {
    throw ConfigError("unknown wind regime '" + name + "'");
  }
  return c;
}

WindField::WindField(EnvironmentConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)), rng_(seed), thermals_(cfg_.thermals) {
  if (!(cfg_.hard_cap > 0.0)) throw ConfigError("wind hard cap must be positive");
  for (const auto& th : thermals_) {
    if (!(th.radius > 0.0)) throw ConfigError("thermal radius must be positive");
  }
  gust_.time_constant = cfg_.gusts_enabled ? cfg_.gust_time_constant
                                           : std::numeric_limits<double>::infinity();
  gust_.stationary_std = cfg_.gusts_enabled ? cfg_.gust_std : Vec3::Zero();
  if (cfg_.gusts_enabled) {
    for (int i = 0; i < 3; ++i) gust_.state(i) = gust_.stationary_std(i) * standard_normal(rng_);
  }
}

Vec2 WindField::thermal_center(const ThermalColumn& th, double time) const {
  const double age = std::max(0.0, time - th.birth);
  return th.center + cfg_.mean_wind.head<2>() * age;
}

WindSample WindField::sample_wind(const Vec3& position, double time) const {
  Vec3 w = cfg_.mean_wind + gust_.state;
  const Vec2 xy = position.head<2>();
  for (const auto& th : thermals_) {
    if (th.active(time)) w.z() += th.vertical_at(thermal_center(th, time), xy);
  }
  const double n = w.norm();
  if (n > cfg_.hard_cap) w *= cfg_.hard_cap / n;
  return {w};
}

void WindField::advance_environment(double dt) {
  if (!(dt > 0.0)) throw std::invalid_argument("dt must be positive");
  gust_.advance(dt, rng_);
  time_ += dt;

  if (cfg_.thermal_spawn_rate > 0.0) {
    if (uniform01(rng_) < 1.0 - std::exp(-cfg_.thermal_spawn_rate * dt)) {
      ThermalColumn th;
      const double r = cfg_.thermal_spawn_radius * std::sqrt(uniform01(rng_));
      const double a = 2.0 * kPi * uniform01(rng_);
      th.center = Vec2(r * std::cos(a), r * std::sin(a));
      th.radius = cfg_.thermal_radius;
      th.peak_vertical = (uniform01(rng_) < 0.5 ? 1.0 : -1.0) * cfg_.thermal_peak;
      th.birth = time_;
      th.death = time_ + cfg_.thermal_lifetime;
      thermals_.push_back(th);
    }
  }
  std::erase_if(thermals_, [this](const ThermalColumn& th) { return th.death < time_; });
}

}  // namespace airship::environment
