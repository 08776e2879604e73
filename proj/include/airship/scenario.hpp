#pragma once

#include "airship/control.hpp"
#include "airship/dynamics.hpp"
#include "airship/environment.hpp"
#include "airship/estimation.hpp"
#include "airship/formation.hpp"
#include "airship/perception.hpp"
#include "airship/subject.hpp"

#include <string>
#include <vector>

namespace airship::scenario {

struct VehicleSpec {
  Vec3 position{0.0, -52.0, 30.0};
  double heading{0.0};   // rad, CCW from east
  double airspeed{5.0};  // m/s
  control::Mode mode{control::Mode::autonomous};
  std::vector<Vec3> waypoints;
};

struct Scenario {
  std::string name{"unnamed"};
  double duration{60.0};
  std::uint64_t seed{1};
  int telemetry_hz{10};
  bool track_initialized{true};  // subject already selected at t = 0

  std::vector<VehicleSpec> vehicles;
  dynamics::AirshipParams airship;
  environment::EnvironmentConfig environment;
  subject::SubjectConfig subject;
  control::ControllerConfig controller;
  control::SkyBox skybox;
  formation::MpcConfig mpc;
  formation::WindEstimatorConfig wind_estimator;
  estimation::SensorNoise sensor_noise;
  estimation::SensorRates sensor_rates;
  estimation::EkfConfig ekf;
  perception::CameraModel camera;
  perception::DetectionConfig detection;
  perception::TrackerConfig tracker;
  perception::CommsConfig comms;

  /// Canonical text the scenario hash is computed from.
  std::string canonical;

  /// Throws ConfigError listing every offending field.
  void validate() const;
  std::string hash() const;
};

/// `base_dir` resolves relative paths (subject scripts).
Scenario parse_scenario(const std::string& toml_text, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);

}  // namespace airship::scenario
