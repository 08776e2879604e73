#pragma once

#include "airship/common.hpp"

#include <string>
#include <vector>

namespace airship::subject {

enum class Behavior { graze, walk, trot, scripted };

std::string to_string(Behavior b);
Behavior behavior_from_string(const std::string& s);

struct ScriptPoint {
  double time;
  Vec2 position;
};

/// Reads `time_s, x_m, y_m` rows; a non-numeric first line is taken as a header.
/// Throws ConfigError on malformed rows or non-increasing time.
std::vector<ScriptPoint> load_trajectory_csv(const std::string& path);

struct SubjectConfig {
  Behavior behavior{Behavior::graze};
  Vec2 start{Vec2::Zero()};
  double graze_cap{0.3};
  double walk_cap{1.5};
  double trot_cap{4.0};
  double speed{0.0};            // walk/trot cruise speed, 0 = behavior cap
  double jitter{0.05};          // m/s, graze velocity noise std
  double jitter_time_constant{4.0};
  double anchor_pull{0.05};     // 1/s
  std::vector<Vec2> waypoints;  // walk/trot; looped
  bool loop_waypoints{true};
  double wander_radius{60.0};   // random waypoints when none are given
  double arrival_radius{0.5};
  std::vector<ScriptPoint> script;

  void validate() const;
  double cap() const;
};

struct SubjectState {
  Vec3 position{Vec3::Zero()};
  Vec2 velocity{Vec2::Zero()};
  Behavior behavior{Behavior::graze};
  Vec2 anchor{Vec2::Zero()};
  std::size_t waypoint{0};
  Vec2 target{Vec2::Zero()};
  bool has_target{false};
  double time{0.0};
  bool script_exhausted{false};
};

SubjectState initial_subject(const SubjectConfig& cfg);

struct StepEvents {
  bool script_exhausted{false};  // set on the step the script ran out
};

SubjectState step_subject(const SubjectState& state, const SubjectConfig& cfg, double dt, Rng& rng,
                          StepEvents* events = nullptr);

/// Linear interpolation of a script at `time`, clamped to its ends.
Vec2 script_position(const std::vector<ScriptPoint>& script, double time);

}  // namespace airship::subject
