#include "airship/subject.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace airship::subject {

std::string to_string(Behavior b) {
  switch (b) {
    case Behavior::graze: return "graze";
    case Behavior::walk: return "walk";
    case Behavior::trot: return "trot";
    case Behavior::scripted: return "scripted";
  }
  return "graze";
}

Behavior behavior_from_string(const std::string& s) {
  if (s == "graze") return Behavior::graze;
  if (s == "walk") return Behavior::walk;
  if (s == "trot") return Behavior::trot;
  if (s == "scripted") return Behavior::scripted;
  throw ConfigError("unknown subject behavior '" + s + "'");
}

std::vector<ScriptPoint> load_trajectory_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open subject trajectory '" + path + "'");
  std::vector<ScriptPoint> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ss(line);
    double t, x, y;
    if (!(ss >> t >> x >> y)) {
      if (out.empty() && lineno == 1) continue;  // header
      throw ConfigError(path + ":" + std::to_string(lineno) + ": expected time_s, x_m, y_m");
    }
    if (!out.empty() && !(t > out.back().time)) {
      throw ConfigError(path + ":" + std::to_string(lineno) + ": time must strictly increase");
    }
    out.push_back({t, Vec2(x, y)});
  }
  if (out.empty()) throw ConfigError("subject trajectory '" + path + "' has no rows");
  return out;
}

double SubjectConfig::cap() const {
  switch (behavior) {
    case Behavior::graze: return graze_cap;
    case Behavior::walk: return walk_cap;
    case Behavior::trot: return trot_cap;
    case Behavior::scripted: return trot_cap;
  }
  return graze_cap;
}

void SubjectConfig::validate() const {
  if (!(graze_cap > 0.0) || !(walk_cap > 0.0) || !(trot_cap > 0.0)) {
    throw ConfigError("subject speed caps must be positive");
  }
  if (speed < 0.0) throw ConfigError("subject speed must be >= 0");
  if (jitter < 0.0 || !(jitter_time_constant > 0.0)) throw ConfigError("subject jitter invalid");
  if (behavior == Behavior::scripted) {
    if (script.empty()) throw ConfigError("scripted subject needs a trajectory");
    for (std::size_t i = 1; i < script.size(); ++i) {
      const double dt = script[i].time - script[i - 1].time;
      if (!(dt > 0.0)) throw ConfigError("subject trajectory time must strictly increase");
      if ((script[i].position - script[i - 1].position).norm() / dt > trot_cap + 1e-9) {
        throw ConfigError("subject trajectory exceeds the trot speed cap");
      }
    }
  }
}

Vec2 script_position(const std::vector<ScriptPoint>& script, double time) {
  if (script.empty()) return Vec2::Zero();
  if (time <= script.front().time) return script.front().position;
  if (time >= script.back().time) return script.back().position;
  auto it = std::upper_bound(script.begin(), script.end(), time,
                             [](double t, const ScriptPoint& p) { return t < p.time; });
  const ScriptPoint& b = *it;
  const ScriptPoint& a = *(it - 1);
  const double f = (time - a.time) / (b.time - a.time);
  return a.position + f * (b.position - a.position);
}

SubjectState initial_subject(const SubjectConfig& cfg) {
  SubjectState s;
  s.behavior = cfg.behavior;
  const Vec2 p = cfg.behavior == Behavior::scripted ? script_position(cfg.script, 0.0) : cfg.start;
  s.position = Vec3(p.x(), p.y(), 0.0);
  s.anchor = p;
  if (!cfg.waypoints.empty()) {
    s.target = cfg.waypoints.front();
    s.has_target = true;
  }
  return s;
}

namespace {

Vec2 cap_speed(const Vec2& v, double cap) {
  const double n = v.norm();
  return n > cap ? Vec2(v * (cap / n)) : v;
}

}  // namespace

SubjectState step_subject(const SubjectState& state, const SubjectConfig& cfg, double dt, Rng& rng,
                          StepEvents* events) {
  if (!(dt > 0.0)) throw std::invalid_argument("step_subject: dt must be positive");
  if (events) *events = {};
  SubjectState s = state;
  s.time = state.time + dt;
  Vec2 p = state.position.head<2>();

  switch (cfg.behavior) {
    case Behavior::graze: {
      const double tau = cfg.jitter_time_constant;
      const double decay = std::exp(-dt / tau);
      const Vec2 n(standard_normal(rng), standard_normal(rng));
      const Vec2 a(standard_normal(rng), standard_normal(rng));
      // OU velocity about zero, plus a weak pull back to a slowly drifting anchor.
      s.velocity = decay * state.velocity + cfg.jitter * std::sqrt(1.0 - decay * decay) * n;
      s.anchor = state.anchor + 0.2 * cfg.jitter * std::sqrt(dt) * a;
      const Vec2 v = cap_speed(s.velocity + cfg.anchor_pull * (s.anchor - p), cfg.cap());
      p += v * dt;
      s.velocity = cap_speed(s.velocity, cfg.cap());
      break;
    }
    case Behavior::walk:
    case Behavior::trot: {
      if (!s.has_target) {
        const double ang = 2.0 * kPi * uniform01(rng);
        const double rad = cfg.wander_radius * std::sqrt(uniform01(rng));
        s.target = cfg.start + rad * Vec2(std::cos(ang), std::sin(ang));
        s.has_target = true;
      }
      const double cruise = cfg.speed > 0.0 ? std::min(cfg.speed, cfg.cap()) : cfg.cap();
      const Vec2 d = s.target - p;
      const double dist = d.norm();
      const double travel = std::min(cruise * dt, dist);
      s.velocity = dist > 0.0 ? Vec2(d / dist * (travel / dt)) : Vec2::Zero();
      p += s.velocity * dt;
      if ((s.target - p).norm() <= cfg.arrival_radius) {
        if (!cfg.waypoints.empty()) {
          if (s.waypoint + 1 < cfg.waypoints.size() || cfg.loop_waypoints) {
            s.waypoint = (s.waypoint + 1) % cfg.waypoints.size();
            s.target = cfg.waypoints[s.waypoint];
          }
        } else {
          s.has_target = false;
        }
      }
      break;
    }
    case Behavior::scripted: {
      const Vec2 next = script_position(cfg.script, s.time);
      s.velocity = (next - p) / dt;
      p = next;
      if (!state.script_exhausted && s.time >= cfg.script.back().time) {
        s.script_exhausted = true;
        if (events) events->script_exhausted = true;
      }
      break;
    }
  }
  s.position = Vec3(p.x(), p.y(), 0.0);
  return s;
}

}  // namespace airship::subject
