#include "airship/subject.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace airship;
using namespace airship::subject;

namespace {

std::string write_tmp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << body;
  return path.string();
}

}  // namespace

TEST_CASE("zero-jitter graze stays put") {
  SubjectConfig cfg;
  cfg.start = {3, -4};
  cfg.jitter = 0.0;
  SubjectState s = initial_subject(cfg);
  Rng rng(1);
  for (int i = 0; i < 6000; ++i) s = step_subject(s, cfg, 0.05, rng);
  CHECK((s.position.head<2>() - cfg.start).norm() < 1e-12);
}

TEST_CASE("graze respects its speed cap and wanders slowly") {
  SubjectConfig cfg;
  cfg.jitter = 2.0;  // far above the cap
  SubjectState s = initial_subject(cfg);
  Rng rng(4);
  for (int i = 0; i < 20000; ++i) {
    const Vec2 before = s.position.head<2>();
    s = step_subject(s, cfg, 0.05, rng);
    REQUIRE((s.position.head<2>() - before).norm() / 0.05 <= cfg.graze_cap + 1e-9);
  }
}

TEST_CASE("walk 100 m at 1.5 m/s arrives in about 70 s") {
  SubjectConfig cfg;
  cfg.behavior = Behavior::walk;
  cfg.waypoints = {Vec2(100, 0)};
  cfg.loop_waypoints = false;
  SubjectState s = initial_subject(cfg);
  Rng rng(1);
  double arrived = -1.0;
  for (int i = 0; i < 2000 && arrived < 0.0; ++i) {
    s = step_subject(s, cfg, 0.05, rng);
    REQUIRE(s.velocity.norm() <= cfg.walk_cap + 1e-9);
    if ((s.position.head<2>() - Vec2(100, 0)).norm() <= cfg.arrival_radius) arrived = s.time;
  }
  CHECK(arrived == doctest::Approx(70.0).epsilon(5.0 / 70.0));
  CHECK(arrived == doctest::Approx(99.5 / 1.5).epsilon(0.01));
}

TEST_CASE("trot speed setting is clipped to the cap") {
  SubjectConfig cfg;
  cfg.behavior = Behavior::trot;
  cfg.speed = 20.0;
  cfg.waypoints = {Vec2(500, 0)};
  SubjectState s = initial_subject(cfg);
  Rng rng(1);
  s = step_subject(s, cfg, 0.1, rng);
  CHECK(s.velocity.norm() == doctest::Approx(cfg.trot_cap));
}

TEST_CASE("script interpolation and exhaustion event") {
  SubjectConfig cfg;
  cfg.behavior = Behavior::scripted;
  cfg.script = {{0.0, Vec2(0, 0)}, {10.0, Vec2(20, 10)}};
  cfg.validate();
  CHECK((script_position(cfg.script, 5.0) - Vec2(10, 5)).norm() < 1e-12);
  CHECK(script_position(cfg.script, -1.0) == Vec2(0, 0));
  CHECK(script_position(cfg.script, 99.0) == Vec2(20, 10));
  SubjectState s = initial_subject(cfg);
  Rng rng(1);
  int events = 0;
  for (int i = 0; i < 300; ++i) {
    StepEvents ev;
    s = step_subject(s, cfg, 0.05, rng, &ev);
    events += ev.script_exhausted;
  }
  CHECK(events == 1);
  CHECK(s.script_exhausted);
  CHECK(s.position.head<2>() == Vec2(20, 10));
}

TEST_CASE("script faster than trot is rejected") {
  SubjectConfig cfg;
  cfg.behavior = Behavior::scripted;
  cfg.script = {{0.0, Vec2(0, 0)}, {1.0, Vec2(10, 0)}};
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.script.clear();
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("same seed gives the same path") {
  SubjectConfig cfg;
  cfg.behavior = Behavior::walk;  // random waypoints
  SubjectState a = initial_subject(cfg), b = a;
  Rng ra(7), rb(7);
  for (int i = 0; i < 5000; ++i) {
    a = step_subject(a, cfg, 0.05, ra);
    b = step_subject(b, cfg, 0.05, rb);
    REQUIRE(a.position == b.position);
  }
  CHECK(a.position.head<2>().norm() > 0.0);
}

TEST_CASE("trajectory csv loading") {
  const auto ok = write_tmp("airship_subject_ok.csv", "time_s,x_m,y_m\n0,0,0\n2.5, 1.0,-1\n\n5,2,0\n");
  const auto pts = load_trajectory_csv(ok);
  REQUIRE(pts.size() == 3);
  CHECK(pts[1].time == 2.5);
  CHECK(pts[1].position == Vec2(1.0, -1.0));

  CHECK_THROWS_AS(load_trajectory_csv(write_tmp("airship_subject_bad.csv", "0,0,0\n1,x,2\n")), ConfigError);
  CHECK_THROWS_AS(load_trajectory_csv(write_tmp("airship_subject_order.csv", "0,0,0\n0,1,1\n")), ConfigError);
  CHECK_THROWS_AS(load_trajectory_csv("/nonexistent/path.csv"), ConfigError);
}

TEST_CASE("behavior names") {
  for (Behavior b : {Behavior::graze, Behavior::walk, Behavior::trot, Behavior::scripted}) {
    CHECK(behavior_from_string(to_string(b)) == b);
  }
  CHECK_THROWS_AS(behavior_from_string("fly"), ConfigError);
  Rng rng(1);
  CHECK_THROWS(step_subject(SubjectState{}, SubjectConfig{}, 0.0, rng));
}
