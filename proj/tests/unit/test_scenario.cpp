#include "airship/scenario.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace airship;
using namespace airship::scenario;

namespace {

const char* kPair = R"(
name = "pair"
duration = 120.0
seed = 42

[environment]
regime = "field"

[subject]
behavior = "walk"
waypoints = [[0.0, 0.0], [40.0, 0.0]]

[[vehicles]]
position = [0.0, -52.0, 30.0]
heading_deg = 0.0

[[vehicles]]
position = [0.0, 52.0, 30.0]
heading_deg = 180.0
mode = "rate"
)";

}  // namespace

TEST_CASE("parse a two vehicle scenario") {
  const Scenario s = parse_scenario(kPair);
  CHECK(s.name == "pair");
  CHECK(s.duration == 120.0);
  CHECK(s.seed == 42);
  REQUIRE(s.vehicles.size() == 2);
  CHECK(s.vehicles[1].position == Vec3(0, 52, 30));
  CHECK(s.vehicles[1].heading == doctest::Approx(kPi));
  CHECK(s.vehicles[1].mode == control::Mode::rate);
  CHECK(s.vehicles[0].mode == control::Mode::autonomous);
  CHECK(s.subject.behavior == subject::Behavior::walk);
  CHECK(s.subject.waypoints.size() == 2);
  CHECK(s.mpc.camera_depression == doctest::Approx(s.camera.mount_depression));
}

TEST_CASE("unknown and mistyped keys are all reported") {
  const std::string bad = R"(
duration = "long"
colour = "red"
[mpc]
horizn = 20
[[vehicles]]
position = [1.0, 2.0]
)";
  try {
    parse_scenario(bad);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("duration") != std::string::npos);
    CHECK(msg.find("colour") != std::string::npos);
    CHECK(msg.find("mpc.horizn") != std::string::npos);
    CHECK(msg.find("position") != std::string::npos);
  }
}

TEST_CASE("syntax errors and semantic errors are ConfigError") {
  CHECK_THROWS_AS(parse_scenario("duration = = 3"), ConfigError);
  CHECK_THROWS_AS(parse_scenario("duration = -1.0"), ConfigError);
  CHECK_THROWS_AS(parse_scenario("telemetry_hz = 7"), ConfigError);
  CHECK_THROWS_AS(parse_scenario("[environment]\nregime = \"hurricane\""), ConfigError);
  CHECK_THROWS_AS(parse_scenario("[[vehicles]]\nposition = [0.0, 0.0, 5000.0]"), ConfigError);
  CHECK_THROWS_AS(load_scenario("/nonexistent.toml"), ConfigError);
}

TEST_CASE("hash ignores formatting and tracks content") {
  const std::string reformatted = std::string("# comment\n") + kPair + "\n\n";
  CHECK(parse_scenario(kPair).hash() == parse_scenario(reformatted).hash());
  std::string changed = kPair;
  changed.replace(changed.find("seed = 42"), 9, "seed = 43");
  CHECK(parse_scenario(kPair).hash() != parse_scenario(changed).hash());
  CHECK(parse_scenario(kPair).hash().size() == 16);
}

TEST_CASE("shipped scenarios load") {
  const std::filesystem::path dir = std::filesystem::path(AIRSHIP_SOURCE_DIR) / "scenarios";
  int count = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".toml") continue;
    CAPTURE(entry.path().string());
    CHECK_NOTHROW(load_scenario(entry.path().string()));
    ++count;
  }
  CHECK(count >= 4);
}

TEST_CASE("scripted subject path is resolved relative to the scenario") {
  const auto dir = std::filesystem::temp_directory_path() / "airship_scn";
  std::filesystem::create_directories(dir);
  std::ofstream(dir / "path.csv") << "time_s,x_m,y_m\n0,0,0\n10,10,0\n";
  std::ofstream(dir / "s.toml") << "[subject]\nbehavior = \"scripted\"\nscript = \"path.csv\"\n";
  const Scenario s = load_scenario((dir / "s.toml").string());
  CHECK(s.subject.script.size() == 2);
}
