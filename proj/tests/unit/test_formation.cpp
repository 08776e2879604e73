#include "airship/formation.hpp"

#include <doctest.h>

#include <algorithm>

using namespace airship;
using namespace airship::formation;

namespace {

ControlVector random_controls(int n, const MpcConfig& cfg, Rng& rng) {
  ControlVector u(n * cfg.horizon * 3);
  for (Eigen::Index k = 0; k < u.size(); k += 3) {
    u(k) = 3.5 + 8.0 * uniform01(rng);  // strays past both airspeed bounds
    u(k + 1) = cfg.max_turn_rate * (2.0 * uniform01(rng) - 1.0);
    u(k + 2) = cfg.max_climb_rate * (2.0 * uniform01(rng) - 1.0);
  }
  return u;
}

PlanningProblem random_problem(int n, Rng& rng, bool with_box) {
  PlanningProblem p;
  for (int i = 0; i < n; ++i) {
    p.initial.emplace_back(160.0 * uniform01(rng) - 80.0, 160.0 * uniform01(rng) - 80.0,
                           10.0 + 40.0 * uniform01(rng), 2.0 * kPi * uniform01(rng));
    p.previous.emplace_back(4.0 + 6.0 * uniform01(rng), 0.2 * uniform01(rng) - 0.1, 0.0);
  }
  p.subject = {20.0 * uniform01(rng) - 10.0, 20.0 * uniform01(rng) - 10.0};
  p.subject_velocity = {uniform01(rng) - 0.5, uniform01(rng) - 0.5};
  p.wind = {6.0 * uniform01(rng) - 3.0, 6.0 * uniform01(rng) - 3.0};
  if (with_box) {
    control::SkyBox box;
    box.min_corner = {-60, -60, 5};
    box.max_corner = {60, 60, 45};
    p.skybox = box;
  }
  return p;
}

PlanningProblem rotated(const PlanningProblem& p, double a) {
  const Eigen::Rotation2Dd R(a);
  PlanningProblem q = p;
  for (auto& x : q.initial) {
    const Vec2 h = R * Vec2(x(0), x(1));
    x(0) = h.x();
    x(1) = h.y();
    x(3) += a;
  }
  q.subject = R * p.subject;
  q.subject_velocity = R * p.subject_velocity;
  q.wind = R * p.wind;
  return q;
}

estimation::NavEstimate nav_at(const Vec3& p, double heading) {
  estimation::NavEstimate e;
  e.position = p;
  e.attitude = quat_from_euler(0, 0, heading);
  return e;
}

perception::SubjectTrack track_at(const Vec2& p, const Vec2& v = Vec2::Zero()) {
  perception::SubjectTrack t;
  t.initialized = true;
  t.mean << p, v;
  return t;
}

}  // namespace

TEST_CASE("rollout: straight, hovering into wind, constant turn") {
  const PlantState x0(0, 0, 30, 0);
  const auto straight = rollout(x0, std::vector<Control>(20, Control(8, 0, 0)), Vec2::Zero(), 0.5);
  REQUIRE(straight.size() == 21);
  CHECK((straight.back().head<3>() - Vec3(80, 0, 30)).norm() < 1e-9);

  const auto hover =
      rollout(PlantState(0, 0, 30, kPi), std::vector<Control>(20, Control(5, 0, 0)), Vec2(5, 0), 0.5);
  CHECK(hover.back().head<2>().norm() < 1e-9);

  // right turn from the origin heading east: circle about (0, -R)
  const double v = 6.0, r = 0.2, R = v / r;
  const auto arc = rollout(x0, std::vector<Control>(40, Control(v, r, 0.5)), Vec2::Zero(), 0.5);
  for (std::size_t t = 0; t < arc.size(); ++t) {
    CHECK((arc[t].head<2>() - Vec2(0, -R)).norm() == doctest::Approx(R).epsilon(1e-9));
    CHECK(arc[t](3) == doctest::Approx(-r * 0.5 * static_cast<double>(t)));
    CHECK(arc[t](2) == doctest::Approx(30.0 + 0.25 * static_cast<double>(t)));
  }
}

TEST_CASE("ideal orbit point costs nothing") {
  MpcConfig cfg;
  cfg.bank_per_accel = 0.0;
  const double R = cfg.standoff_radius();
  CHECK(R == doctest::Approx(30.0 / std::tan(deg2rad(30.0))));
  PlanningProblem p;
  p.cfg = cfg;
  const double rate = cfg.v_pref / R;
  p.initial = {PlantState(0, R, 30, 0)};
  p.previous = {Control(cfg.v_pref, rate, 0)};
  ControlVector u(cfg.horizon * 3);
  for (int t = 0; t < cfg.horizon; ++t) u.segment<3>(t * 3) = p.previous[0];
  const CostBreakdown cb = evaluate_cost(p, u);
  CHECK(cb.camera < 1e-16);
  CHECK(cb.distance < 1e-16);
  CHECK(cb.total() < 1e-12);
}

TEST_CASE("breakdown sums to the value used by the solver") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1 + trial % 3;
    PlanningProblem p = random_problem(n, rng, trial % 2 == 0);
    const ControlVector u = random_controls(n, p.cfg, rng);
    ControlVector g;
    const double J = cost_and_gradient(p, u, g);
    const CostBreakdown cb = evaluate_cost(p, u);
    CHECK(std::abs(cb.total() - J) <= 1e-12 * std::max(1.0, J));
    CHECK(cb.camera >= 0.0);
    CHECK(cb.separation >= 0.0);
    if (n == 1) CHECK(cb.separation == 0.0);
  }
}

TEST_CASE("cost is invariant under rotation about the subject frame origin") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    PlanningProblem p = random_problem(3, rng, false);
    const ControlVector u = random_controls(3, p.cfg, rng);
    const double a = 2.0 * kPi * uniform01(rng);
    const double J = evaluate_cost(p, u).total();
    CHECK(evaluate_cost(rotated(p, a), u).total() == doctest::Approx(J).epsilon(1e-9));
  }
}

TEST_CASE("adjoint gradient matches central differences") {
  Rng rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 12; ++trial) {
    const int n = 1 + trial % 3;
    PlanningProblem p = random_problem(n, rng, trial % 2 == 1);
    p.cfg.bank_per_accel = trial % 4 == 0 ? 0.0 : 0.1;
    const ControlVector u = random_controls(n, p.cfg, rng);
    ControlVector g;
    cost_and_gradient(p, u, g);
    ControlVector fd(u.size());
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      const double h = 1e-6 * p.cfg.control_scale(k % 3);
      ControlVector a = u, b = u;
      a(k) += h;
      b(k) -= h;
      fd(k) = (evaluate_cost(p, a).total() - evaluate_cost(p, b).total()) / (2.0 * h);
    }
    const double scale = fd.cwiseAbs().maxCoeff();
    for (Eigen::Index k = 0; k < u.size(); ++k) {
      worst = std::max(worst, std::abs(g(k) - fd(k)) / std::max(std::abs(fd(k)), 1e-3 * scale));
    }
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("solver history is monotone and controls stay in bounds") {
  Rng rng(8);
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 1 + trial % 3;
    PlanningProblem p = random_problem(n, rng, true);
    std::vector<double> history;
    const ControlVector u = solve(p, random_controls(n, p.cfg, rng), &history);
    REQUIRE(history.size() >= 2);
    for (std::size_t k = 1; k < history.size(); ++k) CHECK(history[k] <= history[k - 1]);
    CHECK(history.back() < history.front());
    CHECK(evaluate_cost(p, u).total() == doctest::Approx(history.back()).epsilon(1e-12));
    for (Eigen::Index k = 0; k < u.size(); k += 3) {
      CHECK(u(k) >= p.cfg.v_min);
      CHECK(u(k) <= p.cfg.v_max);
      CHECK(std::abs(u(k + 1)) <= p.cfg.max_turn_rate);
      CHECK(std::abs(u(k + 2)) <= p.cfg.max_climb_rate);
    }
  }
}

TEST_CASE("planner moves away from a subject directly below") {
  MpcConfig cfg;
  const auto plan = plan_formation({nav_at(Vec3(0, 0, 30), 0.0)}, track_at(Vec2::Zero()), WindEstimate{}, cfg);
  REQUIRE(plan.vehicles.size() == 1);
  CHECK_FALSE(plan.fault);
  CHECK_FALSE(plan.degraded);
  CHECK(std::isfinite(plan.total_cost));
  const auto& tr = plan.vehicles[0].trajectory;
  REQUIRE(static_cast<int>(tr.size()) == cfg.horizon + 1);
  CHECK(tr.back().head<2>().norm() >= cfg.r_subject_min);
  CHECK(plan.residuals.subject_distance > 0.0);  // unavoidable in the first seconds, and reported
  CHECK(plan.residuals.subject_distance <= cfg.r_subject_min);
}

TEST_CASE("uninitialized track yields a degraded loiter") {
  MpcConfig cfg;
  perception::SubjectTrack none;
  const auto plan = plan_formation({nav_at(Vec3(0, 40, 30), 0.0), nav_at(Vec3(0, -40, 30), kPi)}, none,
                                   WindEstimate{}, cfg);
  CHECK(plan.degraded);
  REQUIRE(plan.vehicles.size() == 2);
  for (const auto& v : plan.vehicles) {
    for (const Control& u : v.controls) {
      CHECK(u(0) == cfg.v_min);
      CHECK(u(1) > 0.0);
    }
  }
  CHECK(plan_formation({}, none, WindEstimate{}, cfg).vehicles.empty());
}

TEST_CASE("warm start shift keeps length and repeats the tail") {
  FormationPlan p;
  p.vehicles.resize(1);
  for (int t = 0; t < 4; ++t) p.vehicles[0].controls.emplace_back(t, 0, 0);
  const auto s = shift_plan(p);
  REQUIRE(s.vehicles[0].controls.size() == 4);
  CHECK(s.vehicles[0].controls[0](0) == 1.0);
  CHECK(s.vehicles[0].controls[2](0) == 3.0);
  CHECK(s.vehicles[0].controls[3](0) == 3.0);
}

TEST_CASE("moving subject shifts the plan") {
  MpcConfig cfg;
  const std::vector<estimation::NavEstimate> st{nav_at(Vec3(0, 52, 30), 0.0)};
  const auto still = plan_formation(st, track_at(Vec2::Zero()), WindEstimate{}, cfg);
  const auto moving = plan_formation(st, track_at(Vec2::Zero(), Vec2(1.5, 0.0)), WindEstimate{}, cfg);
  const double offset =
      (still.vehicles[0].trajectory.back().head<2>() - moving.vehicles[0].trajectory.back().head<2>()).norm();
  CHECK(offset > 2.0);
}

TEST_CASE("instantaneous wind examples") {
  CHECK((instantaneous_wind(Vec2::Zero(), 5.0, 0.0) - Vec2(-5, 0)).norm() < 1e-12);
  CHECK((instantaneous_wind(Vec2(6, 4), 4.0, kPi / 2) - Vec2(6, 0)).norm() < 1e-12);
}

TEST_CASE("wind estimator converges and ignores turning samples") {
  WindEstimate w;
  CHECK(w.confidence == 0.0);
  // turning samples are gated out
  w = estimate_wind(w, Vec2(10, 0), 5.0, 0.0, 0.5, 0.1);
  CHECK_FALSE(w.initialized);
  // noisy straight flight with true wind (3, -1)
  Rng rng(2);
  std::normal_distribution<double> noise(0.0, 0.3);
  for (int k = 0; k < 600; ++k) {
    const double heading = 0.7;
    const Vec2 ground = 6.0 * Vec2(std::cos(heading), std::sin(heading)) + Vec2(3, -1) +
                        Vec2(noise(rng), noise(rng));
    w = estimate_wind(w, ground, 6.0, heading, 0.0, 0.1);
  }
  CHECK(w.initialized);
  CHECK((w.vector - Vec2(3, -1)).norm() < 0.3);
  CHECK(w.confidence > 0.99);
}

TEST_CASE("config validation") {
  MpcConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  MpcConfig short_h = cfg;
  short_h.horizon = 4;
  CHECK_THROWS_AS(short_h.validate(), ConfigError);
  MpcConfig neg = cfg;
  neg.w_cam = -1.0;
  CHECK_THROWS_AS(neg.validate(), ConfigError);
  MpcConfig speeds = cfg;
  speeds.v_max = speeds.v_min;
  CHECK_THROWS_AS(speeds.validate(), ConfigError);
}
