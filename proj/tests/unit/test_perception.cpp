#include "airship/perception.hpp"

#include <doctest.h>

#include "reference_kf.hpp"

#include <Eigen/Cholesky>

#include <algorithm>

using namespace airship;
using namespace airship::perception;
using airship::testing::ReferenceKf;
using airship::testing::random_measurement;

namespace {

CameraPose pose_at(const Vec3& p, double heading = 0.0, const CameraModel& cam = {}) {
  return camera_pose(p, quat_from_euler(0.0, 0.0, heading), cam);
}

}  // namespace

TEST_CASE("projection: boresight, behind, half field of view") {
  CameraModel cam;
  const auto pose = pose_at({0, 0, 30});
  const Vec3 on_axis = pose.position + 40.0 * pose.boresight();
  const auto c = project_subject(pose, cam, on_axis);
  REQUIRE(c);
  CHECK((*c - Vec2(0.5, 0.5)).norm() < 1e-12);
  CHECK_FALSE(project_subject(pose, cam, pose.position - 40.0 * pose.boresight()));
  CHECK_FALSE(project_subject(pose, cam, pose.position + 400.0 * pose.boresight()));  // beyond range

  // rotate the boresight about the image-y axis by just under half the HFOV
  const double a = 0.5 * cam.hfov - 1e-9;
  const Vec3 dir = pose.camera_to_world * Vec3(std::sin(a), 0.0, std::cos(a));
  const auto edge = project_subject(pose, cam, pose.position + 50.0 * dir);
  REQUIRE(edge);
  CHECK(edge->x() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(edge->y() == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("boresight points starboard and 30 deg down") {
  const auto pose = pose_at({0, 0, 30}, 0.0);
  const Vec3 b = pose.boresight();
  CHECK(b.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(b.y() == doctest::Approx(-std::cos(deg2rad(30.0))));
  CHECK(b.z() == doctest::Approx(-std::sin(deg2rad(30.0))));
}

TEST_CASE("pixel to ground: image center from 30 m lands 51.96 m abeam") {
  CameraModel cam;
  const auto pose = pose_at({10, 20, 30}, 0.0);
  const Vec3 g = pixel_to_ground(pose, cam, {0.5, 0.5});
  const double abeam = 30.0 / std::tan(deg2rad(30.0));
  CHECK(g.x() == doctest::Approx(10.0));
  CHECK(std::abs(g.y() - (20.0 - abeam)) < 0.01);
  CHECK(std::abs(abeam - 51.96) < 0.01);
  CHECK(g.z() == 0.0);
}

TEST_CASE("pixel to ground: horizon and degenerate altitude") {
  CameraModel cam;
  cam.mount_depression = 0.0;
  CHECK_THROWS_AS(pixel_to_ground(pose_at({0, 0, 30}, 0.0, cam), cam, {0.5, 0.5}), NoGroundIntersection);
  CameraModel down;
  const auto pose = pose_at({4, -2, 0}, 0.0, down);
  const Vec3 g = pixel_to_ground(pose, down, {0.5, 0.5});
  CHECK((g - Vec3(4, -2, 0)).norm() < 1e-12);
}

TEST_CASE("pixel -> ground -> pixel round trip") {
  CameraModel cam;
  Rng rng(11);
  int checked = 0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 p(200.0 * uniform01(rng) - 100.0, 200.0 * uniform01(rng) - 100.0, 5.0 + 80.0 * uniform01(rng));
    const Quat q = quat_from_euler(0.2 * (uniform01(rng) - 0.5), 0.2 * (uniform01(rng) - 0.5), 2 * kPi * uniform01(rng));
    const auto pose = camera_pose(p, q, cam);
    const Vec2 px(uniform01(rng), uniform01(rng));
    Vec3 g;
    try {
      g = pixel_to_ground(pose, cam, px);
    } catch (const NoGroundIntersection&) {
      continue;
    }
    const auto back = project_subject(pose, cam, g);
    if (!back) continue;  // beyond max range
    CHECK((*back - px).norm() < 1e-9);
    ++checked;
  }
  CHECK(checked > 500);
}

TEST_CASE("detection model") {
  CameraModel cam;
  const auto pose = pose_at({0, 0, 30});
  const Vec3 subject = pixel_to_ground(pose, cam, {0.5, 0.5});
  const auto proj = project_subject(pose, cam, subject);
  const auto track = reinitialize_track({}, subject.head<2>(), 0.0, {});
  Rng rng(3);

  DetectionConfig exact;
  exact.p_hi = 1.0;
  exact.pixel_noise_std = 0.0;
  const auto d = simulate_detection(proj, track, pose, cam, exact, 1.5, 7, rng);
  REQUIRE(d);
  CHECK(d->pixel == *proj);
  CHECK(d->timestamp == 1.5);
  CHECK(d->source_vehicle == 7);
  CHECK_FALSE(simulate_detection(std::nullopt, track, pose, cam, exact, 0.0, 0, rng));

  DetectionConfig cfg;
  int hits = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) hits += simulate_detection(proj, track, pose, cam, cfg, 0.0, 0, rng).has_value();
  CHECK(std::abs(hits / double(n) - cfg.p_hi) < 0.02);

  // outside the ROI of a track far away: foveation falls back to p_lo
  const auto far = reinitialize_track({}, Vec2(500, 500), 0.0, {});
  hits = 0;
  for (int i = 0; i < n; ++i) hits += simulate_detection(proj, far, pose, cam, cfg, 0.0, 0, rng).has_value();
  CHECK(std::abs(hits / double(n) - cfg.p_lo) < 0.02);
}

TEST_CASE("reinitialize: exact mean, idempotent, ROI follows the point") {
  TrackerConfig cfg;
  SubjectTrack prior;
  prior.initialized = true;
  prior.mean << 100, 100, 3, 3;
  const Vec2 p(12.25, -51.5);
  const auto a = reinitialize_track(prior, p, 4.0, cfg);
  CHECK(a.position() == p);
  CHECK(a.velocity() == Vec2::Zero());
  const auto b = reinitialize_track(a, p, 4.0, cfg);
  CHECK(a.mean == b.mean);
  CHECK(a.covariance == b.covariance);

  CameraModel cam;
  const auto pose = pose_at({12.25, 0.0, 30.0});
  const auto roi = predicted_roi(a, pose, cam, 3.0);
  REQUIRE(roi);
  const auto center = project_subject(pose, cam, Vec3(p.x(), p.y(), 0.0));
  REQUIRE(center);
  CHECK(roi->contains(*center));
  CHECK(std::abs(0.5 * (roi->lo.x() + roi->hi.x()) - center->x()) < 0.02);
}

TEST_CASE("no detections: mean propagates and trace grows") {
  TrackerConfig cfg;
  SubjectTrack t = reinitialize_track({}, Vec2(0, 0), 0.0, cfg);
  t.mean(2) = 1.0;
  double trace = t.covariance.trace();
  for (int k = 1; k <= 10; ++k) {
    t = tracker_step(t, {}, k * 0.2, cfg);
    CHECK(t.covariance.trace() > trace);
    trace = t.covariance.trace();
  }
  CHECK(t.mean(0) == doctest::Approx(2.0));
}

TEST_CASE("non-SPD measurement resets the track") {
  TrackerConfig cfg;
  const SubjectTrack t = reinitialize_track({}, Vec2(0, 0), 0.0, cfg);
  GroundMeasurement bad;
  bad.timestamp = 0.1;
  bad.position = Vec2(std::numeric_limits<double>::quiet_NaN(), 0.0);
  bool reset = false;
  const auto out = tracker_step(t, {bad}, 0.2, cfg, &reset);
  CHECK(reset);
  CHECK_FALSE(out.initialized);
}

TEST_CASE("cooperative nodes equal the centralized filter under lossless delivery") {
  TrackerConfig cfg;
  CommsConfig comms;
  Network net(comms, 5);
  CooperativeTracker node[2] = {CooperativeTracker(cfg), CooperativeTracker(cfg)};
  const std::vector<Vec3> positions = {Vec3(0, 0, 30), Vec3(20, 0, 30)};
  std::vector<GroundMeasurement> all;
  Rng rng(17);
  std::uint64_t seq[2] = {0, 0};
  const double dt = 0.01;
  for (int k = 0; k <= 3000; ++k) {
    const double t = k * dt;
    for (auto& [rx, m] : net.deliver_until(t)) node[rx].add_measurement(m);
    // both vehicles detect on the same 5 Hz grid, so timestamps tie across sources
    if (k % 20 == 0) {
      for (int v = 0; v < 2; ++v) {
        const auto m = random_measurement(rng, t, v, seq[v]++);
        all.push_back(m);
        node[v].add_measurement(m);
        net.broadcast(v, m, positions, t);
      }
    }
    if (k % 10 == 0) {
      node[0].step(t);
      node[1].step(t);
    }
  }
  REQUIRE(net.dropped() == 0);
  const double end = 31.0;
  for (auto& [rx, m] : net.deliver_until(end)) node[rx].add_measurement(m);

  std::sort(all.begin(), all.end(), measurement_before);
  ReferenceKf ref{cfg.accel_noise * cfg.accel_noise, cfg.init_vel_std * cfg.init_vel_std};
  for (const auto& m : all) ref.update(m);
  ref.predict(end);

  for (auto& n : node) {
    const auto& tr = n.step(end);
    CHECK((tr.mean - ref.x).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((tr.covariance - ref.P).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(n.late_drops() == 0);
  }
}

TEST_CASE("packet loss never shrinks the posterior below lossless") {
  TrackerConfig cfg;
  double trace[2];
  for (int lossy = 0; lossy < 2; ++lossy) {
    CommsConfig comms;
    comms.extra_loss = lossy ? 0.3 : 0.0;
    Network net(comms, 9);
    CooperativeTracker node(cfg);
    Rng rng(23);
    std::uint64_t seq = 0;
    const std::vector<Vec3> positions = {Vec3(0, 0, 30), Vec3(30, 0, 30)};
    for (int k = 0; k <= 3000; ++k) {
      const double t = k * 0.01;
      for (auto& [rx, m] : net.deliver_until(t)) {
        if (rx == 0) node.add_measurement(m);
      }
      if (k % 20 == 0) {
        const auto own = random_measurement(rng, t, 0, seq);
        const auto remote = random_measurement(rng, t, 1, seq++);
        node.add_measurement(own);
        net.broadcast(1, remote, positions, t);
      }
      if (k % 10 == 0) node.step(t);
    }
    if (lossy) CHECK(net.dropped() > 0);
    trace[lossy] = node.step(30.5).covariance.trace();
  }
  CHECK(trace[1] >= trace[0]);
}

TEST_CASE("stationary subject: 30 s of detections converge within 2 m at 50 m") {
  CameraModel cam;
  DetectionConfig det;
  TrackerConfig cfg;
  estimation::EkfConfig ekf;
  ekf.init_pos_std = Vec3::Constant(0.5);
  ekf.init_att_std = Vec3::Constant(deg2rad(0.5));
  const auto nav_cov = ekf.initial_covariance();
  const Vec3 vehicle(0.0, 51.96, 30.0);  // heading east, subject to starboard
  const auto pose = pose_at(vehicle);
  const Vec3 subject(0, 0, 0);
  double worst = 0.0;
  for (int run = 0; run < 20; ++run) {
    Rng rng(100 + run);
    CooperativeTracker node(cfg);
    node.reinitialize(Vec2(4.0, -3.0), 0.0);  // operator click a few metres off
    for (int k = 1; k <= 150; ++k) {
      const double t = 0.2 * k;
      const auto d = simulate_detection(project_subject(pose, cam, subject), node.track(), pose, cam, det, t, 0, rng);
      if (d) {
        if (auto m = detection_to_measurement(*d, pose, cam, nav_cov, cfg)) node.add_measurement(*m);
      }
      node.step(t);
    }
    worst = std::max(worst, (node.track().position() - subject.head<2>()).norm());
  }
  CHECK(worst < 2.0);
}

TEST_CASE("measurement covariance grows with range") {
  CameraModel cam;
  TrackerConfig cfg;
  const estimation::Mat15 nav = estimation::EkfConfig{}.initial_covariance();
  Detection d;
  d.pixel = {0.5, 0.5};
  d.pixel_noise_std = 0.004;
  const auto near = detection_to_measurement(d, pose_at({0, 0, 20}), cam, nav, cfg);
  const auto far = detection_to_measurement(d, pose_at({0, 0, 60}), cam, nav, cfg);
  REQUIRE(near);
  REQUIRE(far);
  CHECK(far->covariance.trace() > near->covariance.trace());
  CHECK(far->covariance.llt().info() == Eigen::Success);
}

TEST_CASE("comms: range model") {
  CommsConfig cfg;
  Rng rng(1);
  for (int i = 0; i < 1000; ++i) {
    CHECK(comms_deliver({0, 0, 30}, {10, 0, 30}, 0.0, cfg, rng).delivered);
    CHECK_FALSE(comms_deliver({0, 0, 30}, {200, 0, 30}, 0.0, cfg, rng).delivered);
  }
  int dropped = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) dropped += !comms_deliver({0, 0, 30}, {135, 0, 30}, 0.0, cfg, rng).delivered;
  CHECK(std::abs(dropped / double(n) - 0.5) < 0.05);
  CHECK(drop_probability(135.0, cfg) == doctest::Approx(0.5));
  const auto d = comms_deliver({0, 0, 0}, {1, 0, 0}, 2.0, cfg, rng);
  CHECK(d.delivery_time >= 2.0 + cfg.latency);
  CHECK(d.delivery_time <= 2.0 + cfg.latency + cfg.jitter);
}

TEST_CASE("network keeps per-link order") {
  CommsConfig cfg;
  cfg.jitter = 0.2;  // larger than the send spacing
  Network net(cfg, 4);
  const std::vector<Vec3> pos = {Vec3::Zero(), Vec3(10, 0, 0)};
  for (int k = 0; k < 100; ++k) {
    GroundMeasurement m;
    m.timestamp = k * 0.05;
    m.sequence = static_cast<std::uint64_t>(k);
    net.broadcast(0, m, pos, m.timestamp);
  }
  const auto got = net.deliver_until(100.0);
  REQUIRE(got.size() == 100);
  for (std::size_t i = 1; i < got.size(); ++i) CHECK(got[i].second.sequence > got[i - 1].second.sequence);
}
