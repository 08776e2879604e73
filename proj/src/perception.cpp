#include "airship/perception.hpp"

#include <Eigen/Cholesky>
#include <algorithm>

namespace airship::perception {

void CameraModel::validate() const {
  const auto fov_ok = [](double f) { return f > 0.0 && f < kPi; };
  if (!fov_ok(hfov) || !fov_ok(vfov)) throw ConfigError("camera FOV must lie in (0, 180) deg");
  if (!(max_range > 0.0)) throw ConfigError("camera max_range must be positive");
  if (!(std::abs(mount_depression) < 0.5 * kPi)) {
    throw ConfigError("camera depression must lie in (-90, 90) deg");
  }
}

Vec3 CameraModel::boresight_body() const { return camera_to_body().col(2); }

Mat3 CameraModel::camera_to_body() const {
  const Vec3 horizontal(std::cos(mount_azimuth), -std::sin(mount_azimuth), 0.0);
  const Vec3 z = std::cos(mount_depression) * horizontal - std::sin(mount_depression) * Vec3::UnitZ();
  const Vec3 x = horizontal.cross(Vec3::UnitZ());
  const Vec3 y = z.cross(x);
  Mat3 m;
  m.col(0) = x;
  m.col(1) = y;
  m.col(2) = z;
  return m;
}

CameraPose camera_pose(const Vec3& vehicle_position, const Quat& attitude, const CameraModel& cam) {
  return CameraPose{vehicle_position, attitude.toRotationMatrix() * cam.camera_to_body()};
}

namespace {

// Image coordinates without the FOV test; nullopt only behind the camera.
std::optional<Vec2> raw_projection(const CameraPose& pose, const CameraModel& cam, const Vec3& p) {
  const Vec3 c = pose.camera_to_world.transpose() * (p - pose.position);
  if (!(c.z() > 1e-9)) return std::nullopt;
  return Vec2(0.5 + 0.5 * (c.x() / c.z()) / std::tan(0.5 * cam.hfov),
              0.5 + 0.5 * (c.y() / c.z()) / std::tan(0.5 * cam.vfov));
}

bool in_image(const Vec2& px) {
  return px.x() >= 0.0 && px.x() <= 1.0 && px.y() >= 0.0 && px.y() <= 1.0;
}

}  // namespace

std::optional<Vec2> project_subject(const CameraPose& pose, const CameraModel& cam,
                                    const Vec3& subject) {
  if ((subject - pose.position).norm() > cam.max_range) return std::nullopt;
  auto px = raw_projection(pose, cam, subject);
  if (!px || !in_image(*px)) return std::nullopt;
  return px;
}

Vec3 pixel_ray(const CameraPose& pose, const CameraModel& cam, const Vec2& pixel) {
  const Vec3 c((2.0 * pixel.x() - 1.0) * std::tan(0.5 * cam.hfov),
               (2.0 * pixel.y() - 1.0) * std::tan(0.5 * cam.vfov), 1.0);
  return pose.camera_to_world * c;
}

Vec3 pixel_to_ground(const CameraPose& pose, const CameraModel& cam, const Vec2& pixel) {
  const Vec3 d = pixel_ray(pose, cam, pixel);
  if (!(d.z() < -1e-9 * d.norm()) || pose.position.z() < 0.0) throw NoGroundIntersection();
  const double t = -pose.position.z() / d.z();
  Vec3 g = pose.position + t * d;
  g.z() = 0.0;
  return g;
}

std::optional<Roi> predicted_roi(const SubjectTrack& track, const CameraPose& pose,
                                 const CameraModel& cam, double sigma) {
  if (!track.initialized) return std::nullopt;
  const Vec2 m = track.position();
  const double sx = sigma * std::sqrt(std::max(track.covariance(0, 0), 0.0));
  const double sy = sigma * std::sqrt(std::max(track.covariance(1, 1), 0.0));
  const Vec2 offsets[] = {{0, 0}, {sx, sy}, {sx, -sy}, {-sx, sy}, {-sx, -sy}};
  Roi box{Vec2::Constant(1e9), Vec2::Constant(-1e9)};
  bool any = false;
  for (const Vec2& o : offsets) {
    const Vec2 g = m + o;
    auto px = raw_projection(pose, cam, Vec3(g.x(), g.y(), 0.0));
    if (!px) continue;
    box.lo = box.lo.cwiseMin(*px);
    box.hi = box.hi.cwiseMax(*px);
    any = true;
  }
  if (!any) return std::nullopt;
  box.lo = box.lo.cwiseMax(0.0);
  box.hi = box.hi.cwiseMin(1.0);
  if ((box.lo.array() > box.hi.array()).any()) return std::nullopt;
  return box;
}

std::optional<Detection> simulate_detection(const std::optional<Vec2>& projection,
                                            const SubjectTrack& track, const CameraPose& pose,
                                            const CameraModel& cam, const DetectionConfig& cfg,
                                            double timestamp, int vehicle, Rng& rng) {
  if (!projection) return std::nullopt;
  // Fixed number of draws per call keeps the stream aligned across branches.
  const double u = uniform01(rng);
  const Vec2 noise(standard_normal(rng), standard_normal(rng));

  const auto roi = predicted_roi(track, pose, cam, cfg.roi_sigma);
  const double p = (roi && roi->contains(*projection)) ? cfg.p_hi : cfg.p_lo;
  if (!(u < p)) return std::nullopt;
  const Vec2 px = *projection + cfg.pixel_noise_std * noise;
  if (!in_image(px)) return std::nullopt;
  return Detection{px, timestamp, vehicle, cfg.pixel_noise_std};
}

std::optional<GroundMeasurement> detection_to_measurement(const Detection& det,
                                                          const CameraPose& est_pose,
                                                          const CameraModel& cam,
                                                          const estimation::Mat15& nav_cov,
                                                          const TrackerConfig& cfg) {
  Vec3 g;
  try {
    g = pixel_to_ground(est_pose, cam, det.pixel);
  } catch (const NoGroundIntersection&) {
    return std::nullopt;
  }
  const Vec3 r = g - est_pose.position;
  const double slant = r.norm();
  const double ground = r.head<2>().norm();
  const double height = std::max(est_pose.position.z(), 1e-3);

  const double pix_std = det.pixel_noise_std > 0.0 ? det.pixel_noise_std : cfg.pixel_noise_std;
  const double ang_var = std::pow(pix_std * 2.0 * std::tan(0.5 * cam.hfov), 2) +
                         nav_cov.block<3, 3>(6, 6).trace() / 3.0;
  const double alt_var = nav_cov(2, 2);

  Mat2 R = nav_cov.block<2, 2>(0, 0);
  if (ground > 1e-6) {
    const Vec2 along = r.head<2>() / ground;
    const Vec2 cross(-along.y(), along.x());
    const double sin_el = height / slant;
    const double tan_el = height / ground;
    R += slant * slant * ang_var *
             (cross * cross.transpose() + along * along.transpose() / (sin_el * sin_el)) +
         alt_var / (tan_el * tan_el) * along * along.transpose();
  } else {
    R += slant * slant * ang_var * Mat2::Identity();
  }
  R += cfg.min_measurement_std * cfg.min_measurement_std * Mat2::Identity();
  R = 0.5 * (R + R.transpose());

  GroundMeasurement m;
  m.position = g.head<2>();
  m.covariance = R;
  m.timestamp = det.timestamp;
  m.source_vehicle = det.source_vehicle;
  return m;
}

SubjectTrack track_predict(const SubjectTrack& track, double time, const TrackerConfig& cfg) {
  SubjectTrack out = track;
  if (!track.initialized) return out;
  const double dt = time - track.last_update;
  if (!(dt > 0.0)) return out;
  Mat4 F = Mat4::Identity();
  F(0, 2) = F(1, 3) = dt;
  const double q = cfg.accel_noise * cfg.accel_noise;
  Mat4 Q = Mat4::Zero();
  const Mat2 I = Mat2::Identity();
  Q.block<2, 2>(0, 0) = q * dt * dt * dt / 3.0 * I;
  Q.block<2, 2>(0, 2) = Q.block<2, 2>(2, 0) = q * dt * dt / 2.0 * I;
  Q.block<2, 2>(2, 2) = q * dt * I;
  out.mean = F * track.mean;
  out.covariance = F * track.covariance * F.transpose() + Q;
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  out.last_update = time;
  return out;
}

SubjectTrack track_update(const SubjectTrack& track, const GroundMeasurement& m) {
  SubjectTrack out = track;
  Eigen::Matrix<double, 2, 4> H = Eigen::Matrix<double, 2, 4>::Zero();
  H(0, 0) = H(1, 1) = 1.0;
  const Mat2 S = H * track.covariance * H.transpose() + m.covariance;
  const Eigen::Matrix<double, 4, 2> K = track.covariance * H.transpose() * S.inverse();
  out.mean = track.mean + K * (m.position - H * track.mean);
  const Mat4 A = Mat4::Identity() - K * H;
  out.covariance = A * track.covariance * A.transpose() + K * m.covariance * K.transpose();
  out.covariance = 0.5 * (out.covariance + out.covariance.transpose());
  return out;
}

bool track_is_spd(const SubjectTrack& track) {
  if (!track.mean.allFinite() || !track.covariance.allFinite()) return false;
  Eigen::LLT<Mat4> llt(track.covariance);
  return llt.info() == Eigen::Success;
}

bool measurement_before(const GroundMeasurement& a, const GroundMeasurement& b) {
  if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
  if (a.source_vehicle != b.source_vehicle) return a.source_vehicle < b.source_vehicle;
  return a.sequence < b.sequence;
}

namespace {

SubjectTrack initialize_from(const GroundMeasurement& m, const TrackerConfig& cfg) {
  SubjectTrack t;
  t.mean << m.position, 0.0, 0.0;
  t.covariance.setZero();
  t.covariance.block<2, 2>(0, 0) = m.covariance;
  t.covariance.block<2, 2>(2, 2) = cfg.init_vel_std * cfg.init_vel_std * Mat2::Identity();
  t.last_update = m.timestamp;
  t.initialized = true;
  return t;
}

// One measurement into the chain; returns false when the result is not SPD.
bool fold(SubjectTrack& track, const GroundMeasurement& m, const TrackerConfig& cfg) {
  if (!track.initialized) {
    track = initialize_from(m, cfg);
    return track_is_spd(track);
  }
  track = track_update(track_predict(track, m.timestamp, cfg), m);
  return track_is_spd(track);
}

}  // namespace

SubjectTrack tracker_step(const SubjectTrack& track, std::vector<GroundMeasurement> measurements,
                          double now, const TrackerConfig& cfg, bool* reset_event) {
  if (reset_event) *reset_event = false;
  std::sort(measurements.begin(), measurements.end(), measurement_before);
  SubjectTrack t = track;
  for (const auto& m : measurements) {
    if (t.initialized && m.timestamp < t.last_update) continue;
    if (!fold(t, m, cfg)) {
      if (reset_event) *reset_event = true;
      return SubjectTrack{};
    }
  }
  return track_predict(t, now, cfg);
}

SubjectTrack reinitialize_track(const SubjectTrack& /*track*/, const Vec2& world_point, double time,
                                const TrackerConfig& cfg) {
  if (!world_point.allFinite()) throw std::invalid_argument("reinitialize_track: non-finite point");
  SubjectTrack t;
  t.mean << world_point, 0.0, 0.0;
  t.covariance.setZero();
  t.covariance.block<2, 2>(0, 0) = cfg.init_pos_std * cfg.init_pos_std * Mat2::Identity();
  t.covariance.block<2, 2>(2, 2) = cfg.init_vel_std * cfg.init_vel_std * Mat2::Identity();
  t.last_update = time;
  t.initialized = true;
  return t;
}

CooperativeTracker::CooperativeTracker(TrackerConfig cfg) : cfg_(cfg) {}

void CooperativeTracker::add_measurement(const GroundMeasurement& m) {
  if (anchor_.initialized && m.timestamp < anchor_.last_update) {
    ++late_drops_;
    return;
  }
  auto it = std::upper_bound(pending_.begin(), pending_.end(), m, measurement_before);
  pending_.insert(it, m);
}

const SubjectTrack& CooperativeTracker::step(double now) {
  // Commit measurements older than the fusion lag into the anchor.
  const double horizon = now - cfg_.fusion_lag;
  std::size_t committed = 0;
  for (; committed < pending_.size() && pending_[committed].timestamp < horizon; ++committed) {
    if (!fold(anchor_, pending_[committed], cfg_)) {
      anchor_ = SubjectTrack{};
      pending_.clear();
      chain_ = output_ = SubjectTrack{};
      ++resets_;
      reset_pending_ = true;
      return output_;
    }
  }
  pending_.erase(pending_.begin(), pending_.begin() + static_cast<std::ptrdiff_t>(committed));

  chain_ = anchor_;
  for (const auto& m : pending_) {
    if (!fold(chain_, m, cfg_)) {
      anchor_ = SubjectTrack{};
      pending_.clear();
      chain_ = output_ = SubjectTrack{};
      ++resets_;
      reset_pending_ = true;
      return output_;
    }
  }
  output_ = track_predict(chain_, now, cfg_);
  return output_;
}

void CooperativeTracker::reinitialize(const Vec2& world_point, double time) {
  anchor_ = reinitialize_track(anchor_, world_point, time, cfg_);
  std::erase_if(pending_, [time](const GroundMeasurement& m) { return m.timestamp < time; });
  chain_ = anchor_;
  output_ = anchor_;
}

bool CooperativeTracker::take_reset_event() {
  const bool r = reset_pending_;
  reset_pending_ = false;
  return r;
}

double drop_probability(double distance, const CommsConfig& cfg) {
  const double full = cfg.full_quality_fraction * cfg.range;
  if (distance < full) return 0.0;
  if (distance >= cfg.range) return 1.0;
  return (distance - full) / (cfg.range - full);
}

Delivery comms_deliver(const Vec3& sender, const Vec3& receiver, double send_time,
                       const CommsConfig& cfg, Rng& rng) {
  const double u_range = uniform01(rng);
  const double u_loss = uniform01(rng);
  const double u_jitter = uniform01(rng);
  Delivery d;
  d.delivered = !(u_range < drop_probability((sender - receiver).norm(), cfg)) &&
                !(u_loss < cfg.extra_loss);
  d.delivery_time = send_time + cfg.latency + cfg.jitter * u_jitter;
  return d;
}

Network::Network(CommsConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) {}

void Network::broadcast(int sender, const GroundMeasurement& m, const std::vector<Vec3>& positions,
                        double now) {
  for (int r = 0; r < static_cast<int>(positions.size()); ++r) {
    if (r == sender) continue;
    ++sent_;
    Delivery d = comms_deliver(positions[static_cast<std::size_t>(sender)],
                               positions[static_cast<std::size_t>(r)], now, cfg_, rng_);
    if (!d.delivered) {
      ++dropped_;
      continue;
    }
    double& last = last_delivery_[{sender, r}];
    d.delivery_time = std::max(d.delivery_time, last);
    last = d.delivery_time;
    in_flight_.push_back({d.delivery_time, order_++, r, m});
  }
}

std::vector<std::pair<int, GroundMeasurement>> Network::deliver_until(double now) {
  std::vector<InFlight> ready;
  std::vector<InFlight> rest;
  for (auto& f : in_flight_) (f.delivery_time <= now ? ready : rest).push_back(std::move(f));
  in_flight_ = std::move(rest);
  std::sort(ready.begin(), ready.end(), [](const InFlight& a, const InFlight& b) {
    if (a.delivery_time != b.delivery_time) return a.delivery_time < b.delivery_time;
    return a.order < b.order;
  });
  std::vector<std::pair<int, GroundMeasurement>> out;
  out.reserve(ready.size());
  for (auto& f : ready) out.emplace_back(f.receiver, std::move(f.message));
  return out;
}

}  // namespace airship::perception
