#pragma once

#include "airship/common.hpp"
#include "airship/estimation.hpp"

#include <deque>
#include <map>
#include <optional>
#include <vector>

namespace airship::perception {

using Vec4 = Eigen::Vector4d;
using Mat4 = Eigen::Matrix4d;

/// Observation camera mounted on the hull. Camera axes: x = image right,
/// y = image down, z = boresight.
struct CameraModel {
  double mount_azimuth{deg2rad(90.0)};     // towards starboard from body x
  double mount_depression{deg2rad(30.0)};  // below the body xy plane
  double hfov{deg2rad(82.0)};
  double vfov{deg2rad(52.0)};
  double max_range{300.0};

  void validate() const;
  Vec3 boresight_body() const;
  /// Columns are the camera axes expressed in the body frame.
  Mat3 camera_to_body() const;
};

struct CameraPose {
  Vec3 position{Vec3::Zero()};
  Mat3 camera_to_world{Mat3::Identity()};

  Vec3 boresight() const { return camera_to_world.col(2); }
};

CameraPose camera_pose(const Vec3& vehicle_position, const Quat& attitude, const CameraModel& cam);

/// Pinhole projection to normalized [0,1]^2 image coordinates; nullopt when the
/// point is behind the camera, outside the field of view, or beyond max range.
std::optional<Vec2> project_subject(const CameraPose& pose, const CameraModel& cam,
                                    const Vec3& subject);

/// World direction of the ray through a normalized pixel (not unit length).
Vec3 pixel_ray(const CameraPose& pose, const CameraModel& cam, const Vec2& pixel);

class NoGroundIntersection : public std::runtime_error {
 public:
  NoGroundIntersection() : std::runtime_error("no ground intersection") {}
};

/// Intersection of the pixel ray with the ground plane z = 0.
Vec3 pixel_to_ground(const CameraPose& pose, const CameraModel& cam, const Vec2& pixel);

struct SubjectTrack {
  Vec4 mean{Vec4::Zero()};  // x, y, vx, vy
  Mat4 covariance{Mat4::Identity()};
  double last_update{0.0};
  bool initialized{false};

  Vec2 position() const { return mean.head<2>(); }
  Vec2 velocity() const { return mean.tail<2>(); }
};

struct TrackerConfig {
  double accel_noise{0.3};      // m/s^2 / sqrt(Hz), white-acceleration model
  double init_pos_std{5.0};
  double init_vel_std{1.5};
  double pixel_noise_std{0.004};  // normalized image units
  double min_measurement_std{0.3};
  double fusion_lag{1.0};       // s kept for out-of-order remote measurements
};

struct Detection {
  Vec2 pixel{0.5, 0.5};
  double timestamp{0.0};
  int source_vehicle{0};
  double pixel_noise_std{0.0};
};

struct DetectionConfig {
  double p_hi{0.95};
  double p_lo{0.5};
  double pixel_noise_std{0.004};
  double roi_sigma{3.0};
};

struct Roi {
  Vec2 lo;
  Vec2 hi;
  bool contains(const Vec2& p) const {
    return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all();
  }
};

/// Image-space box covering the projected track mean +- roi_sigma standard
/// deviations; nullopt for an uninitialized track or one out of view.
std::optional<Roi> predicted_roi(const SubjectTrack& track, const CameraPose& pose,
                                 const CameraModel& cam, double sigma);

std::optional<Detection> simulate_detection(const std::optional<Vec2>& projection,
                                            const SubjectTrack& track, const CameraPose& pose,
                                            const CameraModel& cam, const DetectionConfig& cfg,
                                            double timestamp, int vehicle, Rng& rng);

/// Ground-plane pseudo-measurement exchanged between vehicles.
struct GroundMeasurement {
  Vec2 position{Vec2::Zero()};
  Mat2 covariance{Mat2::Identity()};
  double timestamp{0.0};
  int source_vehicle{0};
  std::uint64_t sequence{0};  // per-source counter, breaks timestamp ties
};

/// Back-projects a detection through the estimated camera pose. The
/// covariance grows with range^2 and with the navigation uncertainty.
std::optional<GroundMeasurement> detection_to_measurement(const Detection& det,
                                                          const CameraPose& est_pose,
                                                          const CameraModel& cam,
                                                          const estimation::Mat15& nav_cov,
                                                          const TrackerConfig& cfg);

/// Constant-velocity prediction to `time`.
SubjectTrack track_predict(const SubjectTrack& track, double time, const TrackerConfig& cfg);
SubjectTrack track_update(const SubjectTrack& track, const GroundMeasurement& m);
bool track_is_spd(const SubjectTrack& track);

/// Measurement ordering shared by every fusion path.
bool measurement_before(const GroundMeasurement& a, const GroundMeasurement& b);

/// Functional form: folds `measurements` (any order; they are sorted) into the
/// track and predicts to `now`. A non-SPD result resets to uninitialized.
SubjectTrack tracker_step(const SubjectTrack& track, std::vector<GroundMeasurement> measurements,
                          double now, const TrackerConfig& cfg, bool* reset_event = nullptr);

SubjectTrack reinitialize_track(const SubjectTrack& track, const Vec2& world_point, double time,
                                const TrackerConfig& cfg);

/// Per-vehicle fusion node. Keeps an anchor posterior plus the measurements
/// received inside the fusion lag, so measurements that arrive late (remote
/// ones) are folded in timestamp order. Under lossless delivery every node
/// reproduces the centralized filter exactly.
class CooperativeTracker {
 public:
  explicit CooperativeTracker(TrackerConfig cfg = {});

  void add_measurement(const GroundMeasurement& m);
  /// Re-folds buffered measurements and returns the posterior at `now`.
  const SubjectTrack& step(double now);
  void reinitialize(const Vec2& world_point, double time);

  const SubjectTrack& track() const { return output_; }
  /// Chain state after the last folded measurement (before predict-to-now).
  const SubjectTrack& chain() const { return chain_; }
  int late_drops() const { return late_drops_; }
  int resets() const { return resets_; }
  bool take_reset_event();
  const TrackerConfig& config() const { return cfg_; }

 private:
  TrackerConfig cfg_;
  SubjectTrack anchor_;
  std::vector<GroundMeasurement> pending_;  // after the anchor, sorted
  SubjectTrack chain_;
  SubjectTrack output_;
  int late_drops_{0};
  int resets_{0};
  bool reset_pending_{false};
};

struct CommsConfig {
  double range{150.0};
  double full_quality_fraction{0.8};
  double latency{0.05};
  double jitter{0.01};
  double extra_loss{0.0};  // additional independent loss probability
};

/// 0 inside full_quality_fraction * range, linear to 1 at range.
double drop_probability(double distance, const CommsConfig& cfg);

struct Delivery {
  bool delivered{false};
  double delivery_time{0.0};
};

Delivery comms_deliver(const Vec3& sender, const Vec3& receiver, double send_time,
                       const CommsConfig& cfg, Rng& rng);

/// Simulated broadcast network with per-link FIFO ordering.
class Network {
 public:
  Network(CommsConfig cfg, std::uint64_t seed);

  /// Sends to every other vehicle in `positions` (indexed by vehicle id).
  void broadcast(int sender, const GroundMeasurement& m, const std::vector<Vec3>& positions,
                 double now);
  /// Messages whose delivery time is <= now, grouped by receiver, in order.
  std::vector<std::pair<int, GroundMeasurement>> deliver_until(double now);

  int sent() const { return sent_; }
  int dropped() const { return dropped_; }
  const CommsConfig& config() const { return cfg_; }

 private:
  struct InFlight {
    double delivery_time;
    std::uint64_t order;
    int receiver;
    GroundMeasurement message;
  };
  CommsConfig cfg_;
  Rng rng_;
  std::vector<InFlight> in_flight_;
  std::map<std::pair<int, int>, double> last_delivery_;
  std::uint64_t order_{0};
  int sent_{0};
  int dropped_{0};
};

}  // namespace airship::perception
