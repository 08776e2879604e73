#pragma once

#include "airship/common.hpp"

#include <json.hpp>

#include <atomic>
#include <functional>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

namespace airship::telemetry {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;

/// One log line: "<byte length of json> <json>\n".
std::string encode_record(const Json& record);

/// Parses one line (without the newline); nullopt when the prefix does not
/// match the payload length or the JSON is malformed.
std::optional<Json> decode_record(const std::string& line);

class LogWriter {
 public:
  LogWriter() = default;
  explicit LogWriter(const std::string& path);
  ~LogWriter();
  LogWriter(const LogWriter&) = delete;
  LogWriter& operator=(const LogWriter&) = delete;

  void open(const std::string& path);
  void write(const Json& record);
  void close();
  bool is_open() const { return out_.is_open(); }
  std::uint64_t records() const { return records_; }

 private:
  std::ofstream out_;
  std::uint64_t records_{0};
};

struct LogContents {
  Json header;
  std::vector<Json> records;  // header excluded
  int corrupt{0};
  bool truncated{false};  // last line had no newline
  bool complete{false};   // end event present
};

LogContents parse_log(std::istream& in);
LogContents read_log(const std::string& path);

inline Json vec_json(const Vec3& v) { return Json::array({v.x(), v.y(), v.z()}); }
inline Json vec_json(const Vec2& v) { return Json::array({v.x(), v.y()}); }
inline Json quat_json(const Quat& q) { return Json::array({q.w(), q.x(), q.y(), q.z()}); }
Vec3 json_vec3(const Json& j);
Vec2 json_vec2(const Json& j);
Quat json_quat(const Json& j);

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct RunMetrics {
  double in_fov_fraction{kNaN};
  double centering_mean_deg{kNaN};
  double centering_p95_deg{kNaN};
  double separation_rmse_deg{kNaN};
  double min_vehicle_distance{kNaN};
  double min_subject_distance{kNaN};
  double max_geofence_excursion{kNaN};
  double energy_wh{kNaN};
  double endurance_min{kNaN};
  std::int64_t samples{0};  // vehicle-samples used for the camera metrics
  bool partial{false};
};

/// NaN-aware exact comparison.
bool same_metrics(const RunMetrics& a, const RunMetrics& b);

/// Pure function of the records. Only records with t_begin <= time <= t_end
/// (seconds) contribute.
RunMetrics compute_metrics(const LogContents& log,
                           double t_begin = -std::numeric_limits<double>::infinity(),
                           double t_end = std::numeric_limits<double>::infinity());

std::string metrics_csv_header();
std::string metrics_csv_row(const RunMetrics& m, const std::string& scenario, std::uint64_t seed);
std::string metrics_summary(const RunMetrics& m);

struct ReplayStats {
  std::uint64_t emitted{0};
  int corrupt{0};
  double wall_seconds{0.0};
};

/// Re-emits the header and every record. speed > 0 paces on the record
/// timestamps scaled by 1/speed; speed == 0 emits as fast as possible.
ReplayStats replay(const std::string& path, double speed, const std::function<void(const Json&)>& sink,
                   const std::atomic<bool>* stop = nullptr);

}  // namespace airship::telemetry
