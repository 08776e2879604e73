#include "airship/telemetry.hpp"

#include "airship/perception.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <map>
#include <sstream>
#include <thread>

namespace airship::telemetry {

std::string encode_record(const Json& record) {
  const std::string body = record.dump();
  return std::to_string(body.size()) + " " + body + "\n";
}

std::optional<Json> decode_record(const std::string& line) {
  const auto space = line.find(' ');
  if (space == std::string::npos || space == 0 || space > 12) return std::nullopt;
  std::size_t len = 0;
  for (std::size_t i = 0; i < space; ++i) {
    if (line[i] < '0' || line[i] > '9') return std::nullopt;
    len = len * 10 + static_cast<std::size_t>(line[i] - '0');
  }
  if (line.size() - space - 1 != len) return std::nullopt;
  Json j = Json::parse(line.begin() + static_cast<std::ptrdiff_t>(space) + 1, line.end(), nullptr,
                       false);
  if (j.is_discarded() || !j.is_object()) return std::nullopt;
  return j;
}

LogWriter::LogWriter(const std::string& path) { open(path); }

LogWriter::~LogWriter() { close(); }

void LogWriter::open(const std::string& path) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw std::runtime_error("cannot open log '" + path + "' for writing");
  records_ = 0;
}

void LogWriter::write(const Json& record) {
  out_ << encode_record(record);
  ++records_;
}

void LogWriter::close() {
  if (out_.is_open()) out_.close();
}

LogContents parse_log(std::istream& in) {
  LogContents log;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (in.eof()) log.truncated = true;  // no trailing newline
    if (line.empty()) continue;
    auto rec = decode_record(line);
    if (!rec) {
      ++log.corrupt;
      continue;
    }
    if (first && rec->value("kind", "") == "header") {
      log.header = std::move(*rec);
      first = false;
      continue;
    }
    first = false;
    if (rec->value("kind", "") == "event" && rec->value("event", "") == "end") log.complete = true;
    log.records.push_back(std::move(*rec));
  }
  return log;
}

LogContents read_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open log '" + path + "'");
  return parse_log(in);
}

Vec3 json_vec3(const Json& j) {
  return Vec3(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>());
}
Vec2 json_vec2(const Json& j) { return Vec2(j.at(0).get<double>(), j.at(1).get<double>()); }
Quat json_quat(const Json& j) {
  return Quat(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>(),
              j.at(3).get<double>());
}

bool same_metrics(const RunMetrics& a, const RunMetrics& b) {
  auto eq = [](double x, double y) { return (std::isnan(x) && std::isnan(y)) || x == y; };
  return eq(a.in_fov_fraction, b.in_fov_fraction) && eq(a.centering_mean_deg, b.centering_mean_deg) &&
         eq(a.centering_p95_deg, b.centering_p95_deg) &&
         eq(a.separation_rmse_deg, b.separation_rmse_deg) &&
         eq(a.min_vehicle_distance, b.min_vehicle_distance) &&
         eq(a.min_subject_distance, b.min_subject_distance) &&
         eq(a.max_geofence_excursion, b.max_geofence_excursion) && eq(a.energy_wh, b.energy_wh) &&
         eq(a.endurance_min, b.endurance_min) && a.samples == b.samples && a.partial == b.partial;
}

namespace {

perception::CameraModel camera_from_header(const Json& h) {
  perception::CameraModel cam;
  if (h.contains("camera")) {
    const Json& c = h["camera"];
    cam.mount_azimuth = c.value("azimuth", cam.mount_azimuth);
    cam.mount_depression = c.value("depression", cam.mount_depression);
    cam.hfov = c.value("hfov", cam.hfov);
    cam.vfov = c.value("vfov", cam.vfov);
    cam.max_range = c.value("max_range", cam.max_range);
  }
  return cam;
}

struct Sample {
  std::map<int, std::pair<Vec3, Quat>> vehicles;
  std::optional<Vec3> subject;
};

}  // namespace

RunMetrics compute_metrics(const LogContents& log, double t_begin, double t_end) {
  RunMetrics m;
  m.partial = log.truncated || !log.complete || log.corrupt > 0;
  const perception::CameraModel cam = camera_from_header(log.header);
  std::optional<std::pair<Vec3, Vec3>> box;
  if (log.header.contains("skybox")) {
    box = std::make_pair(json_vec3(log.header["skybox"]["min"]),
                         json_vec3(log.header["skybox"]["max"]));
  }
  double capacity = 10.0;
  double voltage = 14.5;
  if (log.header.contains("battery")) {
    capacity = log.header["battery"].value("capacity_ah", capacity);
    voltage = log.header["battery"].value("voltage", voltage);
  }

  std::map<std::int64_t, Sample> samples;
  std::map<int, std::vector<std::pair<double, double>>> power;  // vehicle -> (t, W)
  for (const Json& r : log.records) {
    const std::int64_t t_us = r.value("t", std::int64_t{0});
    const double t = static_cast<double>(t_us) * 1e-6;
    if (t < t_begin || t > t_end) continue;
    const std::string kind = r.value("kind", "");
    if (kind == "true_state") {
      if (r.value("entity", "") == "subject") {
        samples[t_us].subject = json_vec3(r["p"]);
      } else {
        samples[t_us].vehicles[r.value("vehicle", 0)] = {json_vec3(r["p"]), json_quat(r["q"])};
      }
    } else if (kind == "power") {
      power[r.value("vehicle", 0)].emplace_back(t, r.value("power_w", 0.0));
    }
  }

  std::vector<double> centering;
  std::int64_t in_view = 0;
  double sep_sq = 0.0;
  std::int64_t sep_n = 0;
  double min_vv = std::numeric_limits<double>::infinity();
  double min_vs = std::numeric_limits<double>::infinity();
  double max_ex = 0.0;
  bool any_vehicle = false;
  for (const auto& [t_us, s] : samples) {
    (void)t_us;
    if (s.vehicles.empty()) continue;
    any_vehicle = true;
    for (const auto& [id, pq] : s.vehicles) {
      (void)id;
      if (box) {
        const Vec3 below = (box->first - pq.first).cwiseMax(0.0);
        const Vec3 above = (pq.first - box->second).cwiseMax(0.0);
        max_ex = std::max(max_ex, (below + above).norm());
      }
      if (!s.subject) continue;
      const perception::CameraPose pose = perception::camera_pose(pq.first, pq.second, cam);
      const Vec3 los = *s.subject - pq.first;
      const double ang = std::atan2(pose.boresight().cross(los).norm(), pose.boresight().dot(los));
      centering.push_back(rad2deg(ang));
      if (perception::project_subject(pose, cam, *s.subject)) ++in_view;
      min_vs = std::min(min_vs, (pq.first.head<2>() - s.subject->head<2>()).norm());
    }
    for (auto a = s.vehicles.begin(); a != s.vehicles.end(); ++a) {
      for (auto b = std::next(a); b != s.vehicles.end(); ++b) {
        min_vv = std::min(min_vv, (a->second.first - b->second.first).norm());
      }
    }
    if (s.subject && s.vehicles.size() >= 2) {
      std::vector<double> az;
      for (const auto& [id, pq] : s.vehicles) {
        (void)id;
        const Vec2 d = pq.first.head<2>() - s.subject->head<2>();
        az.push_back(std::atan2(d.y(), d.x()));
      }
      std::sort(az.begin(), az.end());
      const double target = 2.0 * kPi / static_cast<double>(az.size());
      for (std::size_t k = 0; k < az.size(); ++k) {
        double gap = k + 1 < az.size() ? az[k + 1] - az[k] : az.front() + 2.0 * kPi - az[k];
        sep_sq += (gap - target) * (gap - target);
        ++sep_n;
      }
    }
  }

  m.samples = static_cast<std::int64_t>(centering.size());
  if (!centering.empty()) {
    m.in_fov_fraction = static_cast<double>(in_view) / static_cast<double>(centering.size());
    double sum = 0.0;
    for (double c : centering) sum += c;
    m.centering_mean_deg = sum / static_cast<double>(centering.size());
    std::vector<double> sorted = centering;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t idx = static_cast<std::size_t>(
        std::ceil(0.95 * static_cast<double>(sorted.size()))) - 1;
    m.centering_p95_deg = sorted[std::min(idx, sorted.size() - 1)];
    m.min_subject_distance = min_vs;
  }
  if (sep_n > 0) m.separation_rmse_deg = rad2deg(std::sqrt(sep_sq / static_cast<double>(sep_n)));
  if (std::isfinite(min_vv)) m.min_vehicle_distance = min_vv;
  if (any_vehicle && box) m.max_geofence_excursion = max_ex;

  if (!power.empty()) {
    double energy = 0.0;
    double endurance = std::numeric_limits<double>::infinity();
    for (const auto& [id, series] : power) {
      (void)id;
      double mean_w = 0.0;
      for (std::size_t k = 0; k < series.size(); ++k) {
        mean_w += series[k].second;
        if (k > 0) {
          energy += 0.5 * (series[k].second + series[k - 1].second) *
                    (series[k].first - series[k - 1].first) / 3600.0;
        }
      }
      mean_w /= static_cast<double>(series.size());
      const double current = mean_w / voltage;
      if (current > 0.0) endurance = std::min(endurance, capacity / current * 60.0);
    }
    m.energy_wh = energy;
    if (std::isfinite(endurance)) m.endurance_min = endurance;
  }
  return m;
}

namespace {

std::string fmt(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

}  // namespace

std::string metrics_csv_header() {
  return "scenario,seed,in_fov_fraction,centering_mean_deg,centering_p95_deg,separation_rmse_deg,"
         "min_vehicle_distance_m,min_subject_distance_m,max_geofence_excursion_m,energy_wh,"
         "endurance_min,samples,partial";
}

std::string metrics_csv_row(const RunMetrics& m, const std::string& scenario, std::uint64_t seed) {
  std::ostringstream o;
  o << scenario << ',' << seed << ',' << fmt(m.in_fov_fraction) << ',' << fmt(m.centering_mean_deg)
    << ',' << fmt(m.centering_p95_deg) << ',' << fmt(m.separation_rmse_deg) << ','
    << fmt(m.min_vehicle_distance) << ',' << fmt(m.min_subject_distance) << ','
    << fmt(m.max_geofence_excursion) << ',' << fmt(m.energy_wh) << ',' << fmt(m.endurance_min)
    << ',' << m.samples << ',' << (m.partial ? 1 : 0);
  return o.str();
}

std::string metrics_summary(const RunMetrics& m) {
  auto line = [](const char* label, double v, const char* unit) {
    char buf[96];
    if (std::isnan(v)) {
      std::snprintf(buf, sizeof buf, "  %-24s n/a\n", label);
    } else {
      std::snprintf(buf, sizeof buf, "  %-24s %.3f%s\n", label, v, unit);
    }
    return std::string(buf);
  };
  std::string s = m.partial ? "metrics (partial log)\n" : "metrics\n";
  s += line("subject in view", m.in_fov_fraction, "");
  s += line("centering mean", m.centering_mean_deg, " deg");
  s += line("centering p95", m.centering_p95_deg, " deg");
  s += line("separation rmse", m.separation_rmse_deg, " deg");
  s += line("min vehicle distance", m.min_vehicle_distance, " m");
  s += line("min subject distance", m.min_subject_distance, " m");
  s += line("max geofence excursion", m.max_geofence_excursion, " m");
  s += line("energy used", m.energy_wh, " Wh");
  s += line("endurance estimate", m.endurance_min, " min");
  return s;
}

ReplayStats replay(const std::string& path, double speed, const std::function<void(const Json&)>& sink,
                   const std::atomic<bool>* stop) {
  if (speed < 0.0) throw std::invalid_argument("replay speed must be >= 0");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open log '" + path + "'");
  ReplayStats stats;
  const auto start = std::chrono::steady_clock::now();
  std::optional<std::int64_t> t0;
  std::string line;
  while (std::getline(in, line)) {
    if (stop && stop->load()) break;
    if (line.empty()) continue;
    auto rec = decode_record(line);
    if (!rec) {
      ++stats.corrupt;
      continue;
    }
    if (speed > 0.0 && rec->contains("t")) {
      const std::int64_t t = (*rec)["t"].get<std::int64_t>();
      if (!t0) t0 = t;
      const auto due = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                   std::chrono::duration<double>((t - *t0) * 1e-6 / speed));
      std::this_thread::sleep_until(due);
    }
    sink(*rec);
    ++stats.emitted;
  }
  stats.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return stats;
}

}  // namespace airship::telemetry
