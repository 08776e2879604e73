#include "airship/station.hpp"

#include <algorithm>
#include <chrono>

namespace airship::station {

namespace {

const char* const kServerKinds[] = {"hello",       "state_update",     "camera_view", "track_update",
                                    "plan_summary", "metrics_snapshot", "event"};
const char* const kClientKinds[] = {"select_subject", "set_mode", "manual_control", "sim_control",
                                    "set_rate"};

}  // namespace

bool is_server_kind(const std::string& kind) {
  return std::any_of(std::begin(kServerKinds), std::end(kServerKinds),
                     [&](const char* k) { return kind == k; });
}

bool is_client_kind(const std::string& kind) {
  return std::any_of(std::begin(kClientKinds), std::end(kClientKinds),
                     [&](const char* k) { return kind == k; });
}

Json to_json(const Message& m) {
  return {{"v", kProtocolVersion},
          {"kind", m.kind},
          {"seq", m.seq},
          {"time_us", m.time_us},
          {"payload", m.payload}};
}

std::string encode(const Message& m) { return to_json(m).dump(); }

Message decode(const std::string& text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw ProtocolError("frame is not valid JSON");
  if (!j.is_object()) throw ProtocolError("frame must be a JSON object");
  if (j.contains("v") && (!j["v"].is_number_integer() || j["v"].get<int>() != kProtocolVersion)) {
    throw ProtocolError("unsupported protocol version");
  }
  if (!j.contains("kind") || !j["kind"].is_string()) throw ProtocolError("missing string 'kind'");
  if (!j.contains("seq") || !j["seq"].is_number_integer()) {
    throw ProtocolError("missing integer 'seq'");
  }
  Message m;
  m.kind = j["kind"].get<std::string>();
  m.seq = j["seq"].get<std::int64_t>();
  if (j.contains("time_us")) {
    if (!j["time_us"].is_number_integer()) throw ProtocolError("'time_us' must be an integer");
    m.time_us = j["time_us"].get<std::int64_t>();
  }
  if (j.contains("payload")) {
    if (!j["payload"].is_object()) throw ProtocolError("'payload' must be an object");
    m.payload = j["payload"];
  }
  return m;
}

bool ClientQueue::droppable(const std::string& kind) {
  return kind == "state_update" || kind == "camera_view" || kind == "track_update" ||
         kind == "metrics_snapshot" || kind == "plan_summary";
}

void ClientQueue::push(Message m) {
  m.seq = next_seq_++;
  if (items_.size() >= capacity_ && droppable(m.kind)) {
    auto victim = std::find_if(items_.begin(), items_.end(),
                               [](const Message& x) { return x.kind == "state_update"; });
    if (victim == items_.end()) {
      victim = std::find_if(items_.begin(), items_.end(),
                            [](const Message& x) { return droppable(x.kind); });
    }
    if (victim != items_.end()) {
      items_.erase(victim);
      ++dropped_;
    } else {
      // Only events queued: the newcomer is the one to go.
      ++dropped_;
      return;
    }
  }
  items_.push_back(std::move(m));
}

std::optional<Message> ClientQueue::pop() {
  if (items_.empty()) return std::nullopt;
  Message m = std::move(items_.front());
  items_.pop_front();
  return m;
}

StationHub::StationHub(std::string scenario_hash, std::size_t queue_capacity)
    : hash_(std::move(scenario_hash)), capacity_(queue_capacity) {}

int StationHub::connect(std::function<void()> notify) {
  std::function<void()> n;
  int id;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    id = next_id_++;
    Client& c = clients_.emplace(id, Client{ClientQueue(capacity_), std::move(notify), 0}).first->second;
    c.queue.push({"hello",
                  0,
                  0,
                  {{"schema_version", kProtocolVersion},
                   {"scenario_hash", hash_},
                   {"client", id}}});
    n = c.notify;
  }
  if (n) n();
  return id;
}

void StationHub::disconnect(int client) {
  std::lock_guard<std::mutex> lock(mutex_);
  clients_.erase(client);
}

void StationHub::broadcast(const std::string& kind, std::int64_t time_us, Json payload) {
  std::vector<std::function<void()>> notify;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    for (auto& [id, c] : clients_) {
      (void)id;
      c.queue.push({kind, 0, time_us, payload});
      if (c.notify) notify.push_back(c.notify);
    }
  }
  for (auto& n : notify) n();
}

void StationHub::send_to(int client, const std::string& kind, std::int64_t time_us, Json payload) {
  std::function<void()> n;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    auto it = clients_.find(client);
    if (it == clients_.end()) return;
    it->second.queue.push({kind, 0, time_us, std::move(payload)});
    n = it->second.notify;
  }
  if (n) n();
}

std::optional<Message> StationHub::pop(int client) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = clients_.find(client);
  if (it == clients_.end()) return std::nullopt;
  return it->second.queue.pop();
}

std::size_t StationHub::clients() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return clients_.size();
}

std::uint64_t StationHub::dropped(int client) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = clients_.find(client);
  return it == clients_.end() ? 0 : it->second.queue.dropped();
}

bool StationHub::accept_inbound_seq(int client, std::int64_t seq) {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = clients_.find(client);
  if (it == clients_.end() || seq <= it->second.last_inbound) return false;
  it->second.last_inbound = seq;
  return true;
}

void RecordAggregator::feed(const Json& r) {
  const std::string kind = r.value("kind", "");
  if (kind == "header") {
    if (r.contains("camera")) {
      const Json& c = r["camera"];
      camera_.mount_azimuth = c.value("azimuth", camera_.mount_azimuth);
      camera_.mount_depression = c.value("depression", camera_.mount_depression);
      camera_.hfov = c.value("hfov", camera_.hfov);
      camera_.vfov = c.value("vfov", camera_.vfov);
      camera_.max_range = c.value("max_range", camera_.max_range);
    }
    return;
  }
  const std::int64_t t = r.value("t", std::int64_t{0});
  if (kind == "event" || kind == "plan_summary") {
    Json payload = r;
    payload.erase("kind");
    payload.erase("t");
    emit_(kind, t, std::move(payload));
    return;
  }
  const bool batched = kind == "true_state" || kind == "nav_estimate" || kind == "setpoints" ||
                       kind == "power" || kind == "track";
  if (!batched) return;
  if (batch_time_ && *batch_time_ != t) close_batch();
  batch_time_ = t;
  if (kind == "true_state" && r.value("entity", "") == "subject") {
    subject_ = r;
    return;
  }
  const int id = r.value("vehicle", 0);
  if (kind == "true_state") true_state_[id] = r;
  if (kind == "nav_estimate") nav_[id] = r;
  if (kind == "setpoints") setpoints_[id] = r;
  if (kind == "power") power_[id] = r;
  if (kind == "track") track_[id] = r;
}

void RecordAggregator::flush() {
  if (batch_time_) close_batch();
}

void RecordAggregator::close_batch() {
  const std::int64_t t = *batch_time_;
  batch_time_.reset();

  std::optional<Vec3> subject;
  if (subject_) subject = telemetry::json_vec3((*subject_)["p"]);
  for (const auto& [id, ts] : true_state_) {
    (void)id;
    if (!subject) continue;
    const auto pose =
        perception::camera_pose(telemetry::json_vec3(ts["p"]), telemetry::json_quat(ts["q"]), camera_);
    const Vec3 los = *subject - pose.position;
    centering_sum_ += rad2deg(std::atan2(pose.boresight().cross(los).norm(), pose.boresight().dot(los)));
    ++views_;
    if (perception::project_subject(pose, camera_, *subject)) ++in_view_;
  }

  if (t >= next_state_) {
    next_state_ = (t / 200000 + 1) * 200000;
    Json vehicles = Json::array();
    Json tracks = Json::array();
    for (const auto& [id, ts] : true_state_) {
      Json v = {{"id", id}, {"p", ts["p"]}, {"v", ts["v"]}, {"q", ts["q"]}, {"airspeed", ts["airspeed"]}};
      if (nav_.count(id)) v["est_p"] = nav_[id]["p"];
      if (setpoints_.count(id)) {
        v["mode"] = setpoints_[id]["vehicle_mode"];
        v["guard"] = setpoints_[id]["guard"];
        v["setpoints"] = {{"airspeed", setpoints_[id]["airspeed"]},
                          {"turn_rate", setpoints_[id]["turn_rate"]},
                          {"climb_rate", setpoints_[id]["climb_rate"]}};
      }
      if (power_.count(id)) v["power_w"] = power_[id]["power_w"];
      vehicles.push_back(std::move(v));
      if (track_.count(id)) {
        tracks.push_back({{"vehicle", id},
                          {"initialized", track_[id]["initialized"]},
                          {"mean", track_[id]["mean"]},
                          {"cov", track_[id]["cov"]}});
      }
    }
    Json state = {{"vehicles", vehicles}};
    if (subject_) state["subject"] = {{"p", (*subject_)["p"]}};
    emit_("state_update", t, std::move(state));
    emit_("track_update", t, {{"tracks", tracks}});
  }

  if (t >= next_view_) {
    next_view_ = (t / 500000 + 1) * 500000;
    Json views = Json::array();
    for (const auto& [id, nav] : nav_) {
      const auto pose =
          perception::camera_pose(telemetry::json_vec3(nav["p"]), telemetry::json_quat(nav["q"]), camera_);
      Json view = {{"vehicle", id}};
      if (track_.count(id) && track_[id].value("initialized", false)) {
        perception::SubjectTrack tr;
        tr.initialized = true;
        const Json& mean = track_[id]["mean"];
        tr.mean << mean[0].get<double>(), mean[1].get<double>(), mean[2].get<double>(),
            mean[3].get<double>();
        const Json& cov = track_[id]["cov"];
        for (int k = 0; k < 16; ++k) tr.covariance(k / 4, k % 4) = cov[static_cast<std::size_t>(k)].get<double>();
        if (auto px = perception::project_subject(pose, camera_, Vec3(tr.mean(0), tr.mean(1), 0.0))) {
          view["track_pixel"] = telemetry::vec_json(*px);
        }
        if (auto roi = perception::predicted_roi(tr, pose, camera_, 3.0)) {
          view["roi"] = {telemetry::vec_json(roi->lo), telemetry::vec_json(roi->hi)};
        }
      }
      if (subject && true_state_.count(id)) {
        const auto true_pose = perception::camera_pose(telemetry::json_vec3(true_state_[id]["p"]),
                                                       telemetry::json_quat(true_state_[id]["q"]), camera_);
        if (auto px = perception::project_subject(true_pose, camera_, *subject)) {
          view["subject_pixel"] = telemetry::vec_json(*px);
        }
      }
      views.push_back(std::move(view));
    }
    emit_("camera_view", t, {{"views", views}});
  }

  if (t >= next_metrics_ && views_ > 0) {
    next_metrics_ = (t / 10'000'000 + 1) * 10'000'000;
    emit_("metrics_snapshot", t,
          {{"in_fov_fraction", static_cast<double>(in_view_) / static_cast<double>(views_)},
           {"centering_mean_deg", centering_sum_ / static_cast<double>(views_)},
           {"samples", views_}});
  }

  true_state_.clear();
  nav_.clear();
  setpoints_.clear();
  power_.clear();
  track_.clear();
  subject_.reset();
}

LiveRunner::LiveRunner(sim::Simulation& sim, StationHub& hub, double speed)
    : sim_(sim),
      hub_(hub),
      aggregator_([&hub](const std::string& kind, std::int64_t t, Json payload) {
        hub.broadcast(kind, t, std::move(payload));
      }),
      speed_(speed) {}

LiveRunner::~LiveRunner() {
  stop();
  if (thread_.joinable()) thread_.join();
}

void LiveRunner::start() {
  sim_.set_sink([this](const Json& r) {
    if (tap_) tap_(r);
    aggregator_.feed(r);
  });
  thread_ = std::thread([this] { loop(); });
}

void LiveRunner::stop() {
  stop_ = true;
  cv_.notify_all();
}

void LiveRunner::wait() {
  std::unique_lock<std::mutex> lock(mutex_);
  cv_.wait(lock, [this] { return done_.load() || stop_.load(); });
}

void LiveRunner::loop() {
  using clock = std::chrono::steady_clock;
  sim_.start();
  auto wall0 = clock::now();
  double sim0 = sim_.time();
  double last_speed = speed_.load();
  while (!stop_.load() && !sim_.finished()) {
    if (paused_.load()) {
      std::unique_lock<std::mutex> lock(mutex_);
      cv_.wait(lock, [this] { return !paused_.load() || stop_.load(); });
      wall0 = clock::now();
      sim0 = sim_.time();
      continue;
    }
    const double speed = speed_.load();
    if (speed != last_speed) {
      wall0 = clock::now();
      sim0 = sim_.time();
      last_speed = speed;
    }
    if (speed <= 0.0) {
      for (int k = 0; k < 500 && !paused_.load(); ++k) {
        if (!sim_.step()) break;
      }
      continue;
    }
    const double elapsed = std::chrono::duration<double>(clock::now() - wall0).count();
    const double target = sim0 + elapsed * speed;
    while (sim_.time() < target && !paused_.load() && !stop_.load()) {
      if (!sim_.step()) break;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
  aggregator_.flush();
  {
    std::lock_guard<std::mutex> lock(mutex_);
    done_ = true;
  }
  cv_.notify_all();
}

void LiveRunner::ack(const Message& m, int client, bool accepted, const std::string& reason) {
  Json f = {{"event", "ack"}, {"seq", m.seq}, {"client", client}, {"command", m.kind}, {"accepted", accepted}};
  if (!reason.empty()) f["reason"] = reason;
  hub_.broadcast("event", m.time_us, std::move(f));
}

void LiveRunner::handle_command(int client, const Message& m) {
  if (m.kind != "sim_control") {
    sim_.enqueue({m.kind, m.seq, client, m.payload});
    return;
  }
  const std::string action = m.payload.value("action", "");
  if (action == "pause") {
    paused_ = true;
    ack(m, client, true);
  } else if (action == "resume") {
    {
      std::lock_guard<std::mutex> lock(mutex_);
      paused_ = false;
    }
    cv_.notify_all();
    ack(m, client, true);
  } else if (action == "speed") {
    const auto it = m.payload.find("value");
    if (it == m.payload.end() || !it->is_number() || it->get<double>() < 0.0) {
      ack(m, client, false, "speed must be a number >= 0");
      return;
    }
    speed_ = it->get<double>();
    ack(m, client, true);
  } else {
    ack(m, client, false, "unknown sim_control action");
  }
}

std::string query_token(const std::string& target) {
  const auto q = target.find('?');
  if (q == std::string::npos) return "";
  std::size_t pos = q + 1;
  while (pos < target.size()) {
    const auto amp = target.find('&', pos);
    const std::string pair = target.substr(pos, amp == std::string::npos ? std::string::npos : amp - pos);
    if (pair.rfind("token=", 0) == 0) return pair.substr(6);
    if (amp == std::string::npos) break;
    pos = amp + 1;
  }
  return "";
}

std::string content_type_for(const std::string& path) {
  auto ends = [&](const char* ext) {
    const std::string e(ext);
    return path.size() >= e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0;
  };
  if (ends(".html")) return "text/html";
  if (ends(".js")) return "application/javascript";
  if (ends(".css")) return "text/css";
  if (ends(".json")) return "application/json";
  if (ends(".svg")) return "image/svg+xml";
  if (ends(".png")) return "image/png";
  return "application/octet-stream";
}

}  // namespace airship::station
