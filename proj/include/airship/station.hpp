#pragma once

#include "airship/perception.hpp"
#include "airship/simulation.hpp"
#include "airship/telemetry.hpp"

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace airship::station {

using telemetry::Json;

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One JSON object per WebSocket text frame.
struct Message {
  std::string kind;
  std::int64_t seq{0};
  std::int64_t time_us{0};
  Json payload = Json::object();

  bool operator==(const Message& o) const {
    return kind == o.kind && seq == o.seq && time_us == o.time_us && payload == o.payload;
  }
};

bool is_server_kind(const std::string& kind);
bool is_client_kind(const std::string& kind);

Json to_json(const Message& m);
std::string encode(const Message& m);
/// Throws ProtocolError on malformed frames (bad JSON, missing or mistyped fields).
Message decode(const std::string& text);

/// Outbound queue of one connection. Periodic snapshots are dropped oldest
/// first when full; events are never dropped.
class ClientQueue {
 public:
  explicit ClientQueue(std::size_t capacity = 256) : capacity_(capacity) {}

  /// Assigns the next sequence number and enqueues.
  void push(Message m);
  std::optional<Message> pop();
  std::size_t size() const { return items_.size(); }
  std::uint64_t dropped() const { return dropped_; }
  std::int64_t last_seq() const { return next_seq_ - 1; }

 private:
  static bool droppable(const std::string& kind);

  std::size_t capacity_;
  std::deque<Message> items_;
  std::int64_t next_seq_{1};
  std::uint64_t dropped_{0};
};

/// Fan-out point between the simulation side and network sessions.
class StationHub {
 public:
  StationHub(std::string scenario_hash, std::size_t queue_capacity = 256);

  /// Registers a client; its first queued message is `hello`.
  int connect(std::function<void()> notify = {});
  void disconnect(int client);
  void broadcast(const std::string& kind, std::int64_t time_us, Json payload);
  void send_to(int client, const std::string& kind, std::int64_t time_us, Json payload);
  std::optional<Message> pop(int client);
  std::size_t clients() const;
  std::uint64_t dropped(int client) const;

  /// Checks and records the client's inbound sequence number.
  bool accept_inbound_seq(int client, std::int64_t seq);

 private:
  struct Client {
    ClientQueue queue;
    std::function<void()> notify;
    std::int64_t last_inbound{0};
  };
  std::string hash_;
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::map<int, Client> clients_;
  int next_id_{1};
};

/// Turns the telemetry record stream into station messages: state_update at
/// 5 Hz, track_update with it, camera_view at 2 Hz, plan_summary and events
/// as they come, metrics_snapshot every 10 s.
class RecordAggregator {
 public:
  using Emit = std::function<void(const std::string& kind, std::int64_t time_us, Json payload)>;

  explicit RecordAggregator(Emit emit) : emit_(std::move(emit)) {}

  void feed(const Json& record);
  /// Emits the pending batch (end of stream).
  void flush();

 private:
  void close_batch();

  Emit emit_;
  perception::CameraModel camera_;
  std::optional<std::int64_t> batch_time_;
  std::map<int, Json> true_state_, nav_, setpoints_, power_, track_;
  std::optional<Json> subject_;
  std::int64_t views_{0};
  std::int64_t in_view_{0};
  double centering_sum_{0.0};
  std::int64_t next_state_{0};
  std::int64_t next_view_{0};
  std::int64_t next_metrics_{10'000'000};
};

/// Steps a Simulation against the wall clock and feeds the hub. Operator
/// commands other than sim_control go through the simulation queue.
class LiveRunner {
 public:
  LiveRunner(sim::Simulation& sim, StationHub& hub, double speed = 1.0);
  ~LiveRunner();

  void start();
  void stop();
  /// Blocks until the simulation reaches its end (or stop()).
  void wait();

  void handle_command(int client, const Message& m);

  bool paused() const { return paused_.load(); }
  double speed() const { return speed_.load(); }
  /// Additional sink for the raw record stream (e.g. a log writer).
  void set_record_tap(std::function<void(const Json&)> tap) { tap_ = std::move(tap); }

 private:
  void loop();
  void ack(const Message& m, int client, bool accepted, const std::string& reason = "");

  sim::Simulation& sim_;
  StationHub& hub_;
  RecordAggregator aggregator_;
  std::function<void(const Json&)> tap_;
  std::atomic<double> speed_;
  std::atomic<bool> paused_{false};
  std::atomic<bool> stop_{false};
  std::atomic<bool> done_{false};
  std::mutex mutex_;
  std::condition_variable cv_;
  std::thread thread_;
};

/// Forwards client commands; defined by whoever owns the simulation side.
using CommandHandler = std::function<void(int client, const Message& m)>;

struct ServerConfig {
  std::string address{"127.0.0.1"};
  unsigned short port{8080};  // 0 = ephemeral
  std::string token;          // empty = no authentication
  std::string static_dir;     // served at /
};

/// HTTP + WebSocket front end on one io thread.
class StationServer {
 public:
  StationServer(StationHub& hub, ServerConfig cfg, CommandHandler handler);
  ~StationServer();
  StationServer(const StationServer&) = delete;
  StationServer& operator=(const StationServer&) = delete;

  /// Binds and starts serving; throws std::runtime_error when the port is busy.
  void start();
  void stop();
  unsigned short port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// `?token=...` value of a request target, empty when absent.
std::string query_token(const std::string& target);
std::string content_type_for(const std::string& path);

}  // namespace airship::station
