#pragma once

#include "airship/scenario.hpp"
#include "airship/telemetry.hpp"

#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace airship::sim {

using telemetry::Json;

inline constexpr int kPhysicsHz = 500;
inline constexpr std::int64_t kTickUs = 1'000'000 / kPhysicsHz;
inline constexpr int kPerceptionDivider = 100;  // 5 Hz
inline constexpr int kPlannerDivider = 250;     // 2 Hz
inline constexpr int kSubjectDivider = 10;      // 50 Hz

/// Operator command entering the simulation through the ordered queue.
struct Command {
  std::string kind;  // select_subject, set_mode, manual_control
  std::int64_t seq{0};
  int client{0};
  Json payload = Json::object();
};

struct Counters {
  std::int64_t physics{0};
  std::int64_t perception{0};
  std::int64_t planner{0};
  std::int64_t subject{0};
  std::int64_t telemetry{0};
  std::int64_t tracker_steps{0};
};

struct VehicleRuntime {
  int id{0};
  scenario::VehicleSpec spec;
  dynamics::VehicleTrueState truth;
  std::unique_ptr<estimation::SensorSuite> sensors;
  std::unique_ptr<estimation::NavFilter> nav;
  std::unique_ptr<control::FlightController> fc;
  control::Mode mode{control::Mode::rate};
  control::Setpoints rate_setpoints;
  control::Setpoints manual_setpoints;
  control::Setpoints planner_setpoints;
  bool has_plan{false};
  control::Setpoints applied;  // after mode logic and the guard
  control::GuardState guard{control::GuardState::pass};
  dynamics::ActuatorCommand actuators;
  dynamics::PowerState power;
  double power_w{0.0};
  perception::CooperativeTracker tracker;
  std::uint64_t detection_seq{0};
  formation::WindEstimate wind_estimate;
  Vec3 wind_truth{Vec3::Zero()};
  Vec3 hold_point{Vec3::Zero()};
  std::size_t waypoint_index{0};
  Rng sensor_rng;
  Rng detection_rng;
};

class Simulation {
 public:
  using Sink = std::function<void(const Json&)>;

  explicit Simulation(scenario::Scenario sc, std::optional<std::uint64_t> seed_override = {});
  ~Simulation();
  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  void set_sink(Sink sink) { sink_ = std::move(sink); }
  /// Emits the header and the t = 0 telemetry.
  void start();
  /// Advances one physics tick. Returns false once the run has ended.
  bool step();
  /// Runs to the scenario duration.
  void run_to_end();
  void finish(const std::string& reason = "end");

  /// Thread-safe; applied at the next step boundary.
  void enqueue(Command c);

  bool finished() const { return finished_; }
  bool faulted() const { return faulted_; }
  std::int64_t tick() const { return tick_; }
  std::int64_t time_us() const { return tick_ * kTickUs; }
  double time() const { return static_cast<double>(time_us()) * 1e-6; }
  std::int64_t end_tick() const { return end_tick_; }
  std::uint64_t seed() const { return seed_; }

  const scenario::Scenario& scenario() const { return sc_; }
  const dynamics::AirshipModel& model() const { return *model_; }
  const std::vector<VehicleRuntime>& vehicles() const { return vehicles_; }
  const subject::SubjectState& subject_state() const { return subject_; }
  const environment::WindField& wind_field() const { return *wind_; }
  const perception::Network& network() const { return *network_; }
  const std::optional<formation::FormationPlan>& last_plan() const { return plan_; }
  const Counters& counters() const { return counters_; }
  Json header() const;

 private:
  void emit(Json rec);
  void event(const std::string& name, Json fields = Json::object());
  void drain_commands();
  void apply_command(const Command& c);
  void deliver_messages();
  void run_perception();
  void run_planner();
  control::Setpoints mode_setpoints(VehicleRuntime& v);
  void emit_telemetry();

  scenario::Scenario sc_;
  std::uint64_t seed_;
  std::unique_ptr<dynamics::AirshipModel> model_;
  std::unique_ptr<environment::WindField> wind_;
  std::unique_ptr<perception::Network> network_;
  std::vector<VehicleRuntime> vehicles_;
  subject::SubjectState subject_;
  Rng subject_rng_;
  std::optional<formation::FormationPlan> plan_;
  Counters counters_;
  Sink sink_;
  std::int64_t tick_{0};
  std::int64_t end_tick_{0};
  bool started_{false};
  bool finished_{false};
  bool faulted_{false};

  std::mutex queue_mutex_;
  std::deque<Command> queue_;
};

struct RunOptions {
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  bool realtime{false};
};

struct RunResult {
  telemetry::RunMetrics metrics;
  std::string log_path;
  std::string metrics_path;
  bool fault{false};
};

/// Runs headless, writes `<out_dir>/<name>_<seed>.jsonl` and a metrics CSV,
/// and computes the metrics from the written log.
RunResult run_scenario(scenario::Scenario sc, const std::string& out_dir, const RunOptions& opts = {});

}  // namespace airship::sim
