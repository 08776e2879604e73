// airship: headless runs, log replay, metrics and the live station.
#include "airship/simulation.hpp"
#include "airship/station.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>

using namespace airship;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

unsigned short env_port(unsigned short fallback) {
  if (const char* p = std::getenv("STATION_PORT")) {
    try {
      const int v = std::stoi(p);
      if (v >= 0 && v <= 65535) return static_cast<unsigned short>(v);
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("STATION_PORT is not a port number: ") + p);
  }
  return fallback;
}

std::string env_token() {
  const char* t = std::getenv("STATION_TOKEN");
  return t ? t : "";
}

std::string default_static_dir() {
#ifdef AIRSHIP_STATIC_DIR
  if (std::filesystem::is_directory(AIRSHIP_STATIC_DIR)) return AIRSHIP_STATIC_DIR;
#endif
  return "";
}

void print_server(const station::StationServer& server, const std::string& token) {
  std::cout << "station listening on http://127.0.0.1:" << server.port() << "/  (ws: /ws"
            << (token.empty() ? "" : "?token=...") << ")" << std::endl;
}

int cmd_run(const std::string& scenario_path, std::optional<std::uint64_t> seed, std::optional<double> duration,
            const std::string& out, bool realtime) {
  auto sc = scenario::load_scenario(scenario_path);
  const auto result = sim::run_scenario(std::move(sc), out, {seed, duration, realtime});
  std::cout << "log:     " << result.log_path << "\n"
            << "metrics: " << result.metrics_path << "\n"
            << telemetry::metrics_summary(result.metrics) << std::endl;
  if (result.fault) {
    std::cerr << "run ended on an integration fault" << std::endl;
    return 1;
  }
  return 0;
}

int cmd_metrics(const std::string& log_path, double from, double to) {
  if (!std::filesystem::exists(log_path)) throw ConfigError("no such log: " + log_path);
  const auto log = telemetry::read_log(log_path);
  const auto m = telemetry::compute_metrics(log, from, to);
  const std::string name = log.header.value("scenario", "");
  const std::uint64_t seed = log.header.value("seed", std::uint64_t{0});
  std::cout << telemetry::metrics_csv_header() << "\n" << telemetry::metrics_csv_row(m, name, seed) << std::endl;
  if (log.corrupt > 0) std::cerr << log.corrupt << " corrupt line(s) skipped" << std::endl;
  if (m.partial) std::cerr << "log has no end event; metrics are partial" << std::endl;
  return 0;
}

int cmd_replay(const std::string& log_path, double speed, bool serve, unsigned short port, const std::string& token,
               const std::string& static_dir) {
  if (!std::filesystem::exists(log_path)) throw ConfigError("no such log: " + log_path);
  if (!serve) {
    const auto stats = telemetry::replay(
        log_path, speed, [](const telemetry::Json& r) { std::cout << r.dump() << "\n"; }, &g_stop);
    std::cout.flush();
    std::cerr << stats.emitted << " records, " << stats.corrupt << " corrupt" << std::endl;
    return 0;
  }
  const auto log = telemetry::read_log(log_path);
  station::StationHub hub(log.header.value("scenario_hash", ""));
  station::RecordAggregator agg([&hub](const std::string& kind, std::int64_t t, telemetry::Json payload) {
    hub.broadcast(kind, t, std::move(payload));
  });
  station::StationServer server(hub, {"127.0.0.1", port, token, static_dir},
                                [&hub](int client, const station::Message& m) {
                                  hub.send_to(client, "event", m.time_us,
                                              {{"event", "ack"},
                                               {"seq", m.seq},
                                               {"client", client},
                                               {"command", m.kind},
                                               {"accepted", false},
                                               {"reason", "replay is read-only"}});
                                });
  server.start();
  print_server(server, token);
  telemetry::replay(log_path, speed, [&agg](const telemetry::Json& r) { agg.feed(r); }, &g_stop);
  agg.flush();
  return 0;
}

int cmd_serve(const std::string& scenario_path, std::optional<std::uint64_t> seed, double speed, unsigned short port,
              const std::string& token, const std::string& static_dir, const std::string& out) {
  auto sc = scenario::load_scenario(scenario_path);
  sim::Simulation simulation(std::move(sc), seed);
  station::StationHub hub(simulation.scenario().hash());
  station::LiveRunner runner(simulation, hub, speed);
  std::unique_ptr<telemetry::LogWriter> writer;
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    const auto path = std::filesystem::path(out) /
                      (simulation.scenario().name + "_" + std::to_string(simulation.seed()) + ".jsonl");
    writer = std::make_unique<telemetry::LogWriter>(path.string());
    runner.set_record_tap([&writer](const telemetry::Json& r) { writer->write(r); });
  }
  station::StationServer server(hub, {"127.0.0.1", port, token, static_dir},
                                [&runner](int client, const station::Message& m) { runner.handle_command(client, m); });
  server.start();
  print_server(server, token);
  runner.start();
  std::thread watcher([&runner] {
    while (!g_stop.load()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    runner.stop();
  });
  runner.wait();
  g_stop = true;
  watcher.join();
  runner.stop();
  // Give clients a moment to drain the final events.
  std::this_thread::sleep_for(std::chrono::milliseconds(200));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  CLI::App app{"Cooperative airship tracking simulator"};
  app.require_subcommand(1);

  std::string scenario_path, out = "out", log_path, token = env_token(), static_dir = default_static_dir();
  std::optional<std::uint64_t> seed;
  std::optional<double> duration;
  bool realtime = false, serve = false;
  double speed = 1.0, from = -std::numeric_limits<double>::infinity(), to = std::numeric_limits<double>::infinity();
  unsigned short port = 8080;

  auto* run = app.add_subcommand("run", "Run a scenario headless and write telemetry + metrics");
  run->add_option("--scenario", scenario_path, "Scenario TOML")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the scenario seed");
  run->add_option("--duration", duration, "Override the duration [s]")->check(CLI::PositiveNumber);
  run->add_option("--out", out, "Output directory");
  run->add_flag("--realtime", realtime, "Pace the run against the wall clock");

  auto* rep = app.add_subcommand("replay", "Replay a telemetry log");
  rep->add_option("--log", log_path, "Telemetry .jsonl")->required();
  rep->add_option("--speed", speed, "Playback speed, 0 = as fast as possible")->check(CLI::NonNegativeNumber);
  rep->add_flag("--serve", serve, "Stream to station clients instead of stdout");
  rep->add_option("--port", port, "Station port (default STATION_PORT or 8080)");
  rep->add_option("--token", token, "Shared token (default STATION_TOKEN)");
  rep->add_option("--static", static_dir, "Directory served at /");

  auto* met = app.add_subcommand("metrics", "Compute metrics from a telemetry log");
  met->add_option("--log", log_path, "Telemetry .jsonl")->required();
  met->add_option("--from", from, "Window start [s]");
  met->add_option("--to", to, "Window end [s]");

  auto* srv = app.add_subcommand("serve", "Run a scenario live behind the station server");
  srv->add_option("--scenario", scenario_path, "Scenario TOML")->required()->check(CLI::ExistingFile);
  srv->add_option("--seed", seed, "Override the scenario seed");
  srv->add_option("--speed", speed, "Simulation speed relative to wall clock, 0 = unpaced")
      ->check(CLI::NonNegativeNumber);
  srv->add_option("--port", port, "Station port (default STATION_PORT or 8080)");
  srv->add_option("--token", token, "Shared token (default STATION_TOKEN)");
  srv->add_option("--static", static_dir, "Directory served at /");
  srv->add_option("--out", out, "Also write the telemetry log here");

  CLI11_PARSE(app, argc, argv);

  try {
    if ((*rep || *srv) && rep->count("--port") == 0 && srv->count("--port") == 0) port = env_port(port);
    if (*run) return cmd_run(scenario_path, seed, duration, out, realtime);
    if (*met) return cmd_metrics(log_path, from, to);
    if (*rep) return cmd_replay(log_path, speed, serve, port, token, static_dir);
    if (*srv) return cmd_serve(scenario_path, seed, speed, port, token, static_dir, srv->count("--out") ? out : "");
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
