#include "airship/simulation.hpp"

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

namespace py = pybind11;
using namespace airship;
using telemetry::Json;

namespace {

// Records cross the boundary as JSON text; the package decodes them.
struct PySimulation {
  explicit PySimulation(const scenario::Scenario& sc, std::optional<std::uint64_t> seed) : sim(sc, seed) {
    sim.set_sink([this](const Json& r) { pending.push_back(r.dump()); });
  }
  std::vector<std::string> drain() {
    std::vector<std::string> out;
    out.swap(pending);
    return out;
  }
  sim::Simulation sim;
  std::vector<std::string> pending;
};

py::dict metrics_dict(const telemetry::RunMetrics& m) {
  py::dict d;
  d["in_fov_fraction"] = m.in_fov_fraction;
  d["centering_mean_deg"] = m.centering_mean_deg;
  d["centering_p95_deg"] = m.centering_p95_deg;
  d["separation_rmse_deg"] = m.separation_rmse_deg;
  d["min_vehicle_distance"] = m.min_vehicle_distance;
  d["min_subject_distance"] = m.min_subject_distance;
  d["max_geofence_excursion"] = m.max_geofence_excursion;
  d["energy_wh"] = m.energy_wh;
  d["endurance_min"] = m.endurance_min;
  d["samples"] = m.samples;
  d["partial"] = m.partial;
  return d;
}

}  // namespace

PYBIND11_MODULE(_airship, m) {
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  py::class_<scenario::Scenario>(m, "Scenario")
      .def_readonly("name", &scenario::Scenario::name)
      .def_readonly("duration", &scenario::Scenario::duration)
      .def_readonly("seed", &scenario::Scenario::seed)
      .def_property_readonly("vehicle_count", [](const scenario::Scenario& s) { return s.vehicles.size(); })
      .def("hash", &scenario::Scenario::hash);

  m.def("parse_scenario", &scenario::parse_scenario, py::arg("text"), py::arg("base_dir") = ".");
  m.def("load_scenario", &scenario::load_scenario, py::arg("path"));

  m.def(
      "run_scenario",
      [](const scenario::Scenario& sc, const std::string& out_dir, std::optional<std::uint64_t> seed,
         std::optional<double> duration) {
        sim::RunOptions opts;
        opts.seed = seed;
        opts.duration = duration;
        sim::RunResult r;
        {
          py::gil_scoped_release release;
          r = sim::run_scenario(sc, out_dir, opts);
        }
        py::dict d;
        d["log_path"] = r.log_path;
        d["metrics_path"] = r.metrics_path;
        d["fault"] = r.fault;
        d["metrics"] = metrics_dict(r.metrics);
        return d;
      },
      py::arg("scenario"), py::arg("out_dir"), py::arg("seed") = py::none(), py::arg("duration") = py::none());

  m.def(
      "compute_metrics",
      [](const std::string& path, double t_begin, double t_end) {
        return metrics_dict(telemetry::compute_metrics(telemetry::read_log(path), t_begin, t_end));
      },
      py::arg("log_path"), py::arg("t_begin") = -std::numeric_limits<double>::infinity(),
      py::arg("t_end") = std::numeric_limits<double>::infinity());

  m.def("read_log_text", [](const std::string& path) {
    const auto log = telemetry::read_log(path);
    std::vector<std::string> out{log.header.dump()};
    for (const auto& r : log.records) out.push_back(r.dump());
    return py::make_tuple(out, log.complete, log.truncated, log.corrupt);
  });

  m.def("encode_record", [](const std::string& json_text) { return telemetry::encode_record(Json::parse(json_text)); });

  py::class_<PySimulation>(m, "Simulation")
      .def(py::init<const scenario::Scenario&, std::optional<std::uint64_t>>(), py::arg("scenario"),
           py::arg("seed") = py::none())
      .def("start", [](PySimulation& s) { s.sim.start(); })
      .def("step", [](PySimulation& s) { return s.sim.step(); })
      .def(
          "advance",
          [](PySimulation& s, double seconds) {
            const auto end = s.sim.tick() + static_cast<std::int64_t>(std::llround(seconds * sim::kPhysicsHz));
            py::gil_scoped_release release;
            while (s.sim.tick() < end && s.sim.step()) {
            }
            return !s.sim.finished();
          },
          py::arg("seconds"))
      .def("enqueue",
           [](PySimulation& s, const std::string& kind, std::int64_t seq, int client, const std::string& payload) {
             s.sim.enqueue({kind, seq, client, Json::parse(payload)});
           })
      .def("drain_text", &PySimulation::drain)
      .def_property_readonly("time", [](const PySimulation& s) { return s.sim.time(); })
      .def_property_readonly("finished", [](const PySimulation& s) { return s.sim.finished(); })
      .def_property_readonly("seed", [](const PySimulation& s) { return s.sim.seed(); });

  m.def("cruise_endurance_minutes", [](double airspeed) {
    return dynamics::cruise_endurance_minutes(dynamics::AirshipModel{}, airspeed);
  });
  m.def("power_draw", [](double throttle, double airspeed) {
    return dynamics::power_draw(dynamics::AirshipModel{}.propulsion, throttle, airspeed);
  });
  m.def("trim_throttle", [](double airspeed) { return dynamics::AirshipModel{}.trim_throttle(airspeed); });
}
