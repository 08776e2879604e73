"""Python bindings for the airship simulator."""

import json

from ._airship import (
    ConfigError,
    Scenario,
    compute_metrics,
    cruise_endurance_minutes,
    load_scenario,
    parse_scenario,
    power_draw,
    run_scenario,
    trim_throttle,
)
from . import _airship

__all__ = [
    "ConfigError",
    "Scenario",
    "Simulation",
    "compute_metrics",
    "cruise_endurance_minutes",
    "load_scenario",
    "parse_scenario",
    "power_draw",
    "read_log",
    "run_scenario",
    "trim_throttle",
]


def read_log(path):
    """Returns (header, records, status) where status has complete/truncated/corrupt."""
    lines, complete, truncated, corrupt = _airship.read_log_text(str(path))
    header = json.loads(lines[0])
    records = [json.loads(s) for s in lines[1:]]
    return header, records, {"complete": complete, "truncated": truncated, "corrupt": corrupt}


class Simulation:
    """Stepwise simulation. Records accumulate until `drain()`."""

    def __init__(self, scenario, seed=None):
        if isinstance(scenario, str):
            scenario = parse_scenario(scenario)
        self._sim = _airship.Simulation(scenario, seed)
        self._seq = 0

    def start(self):
        self._sim.start()

    def step(self):
        return self._sim.step()

    def advance(self, seconds):
        """Runs `seconds` of sim time. False once the run has ended."""
        return self._sim.advance(seconds)

    def command(self, kind, client=0, **payload):
        self._seq += 1
        self._sim.enqueue(kind, self._seq, client, json.dumps(payload))
        return self._seq

    def drain(self):
        return [json.loads(s) for s in self._sim.drain_text()]

    @property
    def time(self):
        return self._sim.time

    @property
    def finished(self):
        return self._sim.finished

    @property
    def seed(self):
        return self._sim.seed
