import math
import os
import pathlib

import pytest

import airship

SRC = pathlib.Path(os.environ.get("AIRSHIP_SOURCE_DIR", pathlib.Path(__file__).resolve().parents[2]))

ONE = """
name = "py"
duration = 5.0
seed = 4
[[vehicles]]
position = [0.0, 52.0, 30.0]
mode = "rate"
"""


def test_parse_and_errors():
    sc = airship.parse_scenario(ONE)
    assert sc.name == "py"
    assert sc.vehicle_count == 1
    assert len(sc.hash()) == 16
    with pytest.raises(ValueError, match="bogus"):
        airship.parse_scenario("bogus = 1\n")


def test_stepwise_simulation_and_commands():
    sim = airship.Simulation(ONE)
    sim.start()
    header = sim.drain()[0]
    assert header["kind"] == "header"
    seq = sim.command("set_mode", vehicle=3, mode="rate")
    assert sim.advance(1.0)
    assert sim.time == pytest.approx(1.0)
    recs = sim.drain()
    acks = [r for r in recs if r.get("event") == "ack"]
    assert acks and acks[0]["seq"] == seq and not acks[0]["accepted"]
    ts = [r["t"] for r in recs]
    assert ts == sorted(ts)
    assert not sim.advance(10.0)
    assert sim.finished
    assert sim.drain()[-1]["event"] == "end"


def test_run_and_metrics(tmp_path):
    sc = airship.load_scenario(str(SRC / "scenarios" / "orbit.toml"))
    r = airship.run_scenario(sc, str(tmp_path), seed=2, duration=10.0)
    assert not r["fault"]
    assert pathlib.Path(r["log_path"]).exists()
    again = airship.compute_metrics(r["log_path"])
    assert again["samples"] == r["metrics"]["samples"]
    assert again["energy_wh"] == r["metrics"]["energy_wh"]
    header, records, status = airship.read_log(r["log_path"])
    assert header["seed"] == 2
    assert status["complete"] and status["corrupt"] == 0
    assert records[-1]["event"] == "end"


def test_dynamics_helpers():
    assert 45.0 < airship.cruise_endurance_minutes(8.0) < 55.0
    assert airship.power_draw(0.0, 0.0) >= 0.0
    th = airship.trim_throttle(8.0)
    assert 0.0 < th < 1.0
    assert not math.isnan(airship.power_draw(th, 8.0))
