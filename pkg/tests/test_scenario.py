import glob
import os

import pytest

from hidsim.scenario import ConfigError, load_scenario, scenario_from_dict
from hidsim.simulation import Simulation

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENARIOS = sorted(glob.glob(os.path.join(ROOT, "scenarios", "*.yaml")))


def base(**extra):
    d = {"seed": 0, "duration_ms": 30_000, "topology": {"rng_seed": 0}}
    d.update(extra)
    return d


def test_defaults():
    sc = scenario_from_dict({})
    assert sc.duration == 60_000 and sc.mode == "hierarchical" and sc.attacks == ()


@pytest.mark.parametrize("data, where", [
    ({"sede": 1}, "sede"),
    ({"topology": {"regoins": 2}}, "topology.regoins"),
    ({"attacks": [{"kind": "BlackHole", "attacker": 20, "ratee": 2}]}, r"attacks\[0\].ratee"),
    ({"failures": [{"node": 3, "at": 100, "why": "x"}]}, r"failures\[0\].why"),
    ({"policy_changes": [{"at": 1, "op": "Modify", "entity": "anomaly", "payload": {}, "x": 1}]},
     r"policy_changes\[0\].x"),
    ({"policy": {"anomaly": {"kk": 2}}}, "policy.anomaly"),
])
def test_unknown_keys_named(data, where):
    with pytest.raises(ConfigError, match=where):
        scenario_from_dict(base(**data))


@pytest.mark.parametrize("data, where", [
    ({"attacks": [{"kind": "Blackhole", "attacker": 20}]}, r"attacks\[0\]"),
    ({"attacks": [{"kind": "HelloFlood", "attacker": 20, "rate": 0}]}, r"attacks\[0\]"),
    ({"attacks": "oops"}, "attacks"),
    ({"mode": "everywhere"}, "mode"),
    ({"duration_ms": 5_000}, "duration"),
    ({"failures": [{"node": 3, "at": 99_000}]}, r"failures\[0\].at"),
    ({"schedules": {"slot_len": 0}}, "schedules.slot_len"),
])
def test_bad_values_named(data, where):
    with pytest.raises(ConfigError, match=where):
        scenario_from_dict(base(**data))


@pytest.mark.parametrize("data, where", [
    ({"attacks": [{"kind": "BlackHole", "attacker": 999, "start": 20_000, "stop": 25_000}]}, r"attacks\[0\].attacker: node 999 does not exist"),
    ({"attacks": [{"kind": "BlackHole", "attacker": 0, "start": 20_000, "stop": 25_000}]}, r"attacks\[0\].attacker: node 0 is a"),
    ({"attacks": [{"kind": "Wormhole", "attacker": 20, "peer": 3, "start": 20_000, "stop": 25_000}]}, r"attacks\[0\].peer"),
    ({"failures": [{"node": 20, "at": 100}]}, r"failures\[0\].node"),
    ({"relocations": [{"node": 500, "at": 100, "x": 0.0, "y": 0.0}]}, r"relocations\[0\].node"),
])
def test_dangling_ids_rejected_before_running(data, where):
    sc = scenario_from_dict(base(**data))
    with pytest.raises(ConfigError, match=where):
        Simulation(sc)


def test_yaml_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [1,\n")
    with pytest.raises(ConfigError, match="not valid YAML"):
        load_scenario(str(bad))
    with pytest.raises(ConfigError):
        load_scenario(str(tmp_path / "missing.yaml"))
    top = tmp_path / "list.yaml"
    top.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="expected a mapping"):
        load_scenario(str(top))


@pytest.mark.parametrize("path", SCENARIOS, ids=[os.path.basename(p) for p in SCENARIOS])
def test_shipped_scenarios_load(path):
    sc = load_scenario(path)
    Simulation(sc)  # ids resolve against the built topology


def test_shipped_scenarios_present():
    names = {os.path.basename(p) for p in SCENARIOS}
    assert {"attack_free.yaml", "blackhole.yaml", "hello_flood.yaml", "hello_flood_every_sensor.yaml"} <= names
