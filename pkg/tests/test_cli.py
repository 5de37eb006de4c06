import json
import os
import subprocess
import sys

import pytest

from hidsim import cli
from hidsim.metrics import MetricsReport
from hidsim.simulation import InvariantViolation, Simulation

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def scen(name):
    return os.path.join(ROOT, "scenarios", name)


def run_to(tmp_path, name, tag, *extra):
    trace, metrics = tmp_path / f"{tag}.trace", tmp_path / f"{tag}.json"
    rc = cli.main(["run", scen(name), "--trace", str(trace), "--metrics", str(metrics), *extra])
    return rc, trace, metrics


def test_attack_free_run(tmp_path, capsys):
    rc, trace, metrics = run_to(tmp_path, "attack_free.yaml", "a")
    assert rc == cli.EXIT_OK
    r = MetricsReport.from_json(metrics.read_text())
    assert r.false_positive_count == 0
    assert {tl.rsplit(",", 1)[-1].split("@")[0] for tl in r.timeline.values()} == {"Member"}
    assert "false positives 0" in capsys.readouterr().out
    assert trace.read_text()


def test_blackhole_run(tmp_path):
    rc, _, metrics = run_to(tmp_path, "blackhole.yaml", "b")
    (a,) = MetricsReport.from_json(metrics.read_text()).attacks
    assert rc == 0 and a.detected and a.final_class == "Malicious"


def test_byte_identical_reruns(tmp_path):
    _, t1, m1 = run_to(tmp_path, "blackhole.yaml", "one")
    _, t2, m2 = run_to(tmp_path, "blackhole.yaml", "two")
    assert t1.read_bytes() == t2.read_bytes()
    assert m1.read_bytes() == m2.read_bytes()


def test_seed_override_changes_run(tmp_path):
    _, t1, _ = run_to(tmp_path, "attack_free.yaml", "s0")
    _, t2, _ = run_to(tmp_path, "attack_free.yaml", "s3", "--seed", "3")
    assert t1.read_bytes() != t2.read_bytes()


def test_metrics_to_stdout(capsys):
    assert cli.main(["run", scen("attack_free.yaml"), "--metrics", "-"]) == 0
    out = capsys.readouterr().out
    assert json.loads(out)["false_positive_count"] == 0  # summary suppressed


def test_compare(tmp_path, capsys):
    _, _, hier = run_to(tmp_path, "hello_flood.yaml", "h")
    _, _, every = run_to(tmp_path, "hello_flood_every_sensor.yaml", "e")
    _, _, quiet = run_to(tmp_path, "attack_free.yaml", "q")
    capsys.readouterr()

    assert cli.main(["compare", str(hier), str(hier)]) == 0
    assert set(json.loads(capsys.readouterr().out).values()) == {1.0}

    assert cli.main(["compare", str(every), str(hier)]) == 0
    assert json.loads(capsys.readouterr().out)["ids_energy"] < 1.0

    assert cli.main(["compare", str(quiet), str(hier)]) == 0
    assert json.loads(capsys.readouterr().out)["alert_count"] > 1


def test_compare_scale_mismatch_exits_2(tmp_path, capsys):
    _, _, m = run_to(tmp_path, "attack_free.yaml", "q")
    d = json.loads(m.read_text())
    d["scale.regions"] = 5
    other = tmp_path / "other.json"
    other.write_text(json.dumps(d))
    assert cli.main(["compare", str(m), str(other)]) == cli.EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_compare_garbage_exits_2(tmp_path):
    junk = tmp_path / "junk.json"
    junk.write_text("{}")
    assert cli.main(["compare", str(junk), str(junk)]) == cli.EXIT_CONFIG
    assert cli.main(["compare", str(tmp_path / "nope.json"), str(junk)]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("body", [
    "seed: 0\nbogus: 1\n",
    "attacks:\n  - {kind: BlackHole, attacker: 999, start: 20000, stop: 30000}\n",
    "seed: [\n",
])
def test_config_errors_exit_2(tmp_path, capsys, body):
    p = tmp_path / "bad.yaml"
    p.write_text(body)
    assert cli.main(["run", str(p)]) == cli.EXIT_CONFIG
    assert capsys.readouterr().err.startswith("config error")


@pytest.mark.parametrize("argv", [[], ["frobnicate"], ["run"], ["run", "x.yaml", "--mode", "nope"]])
def test_usage_errors_exit_1(argv, capsys):
    assert cli.main(argv) == cli.EXIT_USAGE


def test_help_exits_0(capsys):
    assert cli.main(["--help"]) == cli.EXIT_OK


def test_invariant_violation_exits_3(monkeypatch, capsys):
    def broken(self):
        raise InvariantViolation("two monitors for sensor 9")

    monkeypatch.setattr(Simulation, "check_invariants", broken)
    assert cli.main(["run", scen("attack_free.yaml")]) == cli.EXIT_INVARIANT
    assert "invariant violated" in capsys.readouterr().err


def test_console_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "hidsim", "run", scen("attack_free.yaml"), "--metrics", "-"],
                         capture_output=True, text=True, check=False)
    assert out.returncode == 0 and json.loads(out.stdout)["mode"] == "hierarchical"
