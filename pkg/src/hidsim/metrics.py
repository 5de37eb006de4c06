"""Run metrics: what was detected, when, at what cost.

The report is a flat key/value mapping (dotted keys, scalar values) so it
diffs cleanly and loads anywhere. ``summary()`` renders the human view.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Union

from .response import State
from .simcore import ENERGY_COMPONENTS
from .topology import Role

Scalar = Union[int, float, str, bool, None]

HONEST_STATES = (State.FRESH, State.MEMBER)
TIERS = ("sensor", "cluster", "regional", "base")
_TIER_OF_ROLE = {Role.SENSOR: "sensor", Role.CLUSTER: "cluster", Role.REGIONAL: "regional", Role.BASE: "base"}


class CompareError(ValueError):
    """Two reports that cannot be compared (different network scale)."""


@dataclass
class AttackOutcome:
    kind: str
    attacker: int
    start: int
    detected: bool
    latency_ms: Optional[int]
    final_class: str


@dataclass
class MetricsReport:
    scale: Dict[str, int]
    attacks: List[AttackOutcome] = field(default_factory=list)
    false_positive_count: int = 0
    misclassified_honest_nodes: int = 0
    alerts: Dict[str, int] = field(default_factory=dict)  # "tier.detector" -> actionable findings
    energy: Dict[str, float] = field(default_factory=dict)  # "tier.component" -> mJ
    broadcast_count: int = 0
    alert_broadcasts: int = 0
    alert_messages: int = 0
    slot_violations: int = 0
    sleep_violations: int = 0
    failover_disruption: List[Optional[int]] = field(default_factory=list)  # windows, None if never recovered
    orphaned_sensors: int = 0
    policy_hops: int = 0
    resupply_hops: int = 0
    findings_total: int = 0
    timeline: Dict[int, str] = field(default_factory=dict)  # node -> "State@ms,State@ms"
    mode: str = "hierarchical"

    @property
    def ids_energy(self) -> float:
        return math.fsum(v for k, v in self.energy.items() if k.endswith(".ids"))

    @property
    def alert_total(self) -> int:
        return sum(self.alerts.values())

    def to_dict(self) -> Dict[str, Scalar]:
        d: Dict[str, Scalar] = {"mode": self.mode}
        for k, v in self.scale.items():
            d[f"scale.{k}"] = v
        d["attacks"] = len(self.attacks)
        for i, a in enumerate(self.attacks):
            p = f"attack.{i}"
            d[f"{p}.kind"] = a.kind
            d[f"{p}.attacker"] = a.attacker
            d[f"{p}.start_ms"] = a.start
            d[f"{p}.detected"] = a.detected
            d[f"{p}.detection_latency_ms"] = a.latency_ms
            d[f"{p}.final_class"] = a.final_class
        d["false_positive_count"] = self.false_positive_count
        d["misclassified_honest_nodes"] = self.misclassified_honest_nodes
        for k, v in self.alerts.items():
            d[f"alerts.{k}"] = v
        d["alerts.total"] = self.alert_total
        for k, v in self.energy.items():
            d[f"energy.{k}"] = round(v, 9)
        d["energy.ids_total"] = round(self.ids_energy, 9)
        d["broadcast_count"] = self.broadcast_count
        d["alert_broadcasts"] = self.alert_broadcasts
        d["alert_messages"] = self.alert_messages
        d["slot_violations"] = self.slot_violations
        d["sleep_violations"] = self.sleep_violations
        d["failovers"] = len(self.failover_disruption)
        for i, w in enumerate(self.failover_disruption):
            d[f"failover.{i}.disruption_windows"] = w
        d["orphaned_sensors"] = self.orphaned_sensors
        d["policy_hops"] = self.policy_hops
        d["resupply_hops"] = self.resupply_hops
        d["findings_total"] = self.findings_total
        for node, tl in self.timeline.items():
            d[f"timeline.{node}"] = tl
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Scalar]) -> "MetricsReport":
        scale = {k[6:]: int(v) for k, v in d.items() if k.startswith("scale.")}  # type: ignore[arg-type]
        attacks = []
        for i in range(int(d.get("attacks", 0))):  # type: ignore[arg-type]
            p = f"attack.{i}"
            attacks.append(AttackOutcome(str(d[f"{p}.kind"]), int(d[f"{p}.attacker"]),  # type: ignore[arg-type]
                                         int(d[f"{p}.start_ms"]), bool(d[f"{p}.detected"]),  # type: ignore[arg-type]
                                         d[f"{p}.detection_latency_ms"],  # type: ignore[arg-type]
                                         str(d[f"{p}.final_class"])))
        alerts = {k[7:]: int(v) for k, v in d.items()  # type: ignore[arg-type]
                  if k.startswith("alerts.") and k != "alerts.total"}
        energy = {k[7:]: float(v) for k, v in d.items()  # type: ignore[arg-type]
                  if k.startswith("energy.") and k != "energy.ids_total"}
        n_fail = int(d.get("failovers", 0))  # type: ignore[arg-type]
        return cls(
            scale=scale,
            attacks=attacks,
            false_positive_count=int(d["false_positive_count"]),  # type: ignore[arg-type]
            misclassified_honest_nodes=int(d["misclassified_honest_nodes"]),  # type: ignore[arg-type]
            alerts=alerts,
            energy=energy,
            broadcast_count=int(d["broadcast_count"]),  # type: ignore[arg-type]
            alert_broadcasts=int(d["alert_broadcasts"]),  # type: ignore[arg-type]
            alert_messages=int(d["alert_messages"]),  # type: ignore[arg-type]
            slot_violations=int(d["slot_violations"]),  # type: ignore[arg-type]
            sleep_violations=int(d["sleep_violations"]),  # type: ignore[arg-type]
            failover_disruption=[d[f"failover.{i}.disruption_windows"] for i in range(n_fail)],  # type: ignore[misc]
            orphaned_sensors=int(d.get("orphaned_sensors", 0)),  # type: ignore[arg-type]
            policy_hops=int(d.get("policy_hops", 0)),  # type: ignore[arg-type]
            resupply_hops=int(d.get("resupply_hops", 0)),  # type: ignore[arg-type]
            findings_total=int(d.get("findings_total", 0)),  # type: ignore[arg-type]
            timeline={int(k[9:]): str(v) for k, v in d.items() if k.startswith("timeline.")},
            mode=str(d.get("mode", "hierarchical")),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls.from_dict(json.loads(text))

    def summary(self) -> str:
        lines = [f"mode {self.mode}, " + ", ".join(f"{k}={v}" for k, v in sorted(self.scale.items()))]
        for a in self.attacks:
            lat = "-" if a.latency_ms is None else f"{a.latency_ms} ms"
            lines.append(f"  {a.kind:<22} attacker {a.attacker:<4} detected={str(a.detected):<5} "
                         f"latency={lat:<9} final={a.final_class}")
        lines.append(f"false positives {self.false_positive_count}, "
                     f"misclassified honest nodes {self.misclassified_honest_nodes}")
        lines.append(f"actionable findings {self.alert_total}, broadcasts {self.broadcast_count} "
                     f"(alert broadcasts {self.alert_broadcasts}), alert messages {self.alert_messages}")
        lines.append(f"IDS energy {self.ids_energy:.3f} mJ; slot violations {self.slot_violations}, "
                     f"sleep violations {self.sleep_violations}")
        if self.failover_disruption:
            lines.append("failover disruption (windows): " + ", ".join(
                "never" if w is None else str(w) for w in self.failover_disruption))
        return "\n".join(lines) + "\n"


def collect(sim) -> MetricsReport:
    """Build the report for a finished ``Simulation``."""
    topo, W = sim.topo, sim.W
    attackers = sim.attackers
    excused = set(sim.killed) | {ev.failed for ev in sim.failovers}
    actionable = [(tier, f) for tier, f in sim.findings if f.actionable]

    outcomes = []
    for spec in sim.sc.attacks:
        hits = [f.at for _, f in actionable if f.accused in spec.nodes and f.at >= spec.start]
        first = min(hits) if hits else None
        states = []
        for n in spec.nodes:
            if topo.nodes[n].role is Role.SENSOR:
                states.append(sim.record(n).state.value)
        final = "/".join(states) if states else ("Failed" if spec.attacker in excused else "Running")
        outcomes.append(AttackOutcome(spec.kind.value, spec.attacker, spec.start, first is not None,
                                      None if first is None else first - spec.start, final))

    fps = sum(1 for _, f in actionable if f.accused not in attackers and f.accused not in excused)
    states = sim.final_states()
    misclassified = 0
    for s in sim.sensors:
        if s in attackers:
            continue
        if any(state not in (State.FRESH.value, State.MEMBER.value) for _, state in sim.timeline[s]) \
                or states[s] not in HONEST_STATES:
            misclassified += 1

    alerts: Counter = Counter()
    for tier, f in actionable:
        alerts[f"{tier}.{f.detector}"] += 1

    energy: Dict[str, float] = {}
    for tier in TIERS:
        nodes = [n for n in topo.nodes if _TIER_OF_ROLE[topo.nodes[n].role] == tier]
        for comp in ENERGY_COMPONENTS:
            energy[f"{tier}.{comp}"] = sim.ledger.total(comp, nodes)

    disruption: List[Optional[int]] = []
    for ev in sim.failovers:
        if ev.first_report_at is None or ev.takeover is None:
            disruption.append(None)
        else:
            lost = ev.killed_at if ev.killed_at is not None else ev.detected_at
            disruption.append(ev.first_report_at // W - lost // W)

    cfg = sim.sc.topology
    return MetricsReport(
        scale={"regions": cfg.regions, "cells_per_region": cfg.cells_per_region,
               "sensors_per_cell": cfg.sensors_per_cell, "duration_ms": sim.sc.duration},
        attacks=outcomes,
        false_positive_count=fps,
        misclassified_honest_nodes=misclassified,
        alerts=dict(sorted(alerts.items())),
        energy=energy,
        broadcast_count=sim.counts["broadcasts"],
        alert_broadcasts=sim.counts["alert_broadcasts"],
        alert_messages=sim.counts["alert_messages"],
        slot_violations=sum(1 for _, f in actionable if f.detector == "TDMA"),
        sleep_violations=sum(1 for _, f in actionable if f.detector == "SMAC"),
        failover_disruption=disruption,
        orphaned_sensors=len(sim.orphans),
        policy_hops=sim.counts["policy_hops"],
        resupply_hops=sim.counts["resupply_hops"],
        findings_total=len(sim.findings),
        timeline={s: ",".join(f"{st}@{t}" for t, st in sim.timeline[s]) for s in sim.sensors},
        mode=sim.sc.mode,
    )


def recount(trace_lines: Iterable[str]) -> Dict[str, int]:
    """Recount findings from trace lines: total, and actionable per ``tier.detector``."""
    out: Counter = Counter()
    for line in trace_lines:
        parts = line.rstrip("\n").split("\t")
        if len(parts) < 5 or parts[1] != "finding":
            continue
        kv = dict(item.split("=", 1) for item in parts[4].split(" ") if "=" in item)
        out["total"] += 1
        if kv.get("severity") != "Info":
            out[f"{kv['tier']}.{kv['detector']}"] += 1
    return dict(out)


def compare(baseline: MetricsReport, variant: MetricsReport) -> Dict[str, float]:
    """Ratios variant / baseline for energy, broadcast and alert counts."""
    if baseline.scale != variant.scale:
        raise CompareError(f"reports come from different network scales: {baseline.scale} vs {variant.scale}")

    def ratio(v: float, b: float) -> float:
        if b == 0:
            return 1.0 if v == 0 else math.inf
        return v / b

    out: Dict[str, float] = {
        "ids_energy": ratio(variant.ids_energy, baseline.ids_energy),
        "total_energy": ratio(sum(variant.energy.values()), sum(baseline.energy.values())),
        "broadcast_count": ratio(variant.broadcast_count, baseline.broadcast_count),
        "alert_broadcasts": ratio(variant.alert_broadcasts, baseline.alert_broadcasts),
        "alert_count": ratio(variant.alert_total, baseline.alert_total),
        "alert_messages": ratio(variant.alert_messages, baseline.alert_messages),
    }
    return out
