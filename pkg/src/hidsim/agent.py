"""Intrusion detection agent pipeline.

Each monitoring tier runs the same four stages: the preprocessor folds a
closed window of observations into a ``StimulusVector``, the signature
processor matches it against the Signature Record, the anomaly processor
compares it with learned baselines, and the post processor packs the
findings into a ``Report`` for the tier above.

Findings name a ``subject`` (the claimed source) and, where the link layer
identifies someone else as responsible, a ``culprit``. Response decisions
are always taken against ``Finding.accused``.
"""

from __future__ import annotations

import enum
import math
import operator
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from .simcore import Packet


class Severity(str, enum.Enum):
    INFO = "Info"
    MISBEHAVIOR = "Misbehavior"
    DANGER = "Danger"


@dataclass(frozen=True)
class Finding:
    at: int
    subject: int
    detector: str
    severity: Severity
    label: str
    feature: str = ""
    observed: object = None
    expected: object = None
    culprit: Optional[int] = None
    agent: Optional[int] = None

    @property
    def accused(self) -> int:
        return self.subject if self.culprit is None else self.culprit

    @property
    def actionable(self) -> bool:
        return self.severity is not Severity.INFO


# -- stimulus vector ---------------------------------------------------------

# Numeric features profiled by the anomaly processor.
FEATURES: Tuple[str, ...] = (
    "pkt_count",
    "hello_count",
    "advert_count",
    "mean_rssi",
    "pdr",
    "carrier_busy_frac",
    "slot_violations",
    "sleep_violations",
    "route_deviations",
    "forward_ratio",
    "distinct_cells_seen",
    "replays",
)

# Counters already keyed by the accountable node rather than the claimed id.
_SELF_ATTRIBUTED = frozenset({"slot_violations", "sleep_violations", "route_deviations", "replays"})


@dataclass(frozen=True)
class SourceStats:
    pkt_count: int = 0
    hello_count: int = 0
    advert_count: int = 0
    mean_rssi: Optional[float] = None
    pdr: float = 1.0
    carrier_busy_frac: float = 0.0
    slot_violations: int = 0
    sleep_violations: int = 0
    route_deviations: int = 0
    forward_ratio: float = 1.0
    distinct_cells_seen: int = 0
    replays: int = 0
    transmitters: FrozenSet[int] = frozenset()

    def value(self, feature: str) -> Optional[float]:
        return getattr(self, feature)


@dataclass(frozen=True)
class StimulusVector:
    window: Tuple[int, int]
    entries: Mapping[int, SourceStats] = field(default_factory=dict)
    jammers: Tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.window[1] <= self.window[0]:
            raise ValueError("stimulus window must have end > start")

    def attribute(self, subject: int, feature: str) -> int:
        """Node held accountable for ``feature`` of ``subject``'s entry."""
        if feature in _SELF_ATTRIBUTED:
            return subject
        if self.jammers and subject not in self.jammers:
            # a busy channel distorts every traffic feature of its neighbours
            return self.jammers[0]
        if feature == "forward_ratio":
            return subject
        entry = self.entries.get(subject)
        others = sorted(t for t in (entry.transmitters if entry else ()) if t != subject)
        return others[0] if others else subject


@dataclass(frozen=True)
class Observation:
    """One transmission overheard by a monitoring cluster node."""

    at: int  # transmission time
    packet: Packet
    transmitter: int
    rssi: float
    corrupted: bool
    cell: Tuple[int, int]
    duplicate: bool = False

    @property
    def first_hop(self) -> bool:
        return len(self.packet.hop_trace) == 1


@dataclass
class WindowInput:
    start: int
    end: int
    observations: List[Observation] = field(default_factory=list)
    busy_ms: Dict[int, float] = field(default_factory=dict)  # emitter -> busy channel time
    expected_tx: Dict[int, int] = field(default_factory=dict)  # source -> slot transmissions due
    forwarding: Dict[int, Tuple[int, int]] = field(default_factory=dict)  # relay -> (handed, forwarded)
    layer_findings: List[Finding] = field(default_factory=list)


AIRTIME_MS = 1.0


def preprocess(w: WindowInput, busy_ceiling: float = 0.7) -> StimulusVector:
    """Aggregate one closed window into per-source features."""
    span = float(w.end - w.start)
    acc: Dict[int, Dict[str, object]] = {}

    def slot(nid: int) -> Dict[str, object]:
        if nid not in acc:
            acc[nid] = {"pkt": 0, "hello": 0, "advert": 0, "rssi": [], "ok": 0, "busy": 0.0,
                        "slot": 0, "sleep": 0, "route": 0, "cells": set(), "replays": 0, "tx": set()}
        return acc[nid]

    for ob in w.observations:
        pkt = ob.packet
        if not ob.first_hop:
            # relaying load follows other nodes' routes, so it is not the relay's own profile
            continue
        slot(ob.transmitter)["busy"] += AIRTIME_MS
        if ob.corrupted:
            continue
        e = slot(pkt.claimed_src)
        e["tx"].add(ob.transmitter)
        e["cells"].add(ob.cell)
        kind = pkt.kind.value
        if kind == "Hello":
            e["hello"] += 1
        elif kind == "RouteAdvert":
            e["advert"] += 1
        else:
            e["pkt"] += 1
        e["rssi"].append(ob.rssi)
        if ob.transmitter == pkt.claimed_src:
            e["ok"] += 1
        if ob.duplicate:
            slot(ob.transmitter)["replays"] += 1

    for emitter, ms in w.busy_ms.items():
        slot(emitter)["busy"] += ms
    for src, due in w.expected_tx.items():
        if due > 0:
            slot(src)
    for relay in w.forwarding:
        slot(relay)
    for f in w.layer_findings:
        e = slot(f.accused)
        if f.detector == "TDMA":
            e["slot"] += 1
        elif f.detector == "SMAC":
            e["sleep"] += 1
        elif f.detector == "Route" and f.actionable:
            e["route"] += 1

    entries: Dict[int, SourceStats] = {}
    for nid in sorted(acc):
        e = acc[nid]
        due = w.expected_tx.get(nid, 0)
        handed, forwarded = w.forwarding.get(nid, (0, 0))
        rssi: List[float] = e["rssi"]  # type: ignore[assignment]
        entries[nid] = SourceStats(
            pkt_count=e["pkt"],
            hello_count=e["hello"],
            advert_count=e["advert"],
            mean_rssi=math.fsum(rssi) / len(rssi) if rssi else None,
            pdr=min(1.0, e["ok"] / due) if due > 0 else 1.0,
            carrier_busy_frac=min(1.0, e["busy"] / span),
            slot_violations=e["slot"],
            sleep_violations=e["sleep"],
            route_deviations=e["route"],
            forward_ratio=min(1.0, forwarded / handed) if handed > 0 else 1.0,
            distinct_cells_seen=len(e["cells"]),
            replays=e["replays"],
            transmitters=frozenset(e["tx"]),
        )
    jammers = tuple(n for n, s in entries.items() if s.carrier_busy_frac > busy_ceiling)
    return StimulusVector((w.start, w.end), entries, jammers)


# -- signature processor -----------------------------------------------------

_OPS: Dict[str, Callable[[float, float], bool]] = {
    "<": operator.lt,
    "<=": operator.le,
    "=": operator.eq,
    ">=": operator.ge,
    ">": operator.gt,
}


class RuleError(ValueError):
    """Malformed signature rule; rejected before dissemination."""


@dataclass(frozen=True)
class Condition:
    feature: str  # a FEATURES name, or "rate:<feature>" for a per-second rate
    op: str
    threshold: float

    def validate(self) -> None:
        base = self.feature[5:] if self.feature.startswith("rate:") else self.feature
        if base not in FEATURES:
            raise RuleError(f"unknown feature {self.feature!r}")
        if self.op not in _OPS:
            raise RuleError(f"unknown operator {self.op!r}")
        if not isinstance(self.threshold, (int, float)) or not math.isfinite(self.threshold):
            raise RuleError(f"threshold for {self.feature} must be finite")

    def holds(self, stats: SourceStats, window_ms: int) -> bool:
        if self.feature.startswith("rate:"):
            raw = stats.value(self.feature[5:])
            value = None if raw is None else raw * 1000.0 / window_ms
        else:
            value = stats.value(self.feature)
        return value is not None and _OPS[self.op](value, self.threshold)


@dataclass(frozen=True)
class SignatureRule:
    rule_id: str
    label: str
    conditions: Tuple[Condition, ...]

    def validate(self) -> None:
        if not self.rule_id:
            raise RuleError("rule_id must be non-empty")
        if not self.conditions:
            raise RuleError(f"rule {self.rule_id}: predicate must be non-empty")
        for c in self.conditions:
            c.validate()


@dataclass(frozen=True)
class SignatureRecord:
    rules: Tuple[SignatureRule, ...] = ()
    blacklist: FrozenSet[int] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "rules", tuple(sorted(self.rules, key=lambda r: r.rule_id)))

    def validate(self) -> None:
        seen = set()
        for r in self.rules:
            r.validate()
            if r.rule_id in seen:
                raise RuleError(f"duplicate rule_id {r.rule_id!r}")
            seen.add(r.rule_id)

    def rule(self, rule_id: str) -> SignatureRule:
        for r in self.rules:
            if r.rule_id == rule_id:
                return r
        raise KeyError(rule_id)

    def with_blacklisted(self, node: int) -> "SignatureRecord":
        return replace(self, blacklist=self.blacklist | {node})


def match_signatures(
    record: SignatureRecord,
    v: StimulusVector,
    pkts: Iterable[Packet] = (),
    agent: Optional[int] = None,
) -> List[Finding]:
    """Blacklist hits first (Danger), then rules in rule_id order, subjects ascending."""
    at = v.window[1]
    window_ms = v.window[1] - v.window[0]
    out: List[Finding] = []
    hits = {s for s in v.entries if s in record.blacklist and v.entries[s].transmitters}
    for p in pkts:
        if p.claimed_src in record.blacklist:
            hits.add(p.claimed_src)
        if p.hop_trace and p.hop_trace[0] in record.blacklist:
            hits.add(p.hop_trace[0])
    for s in sorted(hits):
        out.append(Finding(at, s, "Signature", Severity.DANGER, "Blacklisted", culprit=s, agent=agent))
    for rule in record.rules:
        for s in sorted(v.entries):
            stats = v.entries[s]
            if all(c.holds(stats, window_ms) for c in rule.conditions):
                first = rule.conditions[0]
                out.append(Finding(
                    at, s, "Signature", Severity.MISBEHAVIOR, rule.label,
                    feature=first.feature, observed=stats.value(first.feature.replace("rate:", "")),
                    expected=f"{first.op}{first.threshold}",
                    culprit=v.attribute(s, first.feature.replace("rate:", "")), agent=agent,
                ))
    return out


# -- anomaly processor -------------------------------------------------------

ZERO_VARIANCE_TOL = 1e-9


@dataclass(frozen=True)
class FeatureBaseline:
    mean: float
    std: float

    def __post_init__(self) -> None:
        if self.std < 0:
            raise ValueError("baseline std must be >= 0")


@dataclass(frozen=True)
class AnomalyProfile:
    k: float = 3.0
    warmup_windows: int = 10
    thresholds: Tuple[Condition, ...] = ()
    baselines: Mapping[Tuple[int, str], FeatureBaseline] = field(default_factory=dict)

    def validate(self) -> None:
        if not self.k > 0:
            raise ValueError("sensitivity k must be > 0")
        if self.warmup_windows < 1:
            raise ValueError("warmup_windows must be >= 1")
        for c in self.thresholds:
            c.validate()


def detect_anomaly(profile: AnomalyProfile, v: StimulusVector, agent: Optional[int] = None) -> List[Finding]:
    """Flag per-source features that sit more than k standard deviations from baseline.

    Sources without a learned baseline are only checked against the
    absolute thresholds. A zero-variance baseline flags any deviation.
    """
    at = v.window[1]
    window_ms = v.window[1] - v.window[0]
    out: List[Finding] = []
    for s in sorted(v.entries):
        stats = v.entries[s]
        for feature in FEATURES:
            base = profile.baselines.get((s, feature))
            x = stats.value(feature)
            if base is None or x is None:
                continue
            if abs(x - base.mean) > profile.k * base.std + ZERO_VARIANCE_TOL:
                out.append(Finding(
                    at, s, "Anomaly", Severity.MISBEHAVIOR, "Deviation", feature=feature,
                    observed=x, expected=base.mean, culprit=v.attribute(s, feature), agent=agent,
                ))
        for c in profile.thresholds:
            if c.holds(stats, window_ms):
                feature = c.feature.replace("rate:", "")
                out.append(Finding(
                    at, s, "Anomaly", Severity.MISBEHAVIOR, "Threshold", feature=c.feature,
                    observed=stats.value(feature), expected=f"{c.op}{c.threshold}",
                    culprit=v.attribute(s, feature), agent=agent,
                ))
    return out


class BaselineLearner:
    """Per-source warm-up: a source's baseline freezes after ``warmup_windows`` samples."""

    def __init__(self, warmup_windows: int) -> None:
        self.warmup_windows = warmup_windows
        self._samples: Dict[int, Dict[str, List[float]]] = {}
        self._counts: Dict[int, int] = {}
        self.frozen: Dict[Tuple[int, str], FeatureBaseline] = {}
        self._frozen_sources: set = set()

    def is_frozen(self, source: int) -> bool:
        return source in self._frozen_sources

    def observe(self, v: StimulusVector, sources: Optional[Iterable[int]] = None) -> None:
        wanted = v.entries.keys() if sources is None else [s for s in sources if s in v.entries]
        for s in sorted(wanted):
            if s in self._frozen_sources:
                continue
            stats = v.entries[s]
            per = self._samples.setdefault(s, {})
            for feature in FEATURES:
                x = stats.value(feature)
                if x is not None:
                    per.setdefault(feature, []).append(float(x))
            self._counts[s] = self._counts.get(s, 0) + 1
            if self._counts[s] >= self.warmup_windows:
                for feature, xs in per.items():
                    mean = math.fsum(xs) / len(xs)
                    var = math.fsum((x - mean) ** 2 for x in xs) / len(xs)
                    self.frozen[(s, feature)] = FeatureBaseline(mean, math.sqrt(var))
                self._frozen_sources.add(s)
                del self._samples[s]

    def forget(self, sources: Iterable[int]) -> None:
        for s in sources:
            self._samples.pop(s, None)
            self._counts.pop(s, None)
            self._frozen_sources.discard(s)
            for key in [k for k in self.frozen if k[0] == s]:
                del self.frozen[key]


# -- post processor ----------------------------------------------------------


@dataclass(frozen=True)
class Report:
    from_agent: int
    window: Tuple[int, int]
    findings: Tuple[Finding, ...] = ()
    packets_seen: int = 0
    forwarded: int = 0
    sightings: Tuple[Tuple[int, Tuple[int, int], int], ...] = ()  # (claimed, cell, transmitter)
    policy_versions: Tuple[Tuple[str, int], ...] = ()
    records: Tuple[object, ...] = ()  # NodeClassRecord snapshots, kept upstream as backup
    watched: Tuple[Tuple[int, SourceStats], ...] = ()  # nodes on Suspect probation
    covers: Tuple[int, ...] = ()  # sensors (LPA) or clusters (RPA) this report speaks for
    children: Tuple["Report", ...] = ()

    @property
    def empty(self) -> bool:
        return not self.findings


@dataclass(frozen=True)
class Summary:
    packets_seen: int = 0
    forwarded: int = 0


def postprocess(
    agent_id: int,
    window: Tuple[int, int],
    findings: Sequence[Finding],
    summary: Summary,
    **extra,
) -> Tuple[Report, List[Finding]]:
    """Build the upward report; Danger findings are returned separately for immediate alerting."""
    report = Report(
        from_agent=agent_id,
        window=window,
        findings=tuple(findings),
        packets_seen=summary.packets_seen,
        forwarded=summary.forwarded,
        **extra,
    )
    urgent = [f for f in findings if f.severity is Severity.DANGER]
    return report, urgent
