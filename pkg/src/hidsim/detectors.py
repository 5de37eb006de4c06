"""Layer-specific misuse checks feeding the agent pipeline.

Physical layer: RSSI against the values recorded at initialisation, packet
delivery ratio and channel busy time. Link layer: TDMA slot ownership and
S-MAC sleep periods. Network layer: hop trace against the expected route.
Application layer: the three watchdog levels (cluster over sensors,
regional over clusters, base over regionals).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from .agent import Finding, Report, Severity, StimulusVector
from .simcore import Packet, SmacSchedule, TdmaSchedule, is_asleep, slot_owner
from .topology import Topology, Unreachable, expected_route


@dataclass(frozen=True)
class DetectorParams:
    rssi_tolerance: float = 6.0  # dB
    pdr_floor: float = 0.6
    busy_ceiling: float = 0.7
    miss_limit: int = 3
    forward_floor: float = 0.8

    def validate(self) -> None:
        if self.rssi_tolerance <= 0:
            raise ValueError("rssi_tolerance must be > 0")
        for name in ("pdr_floor", "busy_ceiling", "forward_floor"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.miss_limit < 1:
            raise ValueError("miss_limit must be >= 1")


class RssiBaseline:
    """Expected RSSI per (source, observer) pair, written once."""

    def __init__(self) -> None:
        self._expected: Dict[Tuple[int, int], float] = {}

    def __contains__(self, pair: Tuple[int, int]) -> bool:
        return pair in self._expected

    def __len__(self) -> int:
        return len(self._expected)

    def record(self, src: int, observer: int, rssi: float) -> bool:
        if (src, observer) in self._expected:
            return False
        self._expected[(src, observer)] = rssi
        return True

    def expected(self, src: int, observer: int) -> Optional[float]:
        return self._expected.get((src, observer))

    def reinit(self, sources: Iterable[int], observer: Optional[int] = None) -> None:
        doomed = set(sources)
        for pair in [p for p in self._expected if p[0] in doomed and (observer is None or p[1] == observer)]:
            del self._expected[pair]


def check_physical(
    v: StimulusVector,
    baseline: RssiBaseline,
    observer: int,
    params: DetectorParams = DetectorParams(),
    agent: Optional[int] = None,
) -> List[Finding]:
    at = v.window[1]
    out: List[Finding] = []
    for s in sorted(v.entries):
        stats = v.entries[s]
        if stats.carrier_busy_frac > params.busy_ceiling:
            out.append(Finding(at, s, "Physical", Severity.MISBEHAVIOR, "Jamming", "carrier_busy_frac",
                               stats.carrier_busy_frac, params.busy_ceiling, culprit=s, agent=agent))
        if stats.pdr < params.pdr_floor:
            label = "Jamming" if v.jammers else "PacketLoss"
            out.append(Finding(at, s, "Physical", Severity.MISBEHAVIOR, label, "pdr",
                               stats.pdr, params.pdr_floor, culprit=v.attribute(s, "pdr"), agent=agent))
        if stats.mean_rssi is not None:
            want = baseline.expected(s, observer)
            if want is None:
                out.append(Finding(at, s, "Physical", Severity.INFO, "NewNode", "mean_rssi",
                                   stats.mean_rssi, None, culprit=v.attribute(s, "mean_rssi"), agent=agent))
            elif abs(stats.mean_rssi - want) > params.rssi_tolerance:
                out.append(Finding(at, s, "Physical", Severity.MISBEHAVIOR, "RssiAnomaly", "mean_rssi",
                                   stats.mean_rssi, want, culprit=v.attribute(s, "mean_rssi"), agent=agent))
    return out


def check_tdma(pkt: Packet, sched: TdmaSchedule, agent: Optional[int] = None) -> Optional[Finding]:
    """First-hop transmission outside the claimed source's slot."""
    owner = slot_owner(sched, pkt.sent_at)
    if owner == pkt.claimed_src:
        return None
    return Finding(pkt.sent_at, pkt.claimed_src, "TDMA", Severity.MISBEHAVIOR, "SlotViolation",
                   "slot_violations", owner, pkt.claimed_src, culprit=pkt.hop_trace[0], agent=agent)


def check_smac(pkt: Packet, sched: SmacSchedule, agent: Optional[int] = None) -> Optional[Finding]:
    """First-hop transmission while the claimed source should be asleep."""
    if pkt.claimed_src not in sched.awake:
        return None
    if not is_asleep(sched, pkt.claimed_src, pkt.sent_at):
        return None
    return Finding(pkt.sent_at, pkt.claimed_src, "SMAC", Severity.MISBEHAVIOR, "SleepViolation",
                   "sleep_violations", pkt.sent_at, sched.awake[pkt.claimed_src], culprit=pkt.hop_trace[0],
                   agent=agent)


def route_divergence(trace: Sequence[int], expected: Sequence[int]) -> Optional[int]:
    """Index of the first hop where ``trace`` leaves ``expected``, or None if equal."""
    for i, (a, b) in enumerate(zip(trace, expected)):
        if a != b:
            return i
    if len(trace) == len(expected):
        return None
    return min(len(trace), len(expected))


def check_route(
    pkt: Packet,
    topo: Topology,
    exclude: Iterable[int] = frozenset(),
    at: Optional[int] = None,
    agent: Optional[int] = None,
    want: Optional[Sequence[int]] = None,
) -> Optional[Finding]:
    """Destination-side comparison of the travelled path with the expected route.

    The travelled path is the hop trace (all transmitters) followed by the
    destination. The node after which the path first diverges is blamed.
    Callers that cache routes may pass the expected path as ``want``.
    """
    when = pkt.sent_at if at is None else at
    travelled = list(pkt.hop_trace) + [pkt.dst]
    try:
        if want is None:
            want = expected_route(topo, pkt.claimed_src, pkt.dst, exclude)
    except Unreachable:
        return Finding(when, pkt.claimed_src, "Route", Severity.INFO, "NoExpectedRoute", "route_deviations",
                       tuple(travelled), None, culprit=pkt.hop_trace[0], agent=agent)
    i = route_divergence(travelled, want)
    if i is None:
        return None
    culprit = travelled[i - 1] if i >= 1 else travelled[0]
    return Finding(when, pkt.claimed_src, "Route", Severity.MISBEHAVIOR, "RouteDeviation", "route_deviations",
                   tuple(travelled), tuple(want), culprit=culprit, agent=agent)


def sensor_watchdog(
    v: StimulusVector, params: DetectorParams = DetectorParams(), agent: Optional[int] = None
) -> List[Finding]:
    """Cluster-level watchdog: relays that swallow what they were handed."""
    at = v.window[1]
    out = []
    for s in sorted(v.entries):
        ratio = v.entries[s].forward_ratio
        if ratio < params.forward_floor:
            culprit = v.jammers[0] if v.jammers else s
            out.append(Finding(at, s, "Watchdog", Severity.MISBEHAVIOR, "ForwardingLoss", "forward_ratio",
                               ratio, params.forward_floor, culprit=culprit, agent=agent))
    return out


def watchdog_check(
    parent: int,
    child: int,
    reports: Sequence[Optional[Report]],
    params: DetectorParams = DetectorParams(),
    at: int = 0,
) -> Optional[Finding]:
    """Regional/base watchdog over one child's per-window report history.

    ``reports`` holds one entry per closed window, oldest first, with None
    where no report arrived.
    """
    misses = 0
    for r in reversed(reports):
        if r is not None:
            break
        misses += 1
    if misses >= params.miss_limit:
        return Finding(at, child, "Watchdog", Severity.MISBEHAVIOR, "MissedReports", "missed",
                       misses, params.miss_limit, culprit=child, agent=parent)
    last = next((r for r in reversed(reports) if r is not None), None)
    if last is None:
        return None
    if last.forwarded > last.packets_seen:
        return Finding(at, child, "Watchdog", Severity.MISBEHAVIOR, "InconsistentReport", "forwarded",
                       last.forwarded, last.packets_seen, culprit=child, agent=parent)
    if last.packets_seen > 0 and last.empty:
        ratio = last.forwarded / last.packets_seen
        if ratio < params.forward_floor:
            return Finding(at, child, "Watchdog", Severity.MISBEHAVIOR, "ReportLoss", "forward_ratio",
                           ratio, params.forward_floor, culprit=child, agent=parent)
    return None
