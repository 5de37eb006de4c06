"""Stateful agents for the three monitoring tiers.

A ``LocalAgent`` sits on a cluster node: it overhears its cells, runs the
detection pipeline once per closed window and steps the class record of
every sensor it monitors. A ``RegionalAgent`` watches the reports of its
clusters and a ``BaseAgent`` watches the regional agents. None of them
know about the event queue; the simulation feeds them and carries their
output.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, Iterable, List, Mapping, Optional, Set, Tuple

from .agent import (
    AnomalyProfile,
    BaselineLearner,
    Finding,
    Observation,
    Report,
    Severity,
    SourceStats,
    StimulusVector,
    Summary,
    WindowInput,
    detect_anomaly,
    match_signatures,
    postprocess,
    preprocess,
)
from .detectors import (
    RssiBaseline,
    check_physical,
    check_smac,
    check_tdma,
    sensor_watchdog,
    watchdog_check,
)
from .failover import LivenessTable, detect_failure
from .policy import GLOBAL, PolicyHolder, PolicySet, PolicyStore, Scope
from .response import NodeClassRecord, State, Verdict, isolated, on_probation, step
from .simcore import Kind, SmacSchedule, TdmaSchedule
from .topology import Axial

_FALLBACK = PolicySet()


@dataclass(frozen=True)
class Transition:
    at: int
    node: int
    before: State
    after: State


@dataclass
class CloseResult:
    report: Report
    findings: List[Finding]
    transitions: List[Transition]
    urgent: List[Finding]


class LocalAgent:
    """Cluster-tier agent (LPA)."""

    def __init__(
        self,
        node: int,
        cells: Iterable[Axial],
        cell_scope: Mapping[Axial, Tuple[int, int]],
        warmup_windows: int,
        forward_deadline: int,
    ) -> None:
        self.node = node
        self.cells: List[Axial] = sorted(cells)
        self.cell_scope = cell_scope  # cell -> (original cluster id, region id)
        self.holder = PolicyHolder()
        self.records: Dict[int, NodeClassRecord] = {}
        self.home: Dict[int, Axial] = {}  # monitored sensor -> its cell
        self.rssi = RssiBaseline()
        self.learner = BaselineLearner(warmup_windows)
        self.forward_deadline = forward_deadline
        self.alive = True
        self.hide_findings = False  # a compromised cluster node suppresses its reports
        self.absorbs = False
        self.blacklist: Set[int] = set()
        self.external: List[Finding] = []
        self.outbox: List[Report] = []
        self.since: Dict[int, int] = {}
        self._seen: Set[Tuple[int, int]] = set()
        self._open: Dict[int, Dict[Axial, WindowInput]] = {}
        self._packets: Dict[int, List] = defaultdict(list)
        self._delivered: Dict[int, int] = defaultdict(int)
        self._handoffs: List[Tuple[int, int, int, Axial]] = []  # (time, relay, seq, cell)
        self._forwarded: Counter = Counter()  # (relay, seq) -> forwards not yet matched

    # -- policy --------------------------------------------------------------

    def policy(self, cell: Axial) -> PolicySet:
        cluster, region = self.cell_scope[cell]
        return self.holder.effective(cluster, region) or _FALLBACK

    def needed_scopes(self) -> List[Scope]:
        scopes = {GLOBAL}
        for cell in self.cells:
            cluster, region = self.cell_scope[cell]
            scopes.add(Scope("Region", region))
            scopes.add(Scope("Cluster", cluster))
        return sorted(scopes)

    # -- intake --------------------------------------------------------------

    def _win(self, k: int, cell: Axial, window_ms: int) -> WindowInput:
        groups = self._open.setdefault(k, {})
        if cell not in groups:
            groups[cell] = WindowInput(k * window_ms, (k + 1) * window_ms)
        return groups[cell]

    def admit_cells(self, cells: Iterable[Axial], sensors: Mapping[int, Axial],
                    records: Mapping[int, NodeClassRecord], now: int) -> None:
        for c in cells:
            if c not in self.cells:
                self.cells.append(c)
        self.cells.sort()
        for s, cell in sensors.items():
            self.home[s] = cell
            self.records[s] = records[s]
            self.since[s] = now

    def note_beacon(self, sensor: int, at: int, window_ms: int) -> None:
        w = self._win(at // window_ms, self.home[sensor], window_ms)
        w.expected_tx[sensor] = w.expected_tx.get(sensor, 0) + 1

    def observe(
        self,
        ob: Observation,
        window_ms: int,
        tdma: TdmaSchedule,
        smac: SmacSchedule,
        inspect: bool = True,
    ) -> List[Finding]:
        """Take in one overheard transmission; returns the per-packet layer findings."""
        pkt = ob.packet
        key = (pkt.claimed_src, pkt.seq)
        first = ob.first_hop
        if first and key in self._seen:
            ob = replace(ob, duplicate=True)
        self._seen.add(key)
        k = ob.at // window_ms
        w = self._win(k, ob.cell, window_ms)
        w.observations.append(ob)
        if ob.corrupted or not inspect:
            return []
        if not first:
            self._forwarded[(ob.transmitter, pkt.seq)] += 1
            return []
        self._packets[k].append(pkt)
        if ob.transmitter == pkt.claimed_src:
            self.rssi.record(pkt.claimed_src, self.node, ob.rssi)
        if pkt.kind is Kind.ALERT:
            return []
        found = [f for f in (check_tdma(pkt, tdma, self.node), check_smac(pkt, smac, self.node)) if f]
        w.layer_findings.extend(found)
        return found

    def handoff(self, relay: int, seq: int, at: int) -> None:
        self._handoffs.append((at, relay, seq, self.home[relay]))

    def delivered(self, at: int, window_ms: int, finding: Optional[Finding]) -> None:
        k = at // window_ms
        self._delivered[k] += 1
        if finding is not None:
            self._win(k, self._own_cell(), window_ms).layer_findings.append(finding)

    def _own_cell(self) -> Axial:
        for cell in self.cells:
            if self.cell_scope[cell][0] == self.node:
                return cell
        return self.cells[0]

    # -- window close --------------------------------------------------------

    def close(
        self,
        k: int,
        window_ms: int,
        now: int,
        busy: Mapping[int, Tuple[Axial, float]],
        run_pipeline: bool = True,
    ) -> CloseResult:
        start, end = k * window_ms, (k + 1) * window_ms
        self.holder.apply_pending()
        pkts = self._packets.pop(k, [])

        # forwarding ledger: handoffs old enough to judge
        keep, due = [], []
        for h in self._handoffs:
            (due if h[0] + self.forward_deadline <= end else keep).append(h)
        self._handoffs = keep
        for at, relay, seq, cell in due:
            w = self._win(k, cell, window_ms) if cell in self.cells else None
            if w is None:
                continue
            handed, fwd = w.forwarding.get(relay, (0, 0))
            matched = self._forwarded[(relay, seq)] > 0
            w.forwarding[relay] = (handed + 1, fwd + matched)
            if matched:
                self._forwarded[(relay, seq)] -= 1
            else:
                self._forwarded.pop((relay, seq), None)
        groups = self._open.pop(k, {})
        for emitter, (cell, ms) in busy.items():
            target = cell if cell in self.cells else self.cells[0]
            groups.setdefault(target, WindowInput(start, end)).busy_ms[emitter] = ms

        findings: List[Finding] = []
        learnable: Dict[Axial, StimulusVector] = {}
        if run_pipeline:
            for cell in self.cells:
                w = groups.get(cell) or WindowInput(start, end)
                ps = self.policy(cell)
                v = preprocess(w, ps.detectors.busy_ceiling)
                found = list(w.layer_findings)
                found += check_physical(v, self.rssi, self.node, ps.detectors, self.node)
                found += sensor_watchdog(v, ps.detectors, self.node)
                record = ps.record
                if self.blacklist - record.blacklist:
                    record = replace(record, blacklist=record.blacklist | frozenset(self.blacklist))
                cell_pkts = [p for p in pkts if p.hop_trace[0] in v.entries or p.claimed_src in v.entries]
                sig = match_signatures(record, v, cell_pkts, self.node)
                found += sig
                matched = {f.subject for f in sig}
                # profiles describe Member behaviour; demoted nodes legitimately send differently
                rest = StimulusVector(v.window, {s: e for s, e in v.entries.items() if s not in matched
                                                 and (s not in self.records or self.records[s].state is State.MEMBER)},
                                      v.jammers)
                profile = replace(ps.profile, baselines=self.learner.frozen)
                found += detect_anomaly(profile, rest, self.node)
                findings.extend(found)
                learnable[cell] = v

        external, self.external = self.external, []
        accused = {f.accused for f in findings if f.actionable} | {f.accused for f in external if f.actionable}

        # baselines learn only from established, unaccused members seen for the whole window
        for cell, v in learnable.items():
            sources = [s for s, rec in self.records.items()
                       if self.home.get(s) == cell and rec.state is State.MEMBER
                       and s not in accused and self.since.get(s, 0) <= start]
            self.learner.observe(v, sources)

        transitions: List[Transition] = []
        urgent: List[Finding] = []
        for s in sorted(self.records):
            rec = self.records[s]
            verdict = Verdict.MISBEHAVED if s in accused else Verdict.GOOD
            params = self.policy(self.home[s]).response if s in self.home else _FALLBACK.response
            new = step(rec, verdict, end, params)
            self.records[s] = new
            if new.state is not rec.state:
                transitions.append(Transition(end, s, rec.state, new.state))
                if new.state is State.SUSPECT:
                    urgent.append(Finding(end, s, "Response", Severity.DANGER, "Suspect",
                                          observed=new.ban_until, culprit=s, agent=self.node))
                elif new.state is State.MALICIOUS:
                    self.blacklist.add(s)
                    urgent.append(Finding(end, s, "Response", Severity.DANGER, "Malicious", culprit=s,
                                          agent=self.node))
        findings.extend(urgent)

        sightings = sorted({(p.claimed_src, self.home_of_transmitter(p), p.hop_trace[0]) for p in pkts
                            if self.home_of_transmitter(p) is not None})
        watched = []
        for s in sorted(self.records):
            if on_probation(self.records[s], now):
                for v in learnable.values():
                    if s in v.entries:
                        watched.append((s, v.entries[s]))
        seen = self._delivered.pop(k, 0)
        reported = () if self.hide_findings else tuple(findings)
        report, _ = postprocess(
            self.node, (start, end), reported,
            Summary(packets_seen=seen, forwarded=0 if self.absorbs else seen),
            sightings=tuple(sightings),
            policy_versions=self.holder.versions(),
            records=tuple(self.records[s] for s in sorted(self.records)),
            watched=tuple(watched),
            covers=tuple(sorted(self.records)),
        )
        return CloseResult(report, findings, transitions, urgent)

    def home_of_transmitter(self, pkt) -> Optional[Axial]:
        return self.home.get(pkt.hop_trace[0])

    def isolated_nodes(self, now: int) -> Set[int]:
        return {s for s, rec in self.records.items() if isolated(rec, now)}


class RegionalAgent:
    """Regional-tier agent (RPA): watchdog over clusters, cross-cell checks, record backup."""

    def __init__(self, node: int, children: Iterable[int]) -> None:
        self.node = node
        self.alive = True
        self.holder = PolicyHolder()
        self.liveness = LivenessTable(children)
        self.history: Dict[int, List[Optional[Report]]] = {c: [] for c in children}
        self.mirror: Dict[int, NodeClassRecord] = {}
        self.flagged: Dict[int, int] = defaultdict(int)
        self._inbox: Dict[int, Dict[int, Report]] = defaultdict(dict)

    def watch(self, child: int) -> None:
        self.liveness.watch(child)
        self.history.setdefault(child, [])

    def unwatch(self, child: int) -> None:
        self.liveness.unwatch(child)
        self.history.pop(child, None)
        self.flagged.pop(child, None)

    def receive(self, report: Report, at: int, window_ms: int) -> None:
        self.liveness.heard(report.from_agent, at)
        self._inbox[report.window[0] // window_ms][report.from_agent] = report
        for rec in report.records:
            self.mirror[rec.node] = rec

    def close(self, k: int, window_ms: int, now: int, children: Iterable[int],
              policy: PolicySet) -> Tuple[Report, List[Finding], List[int]]:
        start, end = k * window_ms, (k + 1) * window_ms
        self.holder.apply_pending()
        got = self._inbox.pop(k, {})
        for old in [w for w in self._inbox if w < k - 2 * policy.detectors.miss_limit]:
            del self._inbox[old]
        self.liveness.close_window()
        findings: List[Finding] = []
        kids = sorted(children)
        for c in kids:
            self.watch(c)
            self.history[c].append(got.get(c))
            f = watchdog_check(self.node, c, self.history[c], policy.detectors, at=end)
            if f is not None:
                findings.append(f)
                self.flagged[c] += 1
            else:
                self.flagged[c] = 0
        findings.extend(cross_cell_sybil([(0, r) for r in got.values()], policy, self.node, end))
        failed = set(detect_failure(self.liveness, now, policy.detectors.miss_limit))
        failed |= {c for c in kids if self.flagged[c] >= policy.detectors.miss_limit}
        children_reports = tuple(got[c] for c in sorted(got))
        seen = sum(r.packets_seen for r in children_reports)
        fwd = sum(r.forwarded for r in children_reports)
        carried = [f for r in children_reports for f in r.findings if f.actionable]
        report, _ = postprocess(
            self.node, (start, end), tuple(findings) + tuple(carried), Summary(seen, fwd),
            policy_versions=self.holder.versions(),
            watched=tuple(w for r in children_reports for w in r.watched),
            covers=tuple(kids),
            children=children_reports,
        )
        return report, findings, sorted(failed)


class BaseAgent:
    """Base-station agent (BPDP): policy author, watchdog over regional agents."""

    def __init__(self, node: int, store: PolicyStore, regionals: Iterable[int]) -> None:
        self.node = node
        self.store = store
        self.liveness = LivenessTable(regionals)
        self.history: Dict[int, List[Optional[Report]]] = {r: [] for r in regionals}
        self._inbox: Dict[int, Dict[int, Report]] = defaultdict(dict)

    def unwatch(self, child: int) -> None:
        self.liveness.unwatch(child)
        self.history.pop(child, None)

    def receive(self, report: Report, at: int, window_ms: int) -> None:
        self.liveness.heard(report.from_agent, at)
        self._inbox[report.window[0] // window_ms][report.from_agent] = report

    def close(self, k: int, window_ms: int, now: int,
              regionals: Iterable[int]) -> Tuple[List[Report], List[Finding], List[int]]:
        end = (k + 1) * window_ms
        policy = self.store.resolve(GLOBAL)
        got = self._inbox.pop(k, {})
        self.liveness.close_window()
        findings: List[Finding] = []
        for r in sorted(regionals):
            self.history.setdefault(r, []).append(got.get(r))
            f = watchdog_check(self.node, r, self.history[r], policy.detectors, at=end)
            if f is not None:
                findings.append(f)
        subtrees = [(r.from_agent, c) for r in got.values() for c in r.children]
        findings.extend(cross_cell_sybil(subtrees, policy, self.node, end, across=True))
        failed = detect_failure(self.liveness, now, policy.detectors.miss_limit)
        return [got[r] for r in sorted(got)], findings, failed


def cross_cell_sybil(reports: Iterable[Tuple[int, Report]], policy: PolicySet, agent: int, at: int,
                     across: bool = False) -> List[Finding]:
    """Identities seen in two or more cells within one window.

    Only the rules that look at ``distinct_cells_seen`` alone are evaluated
    here; the per-cell rules already ran at the cluster tier. With
    ``across`` set, only identities seen under more than one group (for
    the base station: more than one regional subtree) are considered.
    """
    rules = tuple(r for r in policy.record.rules
                  if all(c.feature.replace("rate:", "") == "distinct_cells_seen" for c in r.conditions))
    if not rules:
        return []
    cells: Dict[int, Set[Axial]] = defaultdict(set)
    tx: Dict[int, Set[int]] = defaultdict(set)
    groups: Dict[int, Set[int]] = defaultdict(set)
    for group, rep in reports:
        for claimed, cell, transmitter in rep.sightings:
            cells[claimed].add(cell)
            tx[claimed].add(transmitter)
            groups[claimed].add(group)
    entries = {}
    for claimed in sorted(cells):
        if across and len(groups[claimed]) < 2:
            continue
        entries[claimed] = SourceStats(distinct_cells_seen=len(cells[claimed]),
                                       transmitters=frozenset(tx[claimed]))
    if not entries:
        return []
    v = StimulusVector((at - 1, at), entries)
    record = replace(policy.record, rules=rules, blacklist=frozenset())
    return match_signatures(record, v, (), agent)
