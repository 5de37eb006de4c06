"""The simulation engine: traffic, attacks, monitoring tiers and failover.

Honest sensors send one beacon per S-MAC period, in their own TDMA slot
during the awake half of the period. A beacon is source-routed Data to
the sensor's current cluster node when the sensor may originate traffic,
and a one-hop Hello otherwise. Relays pass Data on in their next slot.

Windows of ``W`` ms close at staggered offsets (cluster tier, then
regional, then base) so every report of a window has arrived before its
parent looks at it.
"""

from __future__ import annotations

import logging
import math
import random
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from .agent import Finding, Observation, Report, Severity, SignatureRule, SourceStats
from .attacks import (
    FORWARDING,
    GENERATING,
    AttackerState,
    AttackKind,
    AttackSpec,
    Drop,
    Emission,
    Misroute,
    Modify,
    Tunnel,
    on_forward,
    on_generate,
)
from .detectors import check_route, check_smac, check_tdma
from .failover import Assignment, takeover
from .policy import GLOBAL, IdtChange, Op, PolicySet, PolicyStore, Scope, disseminate, resupply
from .response import Action, Blacklisted, NodeClassRecord, State, admit, isolated, may
from .scenario import Scenario
from .simcore import (
    BROADCAST,
    HOP_DELAY_MS,
    EnergyLedger,
    Event,
    EventQueue,
    Jammer,
    Kind,
    Packet,
    Radio,
    Reception,
    SmacSchedule,
    TdmaSchedule,
    boosted_power,
    slot_owner,
    rssi_at,
)
from .tiers import BaseAgent, LocalAgent, RegionalAgent
from .topology import Axial, Role, Topology, Unreachable, build_topology, expected_route

log = logging.getLogger("hidsim")

LPA_CLOSE = 10
RPA_CLOSE = 30
BASE_CLOSE = 50
BACKBONE_MS = HOP_DELAY_MS


class InvariantViolation(RuntimeError):
    """A run broke one of the simulator's own guarantees."""


@dataclass
class FailoverEvent:
    failed: int
    role: Role
    killed_at: Optional[int]
    detected_at: int
    selected_by: Optional[int]
    takeover: Optional[int]
    adopted: Tuple[int, ...]
    first_report_at: Optional[int] = None
    # classification records of the affected sensors just before and just after the handover
    before: Dict[int, NodeClassRecord] = field(default_factory=dict)
    after: Dict[int, NodeClassRecord] = field(default_factory=dict)


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        scenario.validate()
        self.sc = scenario
        self.W = scenario.window_ms
        self.topo = build_topology(scenario.topology, scenario.radio.range)
        scenario.check_ids(self.topo)
        self.queue = EventQueue()
        self.ledger = EnergyLedger()
        self.costs = scenario.energy
        self.radio = Radio(self.topo, scenario.radio, self.ledger, self.costs,
                           random.Random(f"{scenario.seed}:radio"))
        self.hierarchical = scenario.mode == "hierarchical"
        self.trace: List[str] = []
        self._seq = 0

        topo = self.topo
        self.sensors = topo.ids(Role.SENSOR)
        self.clusters = topo.ids(Role.CLUSTER)
        self.regionals = topo.ids(Role.REGIONAL)
        self.base_id = topo.base

        slot_len = scenario.schedules.slot_len
        self.tdma: Dict[Axial, TdmaSchedule] = {
            key: TdmaSchedule.round_robin(topo.sensors_in_cell(key), slot_len) for key in sorted(topo.cells)
        }
        self.period = scenario.smac_period
        self.smac = SmacSchedule(self.period, {
            s: (0, self.tdma[topo.nodes[s].cell].frame_len) for s in self.sensors
        })
        self.slot_index = {s: self.tdma[topo.nodes[s].cell].slots_of(s)[0] for s in self.sensors}

        self.assignment = Assignment.initial(topo)
        cell_scope = {key: (cid, topo.region_of[cid]) for key, cid in topo.cell_cluster.items()}
        deadline = 3 * self.period
        warmup = scenario.policy.profile.warmup_windows
        self.lpas: Dict[int, LocalAgent] = {}
        for cid in self.clusters:
            cell = topo.nodes[cid].cell
            self.lpas[cid] = LocalAgent(cid, [cell], cell_scope, warmup, deadline)
        self.rpas = {r: RegionalAgent(r, topo.clusters_in_region(r)) for r in self.regionals}
        self.store = PolicyStore(scenario.policy, topo.region_of)
        self.base = BaseAgent(self.base_id, self.store, self.regionals)

        self.timeline: Dict[int, List[Tuple[int, str]]] = {}
        for s in self.sensors:
            lpa = self.lpas[topo.cluster_of[s]]
            lpa.home[s] = topo.nodes[s].cell
            lpa.since[s] = 0
            try:
                admit(lpa.records, s, 0, scenario.policy.record.blacklist)
            except Blacklisted:
                lpa.records[s] = NodeClassRecord(s, State.MALICIOUS, 0)
                self._finding("admit", Finding(0, s, "Response", Severity.DANGER, "Blacklisted",
                                               culprit=s, agent=lpa.node))
            self.timeline[s] = [(0, lpa.records[s].state.value)]

        # attacks
        self.attackers: Set[int] = set()
        self.forwarders: Dict[int, List[AttackSpec]] = defaultdict(list)
        self.gen_states: List[Tuple[AttackSpec, AttackerState]] = []
        self.replayers: Dict[int, AttackerState] = {}
        for i, spec in enumerate(scenario.attacks):
            self.attackers.update(spec.nodes)
            state = AttackerState(random.Random(f"{scenario.seed}:attack:{i}"))
            if spec.kind in FORWARDING:
                self.forwarders[spec.attacker].append(spec)
            if spec.kind in GENERATING:
                self.gen_states.append((spec, state))
            if spec.kind is AttackKind.REPLAY:
                self.replayers[spec.attacker] = state
            if spec.kind is AttackKind.JAMMING:
                self.radio.jammers.append(Jammer(spec.attacker, spec.jam_range or scenario.radio.range,
                                                 spec.corruption_prob, spec.start, spec.stop, spec.duty))
            if topo.nodes[spec.attacker].role is Role.CLUSTER and spec.kind in (
                    AttackKind.BLACK_HOLE, AttackKind.SELECTIVE_FORWARDING, AttackKind.SINK_HOLE):
                self._compromised_cluster(spec)

        # routing epochs: (since, topology, excluded relays)
        self.epochs: List[Tuple[int, Topology, FrozenSet[int]]] = [(0, topo, frozenset())]
        self._routes: Dict[tuple, Optional[Tuple[int, ...]]] = {}

        # bookkeeping for metrics
        self.findings: List[Tuple[str, Finding]] = []
        self.killed: Dict[int, int] = {}
        self.failovers: List[FailoverEvent] = []
        self.orphans: Set[int] = set()
        self.counts: Dict[str, int] = defaultdict(int)
        self.spoofed: List[Dict[str, object]] = []
        self.tunneled: Dict[int, Dict[str, object]] = {}
        self._slot_load: Dict[Tuple[int, int], int] = {}
        self._alerted: Set[Tuple[int, int, int]] = set()
        self._local_counts: Dict[Tuple[int, int, int], Dict[str, int]] = {}
        self._ban_log: List[Tuple[int, int, int]] = []  # (node, from, until)
        self._tx_times: Dict[int, List[int]] = defaultdict(list)
        self._rule_cache: Dict[int, Tuple[object, Tuple[SignatureRule, ...]]] = {}
        self._ran = False

    # -- small helpers -------------------------------------------------------

    def _next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def _log(self, t: int, event: str, actor: int, seq: Optional[int] = None, **kv: object) -> None:
        fields = " ".join(f"{k}={_fmt(v)}" for k, v in kv.items())
        self.trace.append(f"{t}\t{event}\t{actor}\t{'-' if seq is None else seq}\t{fields}")

    def _at(self, t: int, kind: str, actor: int, fn, seq: Optional[int] = None) -> None:
        self.queue.schedule(t, Event(kind, actor, fn, seq))

    def record(self, sensor: int) -> NodeClassRecord:
        return self.lpas[self.assignment.lpa_of_sensor(self.topo, sensor)].records[sensor]

    def owner(self, sensor: int) -> Optional[LocalAgent]:
        lpa = self.lpas[self.assignment.lpa_of_sensor(self.topo, sensor)]
        return lpa if lpa.alive else None

    def _finding(self, tier: str, f: Finding) -> None:
        self.findings.append((tier, f))
        self._log(self.queue.now, "finding", f.agent if f.agent is not None else -1, None,
                  tier=tier, detector=f.detector, severity=f.severity.value, label=f.label,
                  subject=f.subject, accused=f.accused, feature=f.feature or "-")

    def _compromised_cluster(self, spec: AttackSpec) -> None:
        lpa = self.lpas[spec.attacker]

        def start() -> None:
            lpa.hide_findings = lpa.absorbs = True
            self._log(self.queue.now, "compromise", spec.attacker, None, kind=spec.kind.value)

        def stop() -> None:
            lpa.hide_findings = lpa.absorbs = False

        self._at(spec.start, "compromise", spec.attacker, start)
        self._at(spec.stop, "compromise_end", spec.attacker, stop)

    # -- routing -------------------------------------------------------------

    def _epoch_index(self) -> int:
        return len(self.epochs) - 1

    def route(self, src: int, dst: int, epoch: Optional[int] = None) -> Optional[Tuple[int, ...]]:
        e = self._epoch_index() if epoch is None else epoch
        key = (e, src, dst)
        if key not in self._routes:
            _, topo, excl = self.epochs[e]
            try:
                self._routes[key] = tuple(expected_route(topo, src, dst, excl))
            except Unreachable:
                self._routes[key] = None
        return self._routes[key]

    def _new_epoch(self, topo: Optional[Topology] = None, excluded: Optional[FrozenSet[int]] = None) -> None:
        _, cur_topo, cur_excl = self.epochs[-1]
        topo = cur_topo if topo is None else topo
        excluded = cur_excl if excluded is None else excluded
        self.epochs.append((self.queue.now, topo, excluded))
        self._log(self.queue.now, "routes", -1, None, epoch=len(self.epochs) - 1, excluded=sorted(excluded))
        # relay loads shift with the routes, so traffic baselines are relearned
        for lpa in self.lpas.values():
            lpa.learner.forget(list(lpa.records))

    def _refresh_exclusion(self) -> None:
        now = self.queue.now
        excl = frozenset(s for s in self.sensors if isolated(self.record(s), now))
        if excl != self.epochs[-1][2]:
            self._new_epoch(excluded=excl)

    # -- radio ---------------------------------------------------------------

    def _emit(self, pkt: Packet, sender: int, at: int, range_factor: float = 1.0,
              exempt: bool = False, action: Action = Action.ORIGINATE) -> bool:
        """Put one packet on the air from ``sender``.

        Isolated senders are suppressed. Honest senders also obey the
        permission of their class; ``exempt`` covers attacker behaviour and
        IDS alert traffic, which do not ask.
        """
        if sender in self.radio.dead:
            return False
        if self.topo.nodes[sender].role is Role.SENSOR:
            rec = self.record(sender)
            if isolated(rec, at) or (not exempt and not may(rec, action, at)):
                self._log(at, "suppressed", sender, pkt.seq, kind=pkt.kind.value, state=rec.state.value)
                return False
        self._log(at, "tx", sender, pkt.seq, kind=pkt.kind.value, src=pkt.claimed_src, dst=pkt.dst,
                  hop=pkt.next_hop, hops=len(pkt.hop_trace))
        self.counts["transmissions"] += 1
        self._tx_times[sender].append(at)
        if pkt.dst == BROADCAST:
            self.counts["broadcasts"] += 1
            if pkt.kind is Kind.ALERT:
                self.counts["alert_broadcasts"] += 1
        receptions = self.radio.transmit(pkt, sender, at, range_factor)
        findings = self._monitor(pkt, sender, at, range_factor)
        if pkt.spoofed and len(pkt.hop_trace) == 1:
            self._note_spoof(pkt, sender, at, findings)
        if receptions:
            self._at(at + HOP_DELAY_MS, "rx", sender, lambda: self._receive_all(receptions), pkt.seq)
        return True

    def _monitor(self, pkt: Packet, sender: int, at: int, range_factor: float) -> List[Finding]:
        """The cluster node owning the sender's cell overhears the transmission."""
        node = self.topo.nodes[sender]
        if node.role is not Role.SENSOR:
            return []
        lpa = self.owner(sender)
        if lpa is None:
            return []
        corrupted = self.radio.jammed(lpa.node, at) is not None if self.radio.jammers else False
        d = max(self.topo.distance(sender, lpa.node), 1e-6)
        power = boosted_power(self.sc.radio, range_factor) if range_factor != 1.0 else None
        rssi = rssi_at(self.sc.radio, d, power)
        ob = Observation(at, pkt, sender, rssi, corrupted, node.cell)
        if self.hierarchical:
            self.ledger.charge(lpa.node, "ids", self.costs.ids_mj)
        found = lpa.observe(ob, self.W, self.tdma[node.cell], self.smac, inspect=self.hierarchical)
        for f in found:
            self._finding("cluster", f)
        return found

    def _note_spoof(self, pkt: Packet, sender: int, at: int, found: List[Finding]) -> None:
        victim = self.topo.nodes.get(pkt.claimed_src)
        outside = victim is None or victim.role is not Role.SENSOR or \
            slot_owner(self.tdma[victim.cell], at) != pkt.claimed_src
        self.spoofed.append({"at": at, "seq": pkt.seq, "sender": sender, "claimed": pkt.claimed_src,
                             "outside_victim_slot": outside,
                             "flagged": any(f.detector == "TDMA" for f in found)})

    def _receive_all(self, receptions: Sequence[Reception]) -> None:
        for r in receptions:
            rr = r.receiver
            if rr in self.radio.dead:
                continue
            pkt = r.packet
            if not self.hierarchical and self.topo.nodes[rr].role is Role.SENSOR:
                self._inspect_locally(r)
            if r.corrupted:
                continue
            if rr in self.replayers and pkt.true_src != rr and pkt.kind is not Kind.ALERT:
                self.replayers[rr].remember(pkt)
            if pkt.next_hop != rr:
                continue
            if rr == pkt.dst:
                self._deliver(rr, pkt, r.at)
            elif self.topo.nodes[rr].role is Role.SENSOR and pkt.route:
                self._relay(rr, pkt, r.at)

    def _deliver(self, cluster: int, pkt: Packet, at: int) -> None:
        lpa = self.lpas.get(cluster)
        if lpa is None or not lpa.alive or pkt.kind is not Kind.DATA:
            return
        finding = None
        if self.hierarchical and isinstance(pkt.body, int):
            _, topo, excl = self.epochs[pkt.body]
            want = self.route(pkt.claimed_src, pkt.dst, pkt.body) if pkt.claimed_src in topo.nodes else None
            finding = check_route(pkt, topo, excl, at, cluster, want)
            if finding is not None:
                self._finding("cluster", finding)
        lpa.delivered(at, self.W, finding)
        self._log(at, "deliver", cluster, pkt.seq, src=pkt.claimed_src, hops=len(pkt.hop_trace))
        self.counts["delivered"] += 1
        if pkt.seq in self.tunneled:
            self.tunneled[pkt.seq]["delivered"] = True
            self.tunneled[pkt.seq]["flagged"] = finding is not None and finding.actionable

    def _relay(self, relay: int, pkt: Packet, at: int) -> None:
        lpa = self.owner(relay)
        if lpa is not None:
            lpa.handoff(relay, pkt.seq, at)
        idx = len(pkt.hop_trace)
        if idx + 1 >= len(pkt.route) or pkt.route[idx] != relay:
            return
        nxt = pkt.route[idx + 1]
        for spec in self.forwarders.get(relay, ()):
            if not spec.active(at):
                continue
            act = on_forward(spec, pkt, at)
            if isinstance(act, Drop):
                self._log(at, "drop", relay, pkt.seq, attack=spec.kind.value)
                return
            if isinstance(act, Modify):
                pkt = act.packet
            elif isinstance(act, Misroute):
                self._misroute(relay, pkt, at, act.next, nxt)
                return
            elif isinstance(act, Tunnel):
                if relay in pkt.hop_trace:
                    break  # already carried once; forward normally
                self._tunnel(relay, act.peer, pkt, at)
                return
            break
        fwd = replace(pkt, hop_trace=pkt.hop_trace + (relay,), next_hop=nxt)
        t = self._forward_time(relay, at)
        self._at(t, "forward", relay, lambda: self._emit(fwd, relay, t, action=Action.FORWARD), pkt.seq)

    def _forward_time(self, relay: int, at: int) -> int:
        sched = self.tdma[self.topo.nodes[relay].cell]
        frame, offset = sched.frame_len, self.slot_index[relay] * sched.slot_len
        start = ((at - offset + frame - 1) // frame) * frame + offset
        while True:
            used = self._slot_load.get((relay, start), 0)
            if used < sched.slot_len - 1:
                self._slot_load[(relay, start)] = used + 1
                return start + 1 + used
            start += frame

    def _misroute(self, relay: int, pkt: Packet, at: int, target: Optional[int], proper: int) -> None:
        _, topo, excl = self.epochs[-1]
        if target is None or not topo.in_range(relay, target):
            options = [n for n in topo.links(relay)
                       if topo.nodes[n].role is Role.SENSOR and n != proper and n not in excl
                       and n not in pkt.hop_trace and n not in self.radio.dead]
            if not options:
                return
            target = max(options, key=lambda n: (topo.distance(n, pkt.dst), -n))
        onward = self.route(target, pkt.dst)
        if onward is None:
            self._log(at, "drop", relay, pkt.seq, attack="Misdirection", reason="no_route")
            return
        out = replace(pkt, hop_trace=pkt.hop_trace + (relay,), next_hop=target,
                      route=pkt.hop_trace + (relay,) + onward)
        self._log(at, "misroute", relay, pkt.seq, to=target)
        self._at(at + 1, "forward", relay, lambda: self._emit(out, relay, at + 1, exempt=True), pkt.seq)

    def _tunnel(self, a1: int, a2: int, pkt: Packet, at: int) -> None:
        # the far end steers clear of the near end so a packet crosses the tunnel once
        key = ("tunnel", len(self.epochs) - 1, a1, a2, pkt.dst)
        if key not in self._routes:
            _, topo, excl = self.epochs[-1]
            try:
                self._routes[key] = tuple(expected_route(topo, a2, pkt.dst, excl | {a1}))
            except Unreachable:
                self._routes[key] = None
        onward = self._routes[key]
        self._log(at, "tunnel", a1, pkt.seq, peer=a2)
        if onward is None or len(onward) < 2:
            return
        carried = pkt.hop_trace + (a1,)
        out = replace(pkt, hop_trace=carried + (a2,), next_hop=onward[1], route=carried + onward)
        self.tunneled[pkt.seq] = {"at": at, "delivered": False, "flagged": False}
        t = at + HOP_DELAY_MS
        self._at(t, "forward", a2, lambda: self._emit(out, a2, t, exempt=True), pkt.seq)

    # -- honest traffic ------------------------------------------------------

    def _beacon_time(self, sensor: int, period_start: int) -> int:
        sched = self.tdma[self.topo.nodes[sensor].cell]
        offset = self.slot_index[sensor] * sched.slot_len
        m = -(-(period_start - offset) // sched.frame_len)
        return m * sched.frame_len + offset

    def _period_tick(self, start: int) -> None:
        for s in self.sensors:
            t = self._beacon_time(s, start)
            if t < self.sc.duration:
                self._at(t, "beacon", s, lambda s=s, t=t: self._beacon(s, t))
        nxt = start + self.period
        if nxt < self.sc.duration:
            self._at(nxt, "period", -1, lambda: self._period_tick(nxt))

    def _beacon(self, s: int, t: int) -> None:
        rec = self.record(s)
        if isolated(rec, t):
            self._log(t, "suppressed", s, None, kind="beacon", state=rec.state.value)
            return
        lpa_id = self.assignment.lpa_of_sensor(self.topo, s)
        path = self.route(s, lpa_id) if may(rec, Action.ORIGINATE, t) else None
        seq = self._next_seq()
        if path is not None and len(path) >= 2:
            pkt = Packet(s, s, lpa_id, Kind.DATA, (s,), t, seq, "reading", next_hop=path[1], route=path,
                         body=self._epoch_index())
        else:
            pkt = Packet(s, s, BROADCAST, Kind.HELLO, (s,), t, seq, "hello")
        owner = self.owner(s)
        if owner is not None:
            owner.note_beacon(s, t, self.W)
        self._emit(pkt, s, t, exempt=True)

    # -- attacker traffic ----------------------------------------------------

    def _attack_tick(self, spec: AttackSpec, state: AttackerState, t: int) -> None:
        for em in on_generate(spec, state, t):
            if em.at < self.sc.duration:
                self._at(em.at, "attack", spec.attacker, lambda em=em: self._attack_emit(spec, em))
        nxt = t + spec.interval
        if nxt < min(spec.stop, self.sc.duration):
            self._at(nxt, "attack_tick", spec.attacker, lambda: self._attack_tick(spec, state, nxt))

    def _attack_emit(self, spec: AttackSpec, em: Emission) -> None:
        me = spec.attacker
        seq = em.replay_of.seq if em.replay_of is not None else self._next_seq()
        hop = BROADCAST
        if em.dst != BROADCAST and self.topo.in_range(me, em.dst):
            hop = em.dst
        pkt = Packet(em.claimed_src, me, em.dst, em.kind, (me,), em.at, seq, em.payload_tag, next_hop=hop,
                     body=em.replay_of.body if em.replay_of is not None else None)
        self._emit(pkt, me, em.at, em.range_factor, exempt=True)

    # -- every-sensor baseline mode -----------------------------------------

    def _inspect_locally(self, r: Reception) -> None:
        """Baseline mode: every sensor inspects what it hears and broadcasts its own alerts."""
        me = r.receiver
        self.ledger.charge(me, "ids", self.costs.ids_mj)
        pkt = r.packet
        if r.corrupted or len(pkt.hop_trace) != 1 or pkt.kind is Kind.ALERT:
            return
        tx = pkt.hop_trace[0]
        tx_node = self.topo.nodes[tx]
        if tx_node.role is not Role.SENSOR:
            return
        k = pkt.sent_at // self.W
        found = [f for f in (check_tdma(pkt, self.tdma[tx_node.cell], me), check_smac(pkt, self.smac, me)) if f]
        counts = self._local_counts.setdefault((me, pkt.claimed_src, k), {"pkt": 0, "hello": 0})
        counts["hello" if pkt.kind is Kind.HELLO else "pkt"] += 1
        lpa = self.owner(me)
        ps = lpa.policy(lpa.home[me]) if lpa is not None else self.sc.policy
        stats = SourceStats(pkt_count=counts["pkt"], hello_count=counts["hello"])
        for rule in self._count_rules(ps):
            if all(c.holds(stats, self.W) for c in rule.conditions):
                found.append(Finding(r.at, pkt.claimed_src, "Signature", Severity.MISBEHAVIOR, rule.label,
                                     rule.conditions[0].feature, culprit=tx, agent=me))
        for f in found:
            key = (me, f.accused, k)
            if key in self._alerted:
                continue
            self._alerted.add(key)
            self._finding("sensor", f)
            alert = Packet(me, me, BROADCAST, Kind.ALERT, (me,), r.at + 1, self._next_seq(), f"accuse:{f.accused}")
            self._at(r.at + 1, "alert", me, lambda a=alert: self._emit(a, me, a.sent_at, exempt=True), alert.seq)

    def _count_rules(self, ps: PolicySet) -> Tuple[SignatureRule, ...]:
        """Rules a lone sensor can evaluate: those over its own packet counts only."""
        key = id(ps.record)
        if key not in self._rule_cache:
            self._rule_cache[key] = (ps.record, tuple(
                r for r in ps.record.rules if all(c.feature in ("pkt_count", "hello_count") for c in r.conditions)))
        return self._rule_cache[key][1]

    # -- backbone ------------------------------------------------------------

    def _backbone(self, src: int, dst: int, kind: Kind, at: int, deliver, tag: str = "") -> None:
        """Wired tier-to-tier message; arrives ``BACKBONE_MS`` later unless the receiver is dead."""
        self._log(at, "backbone", src, None, kind=kind.value, to=dst, tag=tag)
        self.counts[f"backbone_{kind.value}"] += 1
        if kind is Kind.ALERT:
            self.counts["alert_messages"] += 1

        def arrive() -> None:
            if dst in self.assignment.dead:
                self._log(self.queue.now, "lost", dst, None, kind=kind.value, sender=src)
                return
            deliver()

        self._at(at + BACKBONE_MS, "backbone", dst, arrive)

    def _send_policy(self, ps: PolicySet, path: Sequence[Tuple[int, int]], at: int, resupply_: bool = False) -> None:
        """Walk one policy set down a hop path, one backbone hop at a time."""
        if not path:
            return
        (src, dst), rest = path[0], path[1:]
        self.counts["policy_hops"] += 1
        if resupply_:
            self.counts["resupply_hops"] += 1

        def arrive() -> None:
            holder = self._holder(dst)
            ok = holder.offer(ps) if holder is not None else False
            self._log(self.queue.now, "policy", dst, None, scope=str(ps.scope), version=ps.version,
                      sender=src, accepted=ok)
            self._send_policy(ps, rest, self.queue.now, resupply_)

        self._backbone(src, dst, Kind.POLICY_UPDATE, at, arrive, tag=f"{ps.scope}@{ps.version}")

    def _holder(self, node: int):
        if node in self.lpas:
            return self.lpas[node].holder
        if node in self.rpas:
            return self.rpas[node].holder
        return None

    def _in_scope(self, lpa: LocalAgent, scope: Scope) -> bool:
        if scope.kind == "Global":
            return True
        for cell in lpa.cells:
            cluster, region = lpa.cell_scope[cell]
            if (scope.kind == "Region" and region == scope.id) or (scope.kind == "Cluster" and cluster == scope.id):
                return True
        return False

    def _disseminate(self, ps: PolicySet, at: int) -> None:
        alive_rpas = [r for r in self.regionals if self.rpas[r].alive]

        def lpas_of(r: int) -> List[int]:
            return [c for c in self.assignment.clusters_of(r)
                    if self.lpas[c].alive and self._in_scope(self.lpas[c], ps.scope)]

        targets = [r for r in alive_rpas if ps.scope.kind == "Global" or lpas_of(r)]
        hops = disseminate(ps, targets, lpas_of, self.base_id)
        for r in targets:
            self._send_policy(ps, [(self.base_id, r)] + [h for h in hops if h[0] == r], at)

    # -- window closes -------------------------------------------------------

    def _jam_busy(self, lpa: LocalAgent, k: int) -> Dict[int, Tuple[Axial, float]]:
        start, end = k * self.W, (k + 1) * self.W
        out = {}
        for j in self.radio.jammers:
            overlap = min(end, j.stop) - max(start, j.start)
            if overlap <= 0 or j.node in self.radio.dead:
                continue
            if self.topo.distance(j.node, lpa.node) <= j.range:
                out[j.node] = (self.topo.nodes[j.node].cell, overlap * j.duty)
        return out

    def _close_lpas(self, k: int) -> None:
        now = self.queue.now
        for cid in self.clusters:
            lpa = self.lpas[cid]
            if not lpa.alive or cid in self.assignment.retired:
                continue
            res = lpa.close(k, self.W, now, self._jam_busy(lpa, k), run_pipeline=self.hierarchical)
            for f in res.findings:
                self._finding("cluster", f)
            for tr in res.transitions:
                self.timeline[tr.node].append((tr.at, tr.after.value))
                self._log(now, "class", cid, None, node=tr.node, before=tr.before.value, after=tr.after.value)
                if tr.after is State.SUSPECT:
                    rec = lpa.records[tr.node]
                    self._ban_log.append((tr.node, now, rec.ban_until or now))
            parent = self.assignment.parent_of(cid)
            for f in res.urgent:
                self._backbone(cid, parent, Kind.ALERT, now, lambda: None, tag=f"{f.label}:{f.accused}")
            if parent in self.assignment.dead:
                lpa.outbox.append(res.report)
                self._log(now, "buffer", cid, None, window=k, parent=parent)
            else:
                self._send_report(cid, parent, res.report, now)
        self._refresh_exclusion()

    def _send_report(self, cid: int, parent: int, report: Report, at: int) -> None:
        rpa = self.rpas[parent]

        def arrive() -> None:
            rpa.receive(report, self.queue.now, self.W)
            if self.hierarchical:
                self.ledger.charge(parent, "ids", self.costs.ids_mj)
            for ev in self.failovers:
                if ev.first_report_at is None and ev.role is Role.CLUSTER and ev.takeover == cid \
                        and set(ev.adopted) & set(report.covers):
                    ev.first_report_at = self.queue.now

        self._backbone(cid, parent, Kind.REPORT, at, arrive, tag=f"w{report.window[0] // self.W}")

    def _route_down(self, f: Finding, via_rpa: Optional[int], at: int) -> bool:
        """Hand an accusation to the cluster agent that owns the accused sensor."""
        if f.accused not in self.topo.nodes or self.topo.nodes[f.accused].role is not Role.SENSOR:
            return False
        owner = self.assignment.lpa_of_sensor(self.topo, f.accused)
        if owner == f.agent or not self.lpas[owner].alive:
            return False
        parent = self.assignment.parent_of(owner)
        if via_rpa is not None and parent != via_rpa:
            return False

        def give() -> None:
            self.lpas[owner].external.append(f)

        if via_rpa is None:
            self._backbone(self.base_id, parent, Kind.ALERT, at,
                           lambda: self._backbone(parent, owner, Kind.ALERT, self.queue.now, give,
                                                  tag=f"accuse:{f.accused}"),
                           tag=f"accuse:{f.accused}")
        else:
            self._backbone(via_rpa, owner, Kind.ALERT, at, give, tag=f"accuse:{f.accused}")
        return True

    def _close_rpas(self, k: int) -> None:
        now = self.queue.now
        for r in self.regionals:
            rpa = self.rpas[r]
            if not rpa.alive or r in self.assignment.retired:
                continue
            children = self.assignment.clusters_of(r)
            policy = rpa.holder.effective(None, r) or self.sc.policy
            report, own, failed = rpa.close(k, self.W, now, children, policy)
            for f in own:
                self._finding("regional", f)
            if self.hierarchical:
                for f in list(own) + [f for c in report.children for f in c.findings if f.actionable]:
                    self._route_down(f, r, now)
            for c in failed:
                self._takeover(c, r)
            self._backbone(r, self.base_id, Kind.REPORT, now,
                           lambda rep=report: self._base_receive(rep), tag=f"w{k}")

    def _base_receive(self, report: Report) -> None:
        self.base.receive(report, self.queue.now, self.W)
        if self.hierarchical:
            self.ledger.charge(self.base_id, "ids", self.costs.ids_mj)
        for ev in self.failovers:
            if ev.first_report_at is None and ev.role is Role.REGIONAL and ev.takeover == report.from_agent \
                    and set(ev.adopted) & set(report.covers):
                ev.first_report_at = self.queue.now

    def _close_base(self, k: int) -> None:
        now = self.queue.now
        regionals = [r for r in self.regionals if r not in self.assignment.retired]
        reports, own, failed = self.base.close(k, self.W, now, regionals)
        for f in own:
            self._finding("base", f)
        if self.hierarchical:
            for rep in reports:
                for f in rep.findings:
                    if f.actionable and self._needs_base_route(f, rep.from_agent):
                        self._route_down(f, None, now)
            for f in own:
                self._route_down(f, None, now)
        for r in failed:
            self._takeover(r, self.base_id)

        # global blacklist for newly malicious sensors
        banned = self.store.resolve(GLOBAL).record.blacklist
        fresh = sorted({rec.node for rep in reports for c in rep.children for rec in c.records
                        if rec.state is State.MALICIOUS and rec.node not in banned})
        for node in fresh:
            ps = self.store.idt_apply(IdtChange(Op.CREATE, "blacklist", node))
            self._log(now, "idt", self.base_id, None, op="Create", entity="blacklist", node=node, version=ps.version)
            self._disseminate(ps, now)

        # re-send to agents whose reports show an older policy than the repository
        for rep in reports:
            for child in rep.children:
                lpa = self.lpas.get(child.from_agent)
                if lpa is None or not lpa.alive:
                    continue
                held = dict(child.policy_versions)
                for scope in lpa.needed_scopes():
                    if scope not in self.store.latest:
                        continue
                    ps = self.store.latest[scope]
                    if held.get(str(scope), 0) < ps.version and ps.version > lpa.holder.version(scope):
                        parent = self.assignment.parent_of(lpa.node)
                        self._log(now, "policy_resend", self.base_id, None, to=lpa.node, scope=str(scope))
                        self._send_policy(ps, [(self.base_id, parent), (parent, lpa.node)], now)

    def _needs_base_route(self, f: Finding, reporting_rpa: int) -> bool:
        if f.accused not in self.topo.nodes or self.topo.nodes[f.accused].role is not Role.SENSOR:
            return False
        owner = self.assignment.lpa_of_sensor(self.topo, f.accused)
        return self.assignment.parent_of(owner) != reporting_rpa

    # -- failures and failover ----------------------------------------------

    def _kill(self, node: int) -> None:
        now = self.queue.now
        if node in self.assignment.dead:
            return
        self.assignment.dead.add(node)
        self.killed[node] = now
        if node in self.lpas:
            self.lpas[node].alive = False
            self.radio.dead.add(node)
        if node in self.rpas:
            self.rpas[node].alive = False
        self._log(now, "kill", node, None, role=self.topo.nodes[node].role.value)

    def _takeover(self, failed: int, selector: int) -> None:
        now = self.queue.now
        role = self.topo.nodes[failed].role
        if failed in self.assignment.retired:
            return
        if role is Role.CLUSTER and failed not in self.assignment.dead:
            # a compromised but running cluster node is treated as failed
            self.lpas[failed].alive = False
            self.assignment.dead.add(failed)
        re = takeover(self.topo, self.assignment, failed)
        self._log(now, "failover", selector, None, failed=failed, takeover=re.takeover if re.takeover else "-",
                  role=role.value, sensors=len(re.sensors))
        ev = FailoverEvent(failed, role, self.killed.get(failed), now, selector, re.takeover,
                           re.sensors if role is Role.CLUSTER else re.clusters)
        self.failovers.append(ev)
        if re.takeover is None:
            self.orphans.update(re.sensors)
            self._finding("regional" if role is Role.CLUSTER else "base",
                          Finding(now, failed, "Failover", Severity.DANGER, "Orphaned", observed=len(re.sensors),
                                  culprit=failed, agent=selector))
            if role is Role.CLUSTER:
                self._backbone(selector, self.base_id, Kind.ALERT, now, lambda: None, tag=f"orphaned:{failed}")
            return
        heir = re.takeover
        if role is Role.CLUSTER:
            rpa = self.rpas[selector]
            rpa.unwatch(failed)
            lpa = self.lpas[heir]
            old = self.lpas[failed]
            records = {s: rpa.mirror.get(s) or old.records[s] for s in re.sensors}
            ev.before.update({s: old.records[s] for s in re.sensors})
            lpa.admit_cells(re.cells, {s: self.topo.nodes[s].cell for s in re.sensors}, records, now)
            ev.after.update({s: lpa.records[s] for s in re.sensors})
            lpa.rssi.reinit(re.sensors, heir)
            lpa.learner.forget(re.sensors)
            scopes = [Scope("Cluster", failed), Scope("Region", self.topo.region_of[failed])]
            for ps, path in resupply(self.store, heir, scopes, via=self.assignment.parent_of(heir),
                                     base=self.base_id):
                self._send_policy(ps, path, now, resupply_=True)
            self._new_epoch()
        else:
            self.base.unwatch(failed)
            heir_rpa = self.rpas[heir]
            ev.before.update({s: self.record(s) for s in re.sensors})
            for c in re.clusters:
                heir_rpa.watch(c)
            for c in re.clusters:
                lpa = self.lpas[c]
                for rep in lpa.outbox:
                    self._send_report(c, heir, rep, now)
                lpa.outbox.clear()
            scopes = [Scope("Region", failed)] + [Scope("Cluster", c) for c in re.clusters]
            for ps, path in resupply(self.store, heir, scopes, via=None, base=self.base_id):
                self._send_policy(ps, path, now, resupply_=True)
                for c in re.clusters:
                    if self.lpas[c].alive and self._in_scope(self.lpas[c], ps.scope):
                        self._send_policy(ps, [(self.base_id, heir), (heir, c)], now, resupply_=True)
            ev.after.update({s: self.record(s) for s in re.sensors})

    # -- scripted events -----------------------------------------------------

    def _relocate(self, node: int, x: float, y: float) -> None:
        self.topo = self.topo.relocated(node, (x, y))
        self.radio.set_topology(self.topo)
        self._log(self.queue.now, "relocate", node, None, x=x, y=y)
        self._new_epoch(topo=self.topo)

    def _apply_change(self, change: IdtChange) -> None:
        result = self.store.idt_apply(change)
        self._log(self.queue.now, "idt", self.base_id, None, op=change.op.value, entity=change.entity,
                  scope=str(change.scope), version=getattr(result, "version", "-"))
        if change.op is not Op.EXAMINE:
            self._disseminate(result, self.queue.now)

    # -- driver --------------------------------------------------------------

    def _schedule(self) -> None:
        sc = self.sc
        self._at(0, "disseminate", self.base_id, lambda: self._disseminate(self.store.resolve(GLOBAL), 0))
        for scope in sorted(self.store.latest):
            if scope != GLOBAL:
                self._at(0, "disseminate", self.base_id, lambda s=scope: self._disseminate(self.store.latest[s], 0))
        self._at(0, "period", -1, lambda: self._period_tick(0))
        for spec, state in self.gen_states:
            if spec.start < sc.duration:
                self._at(spec.start, "attack_tick", spec.attacker,
                         lambda spec=spec, state=state: self._attack_tick(spec, state, spec.start))
        for f in sc.failures:
            self._at(f.at, "kill", f.node, lambda n=f.node: self._kill(n))
        for r in sc.relocations:
            self._at(r.at, "relocate", r.node, lambda r=r: self._relocate(r.node, r.x, r.y))
        for c in sc.policy_changes:
            self._at(c.at, "idt", self.base_id, lambda c=c: self._apply_change(c.change))
        for k in range(sc.duration // self.W):
            edge = (k + 1) * self.W
            self._at(edge + LPA_CLOSE, "close_cluster", -1, lambda k=k: self._close_lpas(k))
            self._at(edge + RPA_CLOSE, "close_regional", -1, lambda k=k: self._close_rpas(k))
            self._at(edge + BASE_CLOSE, "close_base", -1, lambda k=k: self._close_base(k))

    def run(self) -> "Simulation":
        if self._ran:
            raise RuntimeError("a Simulation runs once; build a new one")
        self._ran = True
        self._schedule()
        self.queue.run()
        self._charge_idle()
        self.check_invariants()
        return self

    def _charge_idle(self) -> None:
        end = self.sc.duration
        for nid in sorted(self.topo.nodes):
            alive_for = self.killed.get(nid, end)
            if alive_for > 0:
                self.ledger.charge(nid, "idle", alive_for * self.costs.idle_mj_per_ms)

    # -- checks --------------------------------------------------------------

    def check_invariants(self) -> None:
        total = self.ledger.total()
        if not math.isclose(total, self.ledger.charged_total, rel_tol=1e-9, abs_tol=1e-9):
            raise InvariantViolation(f"energy ledger total {total} != sum of charges {self.ledger.charged_total}")
        owners: Dict[int, int] = {}
        for cid, lpa in self.lpas.items():
            if not lpa.alive:
                continue
            for s in lpa.records:
                if self.assignment.lpa_of_sensor(self.topo, s) != cid:
                    continue
                if s in owners:
                    raise InvariantViolation(f"sensor {s} is monitored by both {owners[s]} and {cid}")
                owners[s] = cid
        for s in self.sensors:
            owner = self.assignment.lpa_of_sensor(self.topo, s)
            if s not in self.orphans and self.lpas[owner].alive and s not in self.lpas[owner].records:
                raise InvariantViolation(f"sensor {s} has no record at its monitor {owner}")
        for node, since, until in self._ban_log:
            for t in self._tx_times.get(node, ()):
                if since < t <= until:
                    raise InvariantViolation(f"suspect {node} transmitted at {t} during its ban")

    # -- results -------------------------------------------------------------

    def final_states(self) -> Dict[int, State]:
        return {s: self.record(s).state for s in self.sensors}

    def trace_text(self) -> str:
        return "\n".join(self.trace) + "\n"


def _fmt(v: object) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v) or "-"
    return str(v)
