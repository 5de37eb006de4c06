"""Discrete-event core: event queue, radio model, MAC schedules, energy.

Time is integer milliseconds throughout. The queue fires events in
``(time, insertion sequence)`` order, which keeps every run reproducible.
"""

from __future__ import annotations

import enum
import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

from .topology import Role, Topology

BROADCAST = -1
HOP_DELAY_MS = 2


class SimError(RuntimeError):
    pass


# -- event queue -------------------------------------------------------------


@dataclass
class Event:
    kind: str
    actor: int
    action: Optional[Callable[[], None]] = None
    seq: Optional[int] = None  # packet seq, for the trace


class EventQueue:
    def __init__(self) -> None:
        self._heap: List[Tuple[int, int, Event]] = []
        self._counter = 0
        self.now = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time: int, event: Event) -> None:
        if time < self.now:
            raise SimError(f"event {event.kind} at t={time} is before the clock (t={self.now})")
        heapq.heappush(self._heap, (time, self._counter, event))
        self._counter += 1

    def pop(self) -> Tuple[int, Event]:
        time, _, event = heapq.heappop(self._heap)
        self.now = time
        return time, event

    def peek_time(self) -> Optional[int]:
        return self._heap[0][0] if self._heap else None

    def run(self, until: Optional[int] = None, on_fire: Optional[Callable[[int, Event], None]] = None) -> int:
        """Fire events (including ones scheduled while firing) up to ``until`` inclusive."""
        fired = 0
        while self._heap and (until is None or self._heap[0][0] <= until):
            time, event = self.pop()
            if on_fire is not None:
                on_fire(time, event)
            if event.action is not None:
                event.action()
            fired += 1
        return fired


def schedule_event(queue: EventQueue, time: int, event: Event) -> None:
    queue.schedule(time, event)


# -- packets -----------------------------------------------------------------


class Kind(str, enum.Enum):
    DATA = "Data"
    HELLO = "Hello"
    ROUTE_ADVERT = "RouteAdvert"
    REPORT = "Report"
    HEARTBEAT = "Heartbeat"
    POLICY_UPDATE = "PolicyUpdate"
    ALERT = "Alert"


@dataclass(frozen=True)
class Packet:
    claimed_src: int
    true_src: int
    dst: int
    kind: Kind
    hop_trace: Tuple[int, ...]
    sent_at: int
    seq: int
    payload_tag: str = ""
    next_hop: int = BROADCAST  # link-layer addressee of the current hop
    route: Tuple[int, ...] = ()  # path planned by the originator
    body: object = None  # reports / policy sets riding on backbone packets

    @property
    def spoofed(self) -> bool:
        return self.claimed_src != self.true_src

    @property
    def transmitter(self) -> int:
        return self.hop_trace[-1]


# -- radio -------------------------------------------------------------------


@dataclass(frozen=True)
class RadioModel:
    tx_power: float = 0.0  # dBm
    ref_loss_pl0: float = 40.0  # dB at ref_distance
    ref_distance: float = 1.0  # m
    path_loss_exp: float = 2.5
    range: float = 35.0  # m
    noise_floor: float = -100.0  # dBm

    def validate(self) -> None:
        if self.path_loss_exp < 1:
            raise ValueError("path_loss_exp must be >= 1")
        if not self.range > 0:
            raise ValueError("range must be > 0")
        if not self.ref_distance > 0:
            raise ValueError("ref_distance must be > 0")


def rssi_at(model: RadioModel, distance: float, tx_power: Optional[float] = None) -> float:
    """Log-distance received power in dBm, floored at the noise floor."""
    if not distance > 0:
        raise ValueError(f"distance must be > 0, got {distance!r}")
    power = model.tx_power if tx_power is None else tx_power
    loss = model.ref_loss_pl0 + 10.0 * model.path_loss_exp * math.log10(distance / model.ref_distance)
    return max(power - loss, model.noise_floor)


def boosted_power(model: RadioModel, range_factor: float) -> float:
    """Transmit power that stretches the radio range by ``range_factor``."""
    return model.tx_power + 10.0 * model.path_loss_exp * math.log10(range_factor)


# -- MAC schedules -----------------------------------------------------------


@dataclass(frozen=True)
class TdmaSchedule:
    slot_len: int
    slots: Tuple[int, ...]  # slot index -> owner

    def __post_init__(self) -> None:
        if self.slot_len <= 0 or not self.slots:
            raise ValueError("TDMA schedule needs slot_len > 0 and at least one slot")

    @property
    def frame_len(self) -> int:
        return self.slot_len * len(self.slots)

    def slots_of(self, node: int) -> List[int]:
        return [i for i, owner in enumerate(self.slots) if owner == node]

    @classmethod
    def round_robin(cls, members: Sequence[int], slot_len: int) -> "TdmaSchedule":
        return cls(slot_len, tuple(sorted(members)))


def slot_owner(s: TdmaSchedule, at: int) -> int:
    return s.slots[(at % s.frame_len) // s.slot_len]


@dataclass(frozen=True)
class SmacSchedule:
    period: int
    awake: Dict[int, Tuple[int, int]]  # node -> (offset, duration)

    def __post_init__(self) -> None:
        for node, (offset, duration) in self.awake.items():
            if not 0 < duration <= self.period:
                raise ValueError(f"node {node}: awake duration must be in (0, period]")
            if not 0 <= offset < self.period:
                raise ValueError(f"node {node}: awake offset must be in [0, period)")


def is_asleep(s: SmacSchedule, node: int, at: int) -> bool:
    try:
        offset, duration = s.awake[node]
    except KeyError:
        raise KeyError(f"node {node} has no S-MAC schedule entry") from None
    phase = (at - offset) % s.period
    return phase >= duration


# -- energy ------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyCosts:
    tx_mj: float = 0.05
    rx_mj: float = 0.02
    idle_mj_per_ms: float = 0.001
    ids_mj: float = 0.005


ENERGY_COMPONENTS = ("tx", "rx", "idle", "ids")


class EnergyLedger:
    def __init__(self) -> None:
        self._by_node: Dict[int, Dict[str, float]] = {}
        self.charges = 0
        self.charged_total = 0.0

    def charge(self, node: int, component: str, amount: float) -> None:
        if component not in ENERGY_COMPONENTS:
            raise ValueError(f"unknown energy component {component!r}")
        if amount < 0:
            raise ValueError("energy charges are non-negative")
        entry = self._by_node.setdefault(node, dict.fromkeys(ENERGY_COMPONENTS, 0.0))
        entry[component] += amount
        self.charges += 1
        self.charged_total += amount

    def node(self, node: int) -> Dict[str, float]:
        return dict(self._by_node.get(node, dict.fromkeys(ENERGY_COMPONENTS, 0.0)))

    def nodes(self) -> List[int]:
        return sorted(self._by_node)

    def total(self, component: Optional[str] = None, nodes: Optional[Iterable[int]] = None) -> float:
        keys = self._by_node if nodes is None else [n for n in nodes if n in self._by_node]
        comps = ENERGY_COMPONENTS if component is None else (component,)
        return math.fsum(self._by_node[n][c] for n in keys for c in comps)


# -- jamming -----------------------------------------------------------------


@dataclass(frozen=True)
class Jammer:
    node: int
    range: float
    corruption_prob: float
    start: int
    stop: int
    duty: float = 0.9

    def active(self, at: int) -> bool:
        return self.start <= at < self.stop


@dataclass(frozen=True)
class Reception:
    receiver: int
    packet: Packet
    rssi: float
    corrupted: bool
    at: int


class Radio:
    """Shared sensor channel: who hears a transmission, and at what power."""

    def __init__(
        self,
        topo: Topology,
        model: RadioModel,
        ledger: EnergyLedger,
        costs: EnergyCosts,
        rng: random.Random,
    ) -> None:
        self.topo = topo
        self.model = model
        self.ledger = ledger
        self.costs = costs
        self.rng = rng
        self.dead: Set[int] = set()
        self.jammers: List[Jammer] = []
        self._radio_nodes = [n.id for n in sorted(topo.nodes.values(), key=lambda n: n.id)
                             if n.role in (Role.SENSOR, Role.CLUSTER)]

    def set_topology(self, topo: Topology) -> None:
        self.topo = topo

    def jammed(self, receiver: int, at: int) -> Optional[int]:
        """Id of the first active jammer corrupting a reception at ``receiver``, if any."""
        pos = self.topo.nodes[receiver].pos
        for j in self.jammers:
            if j.active(at) and j.node not in self.dead and j.node != receiver:
                if math.dist(pos, self.topo.nodes[j.node].pos) <= j.range:
                    if self.rng.random() < j.corruption_prob:
                        return j.node
        return None

    def hearers(self, sender: int, range_factor: float = 1.0) -> List[int]:
        if range_factor == 1.0:
            candidates: Iterable[int] = self.topo.links(sender)
        else:
            reach = self.model.range * range_factor
            spos = self.topo.nodes[sender].pos
            candidates = [n for n in self._radio_nodes
                          if n != sender and math.dist(spos, self.topo.nodes[n].pos) <= reach]
        return [n for n in candidates if n not in self.dead]

    def transmit(
        self,
        pkt: Packet,
        sender: int,
        at: int,
        range_factor: float = 1.0,
        permitted: bool = True,
    ) -> List[Reception]:
        """Receptions at every alive in-range node, arriving ``HOP_DELAY_MS`` later.

        A suppressed sender (``permitted`` false) puts nothing on the air.
        Energy is charged here: tx to the sender, rx to each receiver.
        """
        if sender in self.dead or not permitted:
            return []
        arrive = at + HOP_DELAY_MS
        power = boosted_power(self.model, range_factor) if range_factor != 1.0 else None
        self.ledger.charge(sender, "tx", self.costs.tx_mj)
        out = []
        for r in self.hearers(sender, range_factor):
            d = max(self.topo.distance(sender, r), 1e-6)
            corrupted = self.jammed(r, arrive) is not None
            self.ledger.charge(r, "rx", self.costs.rx_mj)
            out.append(Reception(r, pkt, rssi_at(self.model, d, power), corrupted, arrive))
        return out
