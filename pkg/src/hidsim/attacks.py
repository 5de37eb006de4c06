"""Attacker behaviours injected into compromised nodes.

``on_forward`` decides what a compromised relay does with a packet it was
asked to pass on; ``on_generate`` lists the packets an attacker pushes onto
the air at one of its ticks. Ticks fire every ``1000 / rate`` ms inside
the active window; each emission is jittered to a random point of its tick
interval, so spoofed traffic lands in a random TDMA slot.
"""

from __future__ import annotations

import enum
import hashlib
import random
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Deque, List, Optional, Tuple, Union

from .simcore import BROADCAST, Kind, Packet


class AttackKind(str, enum.Enum):
    HELLO_FLOOD = "HelloFlood"
    SYBIL = "Sybil"
    WORMHOLE = "Wormhole"
    BLACK_HOLE = "BlackHole"
    SINK_HOLE = "SinkHole"
    SELECTIVE_FORWARDING = "SelectiveForwarding"
    BROADCAST_FLOOD = "BroadcastFlood"
    TARGET_FLOOD = "TargetFlood"
    FALSE_ID_BROADCAST_FLOOD = "FalseIdBroadcastFlood"
    FALSE_ID_TARGET_FLOOD = "FalseIdTargetFlood"
    MISDIRECTION = "Misdirection"
    JAMMING = "Jamming"
    REPLAY = "Replay"
    DATA_ALTERATION = "DataAlteration"


GENERATING = frozenset({
    AttackKind.HELLO_FLOOD, AttackKind.SYBIL, AttackKind.SINK_HOLE, AttackKind.BROADCAST_FLOOD,
    AttackKind.TARGET_FLOOD, AttackKind.FALSE_ID_BROADCAST_FLOOD, AttackKind.FALSE_ID_TARGET_FLOOD,
    AttackKind.REPLAY,
})
FORWARDING = frozenset({
    AttackKind.BLACK_HOLE, AttackKind.SINK_HOLE, AttackKind.SELECTIVE_FORWARDING,
    AttackKind.MISDIRECTION, AttackKind.WORMHOLE, AttackKind.DATA_ALTERATION,
})

REPLAY_BUFFER = 64


@dataclass(frozen=True)
class AttackSpec:
    kind: AttackKind
    attacker: int
    start: int
    stop: int
    peer: Optional[int] = None  # wormhole far end
    rate: float = 20.0  # emissions per second
    drop_ratio: float = 0.5
    match_tag: Optional[str] = None  # selective forwarding on payload tag instead of hash
    fake_ids: Tuple[int, ...] = ()
    target: Optional[int] = None
    misroute_to: Optional[int] = None
    corruption_prob: float = 0.8
    range_factor: float = 3.0  # hello-flood power boost, as a range multiple
    jam_range: Optional[float] = None  # metres; defaults to the radio range
    duty: float = 0.9  # fraction of air time a jammer keeps busy

    def validate(self) -> None:
        if not self.start < self.stop:
            raise ValueError(f"{self.kind.value}: start must be < stop")
        if self.start < 0:
            raise ValueError(f"{self.kind.value}: start must be >= 0")
        if self.kind in GENERATING and not self.rate > 0:
            raise ValueError(f"{self.kind.value}: rate must be > 0")
        if self.kind is AttackKind.SELECTIVE_FORWARDING and not 0 < self.drop_ratio <= 1:
            raise ValueError("selective forwarding drop_ratio must be in (0, 1]")
        if self.kind is AttackKind.WORMHOLE and self.peer is None:
            raise ValueError("wormhole needs a peer attacker")
        if self.kind in (AttackKind.SYBIL, AttackKind.FALSE_ID_BROADCAST_FLOOD,
                         AttackKind.FALSE_ID_TARGET_FLOOD) and not self.fake_ids:
            raise ValueError(f"{self.kind.value} needs at least one fake id")
        if self.kind in (AttackKind.TARGET_FLOOD, AttackKind.FALSE_ID_TARGET_FLOOD) and self.target is None:
            raise ValueError(f"{self.kind.value} needs a target")
        if self.kind is AttackKind.JAMMING and not 0 <= self.corruption_prob <= 1:
            raise ValueError("corruption_prob must be in [0, 1]")
        if self.range_factor < 1:
            raise ValueError("range_factor must be >= 1")

    @property
    def nodes(self) -> Tuple[int, ...]:
        return (self.attacker,) if self.peer is None else (self.attacker, self.peer)

    def active(self, at: int) -> bool:
        return self.start <= at < self.stop

    @property
    def interval(self) -> int:
        return max(1, int(round(1000.0 / self.rate)))


# -- forwarding actions ------------------------------------------------------


@dataclass(frozen=True)
class Forward:
    pass


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Modify:
    packet: Packet


@dataclass(frozen=True)
class Misroute:
    next: Optional[int]  # None: let the engine pick a distant neighbour


@dataclass(frozen=True)
class Tunnel:
    peer: int


ForwardAction = Union[Forward, Drop, Modify, Misroute, Tunnel]


def selection_value(seq: int) -> float:
    """Deterministic pseudo-uniform value in [0, 1) for a packet sequence number."""
    digest = hashlib.blake2b(seq.to_bytes(8, "big", signed=True), digest_size=8).digest()
    return int.from_bytes(digest, "big") / 2.0 ** 64


def on_forward(spec: AttackSpec, pkt: Packet, at: Optional[int] = None) -> ForwardAction:
    if at is not None and not spec.active(at):
        return Forward()
    kind = spec.kind
    if kind in (AttackKind.BLACK_HOLE, AttackKind.SINK_HOLE):
        return Drop()
    if kind is AttackKind.SELECTIVE_FORWARDING:
        if spec.match_tag is not None:
            return Drop() if pkt.payload_tag == spec.match_tag else Forward()
        return Drop() if selection_value(pkt.seq) < spec.drop_ratio else Forward()
    if kind is AttackKind.MISDIRECTION:
        return Misroute(spec.misroute_to)
    if kind is AttackKind.WORMHOLE:
        return Tunnel(spec.peer)  # type: ignore[arg-type]
    if kind is AttackKind.DATA_ALTERATION:
        return Modify(replace(pkt, payload_tag=f"{pkt.payload_tag}~altered"))
    return Forward()


# -- generated traffic -------------------------------------------------------


@dataclass(frozen=True)
class Emission:
    at: int
    claimed_src: int
    dst: int
    kind: Kind
    payload_tag: str = ""
    range_factor: float = 1.0
    replay_of: Optional[Packet] = None


@dataclass
class AttackerState:
    rng: random.Random
    rotation: int = 0
    heard: Deque[Packet] = field(default_factory=lambda: deque(maxlen=REPLAY_BUFFER))
    replay_cursor: int = 0

    def remember(self, pkt: Packet) -> None:
        self.heard.append(pkt)


def _next_fake(spec: AttackSpec, state: AttackerState) -> int:
    fake = spec.fake_ids[state.rotation % len(spec.fake_ids)]
    state.rotation += 1
    return fake


def on_generate(spec: AttackSpec, state: AttackerState, at: int) -> List[Emission]:
    """Packets due at the tick starting at ``at``."""
    if not spec.active(at) or spec.kind not in GENERATING:
        return []
    when = at + state.rng.randrange(spec.interval)
    me = spec.attacker
    kind = spec.kind
    if kind is AttackKind.HELLO_FLOOD:
        return [Emission(when, me, BROADCAST, Kind.HELLO, "hello", spec.range_factor)]
    if kind is AttackKind.BROADCAST_FLOOD:
        return [Emission(when, me, BROADCAST, Kind.DATA, "flood")]
    if kind is AttackKind.TARGET_FLOOD:
        return [Emission(when, me, spec.target, Kind.DATA, "flood")]  # type: ignore[arg-type]
    if kind is AttackKind.FALSE_ID_BROADCAST_FLOOD:
        return [Emission(when, _next_fake(spec, state), BROADCAST, Kind.DATA, "flood")]
    if kind is AttackKind.FALSE_ID_TARGET_FLOOD:
        return [Emission(when, _next_fake(spec, state), spec.target, Kind.DATA, "flood")]  # type: ignore[arg-type]
    if kind is AttackKind.SYBIL:
        dst = BROADCAST if spec.target is None else spec.target
        return [Emission(when, _next_fake(spec, state), dst, Kind.DATA, "sybil")]
    if kind is AttackKind.SINK_HOLE:
        return [Emission(when, me, BROADCAST, Kind.ROUTE_ADVERT, "hops=0")]
    if kind is AttackKind.REPLAY:
        if not state.heard:
            return []
        old = state.heard[state.replay_cursor % len(state.heard)]
        state.replay_cursor += 1
        return [Emission(when, old.claimed_src, old.dst, old.kind, old.payload_tag, replay_of=old)]
    return []
