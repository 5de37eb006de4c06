"""Five-class intrusion response for sensor nodes.

Every sensor is held in one of Fresh, Member, Unstable, Suspect or
Malicious by the local agent that monitors it. ``step`` is called once per
closed window with that window's verdict; ``permit`` answers what a class
may do on the air.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, Optional, Tuple


class State(str, enum.Enum):
    FRESH = "Fresh"
    MEMBER = "Member"
    UNSTABLE = "Unstable"
    SUSPECT = "Suspect"
    MALICIOUS = "Malicious"


class Verdict(str, enum.Enum):
    GOOD = "Good"
    MISBEHAVED = "Misbehaved"


class Action(str, enum.Enum):
    ORIGINATE = "Originate"
    FORWARD = "Forward"
    RECEIVE = "Receive"


class AdmissionError(ValueError):
    pass


class Blacklisted(AdmissionError):
    """A banished node id tried to (re)join."""


@dataclass(frozen=True)
class ResponseParams:
    """Timers are in windows; ``flip_limit`` is K."""

    window_ms: int = 1000
    t_fresh: int = 5
    t_unstable_obs: int = 5
    flip_limit: int = 3
    t_ban: int = 10
    t_suspect_obs: int = 10
    t_mis: int = 5
    flip_window: int = 20

    def validate(self) -> None:
        for name in ("window_ms", "t_fresh", "t_unstable_obs", "t_ban", "t_suspect_obs", "t_mis", "flip_window"):
            if getattr(self, name) <= 0:
                raise ValueError(f"response timer {name} must be > 0")
        if self.flip_limit < 1:
            raise ValueError("flip_limit must be >= 1")


@dataclass(frozen=True)
class NodeClassRecord:
    node: int
    state: State
    entered_at: int
    flip_times: Tuple[int, ...] = ()
    misbehavior_streak: int = 0
    good_streak: int = 0
    ban_until: Optional[int] = None

    @property
    def flip_count(self) -> int:
        return len(self.flip_times)


# Fresh and Unstable nodes may relay and listen but not inject their own traffic.
_PERMISSIONS: Dict[State, FrozenSet[Action]] = {
    State.FRESH: frozenset({Action.FORWARD, Action.RECEIVE}),
    State.MEMBER: frozenset({Action.ORIGINATE, Action.FORWARD, Action.RECEIVE}),
    State.UNSTABLE: frozenset({Action.FORWARD, Action.RECEIVE}),
    State.SUSPECT: frozenset(),
    State.MALICIOUS: frozenset(),
}


def permit(rec: NodeClassRecord, action: Action) -> bool:
    return action in _PERMISSIONS[rec.state]


def on_probation(rec: NodeClassRecord, now: int) -> bool:
    """A Suspect whose ban has run out is reconnected for close observation."""
    return rec.state is State.SUSPECT and rec.ban_until is not None and now > rec.ban_until


def may(rec: NodeClassRecord, action: Action, now: int) -> bool:
    """Permission actually enforced on the air at time ``now``.

    Identical to ``permit`` except during Suspect probation, where the node
    gets Unstable rights so its behaviour can be observed again.
    """
    if on_probation(rec, now):
        return action in _PERMISSIONS[State.UNSTABLE]
    return permit(rec, action)


def isolated(rec: NodeClassRecord, now: int) -> bool:
    return rec.state is State.MALICIOUS or (rec.state is State.SUSPECT and not on_probation(rec, now))


def admit(
    registry: Dict[int, NodeClassRecord],
    node: int,
    at: int,
    blacklist: Iterable[int] = (),
) -> NodeClassRecord:
    if node in set(blacklist):
        raise Blacklisted(f"node {node} is blacklisted")
    if node in registry:
        raise AdmissionError(f"node {node} is already admitted")
    rec = NodeClassRecord(node=node, state=State.FRESH, entered_at=at)
    registry[node] = rec
    return rec


def _enter(rec: NodeClassRecord, state: State, now: int, **changes) -> NodeClassRecord:
    return replace(rec, state=state, entered_at=now, **changes)


def _to_suspect(rec: NodeClassRecord, now: int, p: ResponseParams) -> NodeClassRecord:
    return _enter(
        rec, State.SUSPECT, now,
        flip_times=(), misbehavior_streak=0, good_streak=0,
        ban_until=now + p.t_ban * p.window_ms,
    )


def step(rec: NodeClassRecord, verdict: Verdict, now: int, params: ResponseParams) -> NodeClassRecord:
    """Advance one record by one closed window ending at ``now``."""
    p = params
    bad = verdict is Verdict.MISBEHAVED
    horizon = now - p.flip_window * p.window_ms
    flips = tuple(t for t in rec.flip_times if t > horizon)
    if flips != rec.flip_times:
        rec = replace(rec, flip_times=flips)

    if rec.state is State.MALICIOUS:
        return rec

    if rec.state is State.FRESH:
        if bad:
            return _to_suspect(rec, now, p)
        if now - rec.entered_at >= p.t_fresh * p.window_ms:
            return _enter(rec, State.MEMBER, now, good_streak=0, misbehavior_streak=0)
        return rec

    if rec.state is State.MEMBER:
        if not bad:
            return rec
        rec = _enter(rec, State.UNSTABLE, now, flip_times=flips + (now,), misbehavior_streak=1, good_streak=0)
        if rec.flip_count >= p.flip_limit or rec.misbehavior_streak >= p.t_mis:
            return _to_suspect(rec, now, p)
        return rec

    if rec.state is State.UNSTABLE:
        if bad:
            rec = replace(rec, misbehavior_streak=rec.misbehavior_streak + 1, good_streak=0)
            if rec.flip_count >= p.flip_limit or rec.misbehavior_streak >= p.t_mis:
                return _to_suspect(rec, now, p)
            return rec
        rec = replace(rec, good_streak=rec.good_streak + 1)
        if rec.good_streak >= p.t_unstable_obs:
            return _enter(rec, State.MEMBER, now, flip_times=flips + (now,), misbehavior_streak=0, good_streak=0)
        return rec

    # Suspect: verdicts are ignored while banned, then one bad window is final.
    if not on_probation(rec, now):
        return rec
    if bad:
        return _enter(rec, State.MALICIOUS, now, good_streak=0)
    rec = replace(rec, good_streak=rec.good_streak + 1)
    if rec.good_streak >= p.t_suspect_obs:
        return _enter(rec, State.UNSTABLE, now, misbehavior_streak=0, good_streak=0, ban_until=None)
    return rec


def blacklist(record_db, node: int):
    """Add a banished node's id to a Signature Record; re-adding is a no-op."""
    if node in record_db.blacklist:
        return record_db
    return record_db.with_blacklisted(node)
