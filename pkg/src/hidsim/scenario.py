"""Scenario files: YAML in, validated ``Scenario`` out.

Every mapping is parsed strictly; an unknown key is a configuration error
that names its path, e.g. ``attacks[1].ratee``. Node ids are checked only
after the topology is built, because ids depend on the layout.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml

from .attacks import AttackKind, AttackSpec
from .policy import IdtChange, Op, PolicyError, PolicySet, Scope, policy_from_dict
from .simcore import EnergyCosts, RadioModel
from .topology import Role, Topology, TopologyConfig, TopologyError

MODES = ("hierarchical", "every_sensor")


class ConfigError(ValueError):
    """Scenario file is malformed or references something that does not exist."""


@dataclass(frozen=True)
class Schedules:
    slot_len: int = 20  # ms per TDMA slot
    smac_period: Optional[int] = None  # ms; defaults to a quarter of the window

    def validate(self) -> None:
        if self.slot_len <= 0:
            raise ConfigError("schedules.slot_len: must be > 0")
        if self.smac_period is not None and self.smac_period <= 0:
            raise ConfigError("schedules.smac_period: must be > 0")


@dataclass(frozen=True)
class Failure:
    node: int
    at: int


@dataclass(frozen=True)
class Relocation:
    node: int
    at: int
    x: float
    y: float


@dataclass(frozen=True)
class TimedChange:
    at: int
    change: IdtChange


@dataclass(frozen=True)
class Scenario:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    radio: RadioModel = field(default_factory=RadioModel)
    schedules: Schedules = field(default_factory=Schedules)
    energy: EnergyCosts = field(default_factory=EnergyCosts)
    policy: PolicySet = field(default_factory=PolicySet)
    attacks: Tuple[AttackSpec, ...] = ()
    failures: Tuple[Failure, ...] = ()
    relocations: Tuple[Relocation, ...] = ()
    policy_changes: Tuple[TimedChange, ...] = ()
    duration: int = 60_000
    seed: int = 0
    mode: str = "hierarchical"

    @property
    def window_ms(self) -> int:
        return self.policy.response.window_ms

    @property
    def smac_period(self) -> int:
        return self.schedules.smac_period or self.window_ms // 4

    def validate(self) -> None:
        """Checks that need no topology."""
        try:
            self.topology.validate()
            self.radio.validate()
            self.policy.validate()
        except (TopologyError, PolicyError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.schedules.validate()
        if self.mode not in MODES:
            raise ConfigError(f"mode: expected one of {', '.join(MODES)}, got {self.mode!r}")
        warmup = self.policy.profile.warmup_windows * self.window_ms
        if self.duration <= warmup:
            raise ConfigError(f"duration: {self.duration} ms must exceed the warm-up ({warmup} ms)")
        frame = self.schedules.slot_len * self.topology.sensors_per_cell
        if frame > self.smac_period:
            raise ConfigError(
                f"schedules: TDMA frame ({frame} ms) must fit in the S-MAC period ({self.smac_period} ms)")
        if self.window_ms % self.smac_period:
            raise ConfigError("schedules.smac_period: must divide the window length")
        for i, spec in enumerate(self.attacks):
            try:
                spec.validate()
            except ValueError as exc:
                raise ConfigError(f"attacks[{i}]: {exc}") from exc
        for name, items in (("failures", self.failures), ("relocations", self.relocations),
                            ("policy_changes", self.policy_changes)):
            for i, item in enumerate(items):
                if not 0 <= item.at < self.duration:
                    raise ConfigError(f"{name}[{i}].at: must be within [0, duration)")

    def check_ids(self, topo: Topology) -> None:
        """Reject node references that do not exist in the built topology."""
        def need(nid: Optional[int], path: str, roles: Sequence[Role]) -> None:
            if nid is None:
                return
            node = topo.nodes.get(nid)
            if node is None:
                raise ConfigError(f"{path}: node {nid} does not exist")
            if node.role not in roles:
                allowed = "/".join(r.value for r in roles)
                raise ConfigError(f"{path}: node {nid} is a {node.role.value}, expected {allowed}")

        radio_nodes = (Role.SENSOR, Role.CLUSTER)
        for i, spec in enumerate(self.attacks):
            p = f"attacks[{i}]"
            need(spec.attacker, f"{p}.attacker", radio_nodes)
            need(spec.peer, f"{p}.peer", (Role.SENSOR,))
            need(spec.target, f"{p}.target", radio_nodes)
            need(spec.misroute_to, f"{p}.misroute_to", (Role.SENSOR,))
        for i, f in enumerate(self.failures):
            need(f.node, f"failures[{i}].node", (Role.CLUSTER, Role.REGIONAL))
        for i, r in enumerate(self.relocations):
            need(r.node, f"relocations[{i}].node", (Role.SENSOR,))
        for i, nid in enumerate(sorted(self.policy.record.blacklist)):
            need(nid, f"policy.blacklist[{i}]", (Role.SENSOR,))


# -- parsing -----------------------------------------------------------------

_TOP_KEYS = ("topology", "radio", "schedules", "energy", "policy", "attacks", "failures",
             "relocations", "policy_changes", "duration_ms", "seed", "mode")


def _mapping(data: Any, path: str) -> Mapping[str, Any]:
    if data is None:
        return {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: expected a mapping")
    return data


def _seq(data: Any, path: str) -> List[Any]:
    if data is None:
        return []
    if not isinstance(data, list):
        raise ConfigError(f"{path}: expected a list")
    return data


def _strict(cls, data: Any, path: str, convert: Optional[Dict[str, Any]] = None):
    d = dict(_mapping(data, path))
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(f'{path}.{k}' for k in unknown)}")
    for key, fn in (convert or {}).items():
        if key in d and d[key] is not None:
            try:
                d[key] = fn(d[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{path}.{key}: {exc}") from exc
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _attack(d: Any, path: str) -> AttackSpec:
    def kind(v: Any) -> AttackKind:
        try:
            return AttackKind(v)
        except ValueError:
            raise ValueError(f"unknown attack kind {v!r}") from None

    return _strict(AttackSpec, d, path, {"kind": kind, "fake_ids": lambda v: tuple(int(x) for x in v)})


def _change(d: Any, path: str) -> TimedChange:
    d = dict(_mapping(d, path))
    unknown = sorted(set(d) - {"at", "op", "entity", "payload", "scope"})
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(f'{path}.{k}' for k in unknown)}")
    try:
        change = IdtChange(Op(d["op"]), d["entity"], d.get("payload"), Scope.parse(d.get("scope", "Global")))
        return TimedChange(int(d["at"]), change)
    except KeyError as exc:
        raise ConfigError(f"{path}: missing key {exc.args[0]!r}") from exc
    except (PolicyError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def scenario_from_dict(data: Any) -> Scenario:
    d = _mapping(data, "scenario")
    unknown = sorted(set(d) - set(_TOP_KEYS))
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    try:
        policy = policy_from_dict(_mapping(d.get("policy"), "policy"))
    except PolicyError as exc:
        raise ConfigError(str(exc)) from exc
    sc = Scenario(
        topology=_strict(TopologyConfig, d.get("topology"), "topology"),
        radio=_strict(RadioModel, d.get("radio"), "radio"),
        schedules=_strict(Schedules, d.get("schedules"), "schedules"),
        energy=_strict(EnergyCosts, d.get("energy"), "energy"),
        policy=policy,
        attacks=tuple(_attack(a, f"attacks[{i}]") for i, a in enumerate(_seq(d.get("attacks"), "attacks"))),
        failures=tuple(_strict(Failure, f, f"failures[{i}]")
                       for i, f in enumerate(_seq(d.get("failures"), "failures"))),
        relocations=tuple(_strict(Relocation, r, f"relocations[{i}]")
                          for i, r in enumerate(_seq(d.get("relocations"), "relocations"))),
        policy_changes=tuple(_change(c, f"policy_changes[{i}]")
                             for i, c in enumerate(_seq(d.get("policy_changes"), "policy_changes"))),
        duration=int(d.get("duration_ms", 60_000)),
        seed=int(d.get("seed", 0)),
        mode=str(d.get("mode", "hierarchical")),
    )
    sc.validate()
    return sc


def load_scenario(path: str) -> Scenario:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return scenario_from_dict(data)
