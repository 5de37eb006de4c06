"""Policy sets, the base station repository, and agent-side policy copies.

The base station (BPDP) is the only author of policy. Regional and local
agents hold scoped copies that arrive as PolicyUpdate packets travelling
strictly downward; a copy is applied at the next window boundary and a
version that is not newer than what an agent already has is dropped.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .agent import AnomalyProfile, Condition, RuleError, SignatureRecord, SignatureRule
from .detectors import DetectorParams
from .response import ResponseParams

class PolicyError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Scope:
    kind: str  # Global | Region | Cluster
    id: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in ("Global", "Region", "Cluster"):
            raise PolicyError(f"unknown scope kind {self.kind!r}")
        if (self.kind == "Global") != (self.id is None):
            raise PolicyError("Global scope takes no id; Region/Cluster scopes need one")

    @property
    def rank(self) -> int:
        return {"Global": 0, "Region": 1, "Cluster": 2}[self.kind]

    def __str__(self) -> str:
        return self.kind if self.id is None else f"{self.kind}:{self.id}"

    @classmethod
    def parse(cls, text: str) -> "Scope":
        kind, _, ident = str(text).partition(":")
        return cls(kind, int(ident) if ident else None)


GLOBAL = Scope("Global")


def default_rules() -> Tuple[SignatureRule, ...]:
    return (
        SignatureRule("flood", "Flooding", (Condition("pkt_count", ">", 12),)),
        SignatureRule("hello_flood", "HelloFlood", (Condition("hello_count", ">", 10),)),
        SignatureRule("replay", "Replay", (Condition("replays", ">", 0),)),
        SignatureRule("sinkhole", "SinkHole", (Condition("advert_count", ">", 0),)),
        SignatureRule("sybil", "Sybil", (Condition("distinct_cells_seen", ">=", 2),)),
    )


@dataclass(frozen=True)
class PolicySet:
    version: int = 1
    scope: Scope = GLOBAL
    record: SignatureRecord = field(default_factory=lambda: SignatureRecord(default_rules()))
    profile: AnomalyProfile = field(default_factory=AnomalyProfile)
    response: ResponseParams = field(default_factory=ResponseParams)
    detectors: DetectorParams = field(default_factory=DetectorParams)

    def validate(self) -> None:
        if self.version < 1:
            raise PolicyError("policy version must be >= 1")
        try:
            self.record.validate()
        except RuleError as exc:
            raise PolicyError(str(exc)) from exc
        self.profile.validate()
        self.response.validate()
        self.detectors.validate()


# -- serialisation (scenario files) -----------------------------------------


def _strict(cls, data: Mapping[str, Any], path: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise PolicyError(f"{path}: unknown field(s) {', '.join(unknown)}")
    return cls(**data)


def condition_from_dict(d: Mapping[str, Any], path: str = "condition") -> Condition:
    return _strict(Condition, d, path)


def rule_from_dict(d: Mapping[str, Any], path: str = "rule") -> SignatureRule:
    d = dict(d)
    unknown = sorted(set(d) - {"rule_id", "label", "conditions"})
    if unknown:
        raise PolicyError(f"{path}: unknown field(s) {', '.join(unknown)}")
    conds = tuple(condition_from_dict(c, f"{path}.conditions[{i}]") for i, c in enumerate(d.get("conditions", ())))
    rule = SignatureRule(str(d.get("rule_id", "")), str(d.get("label", "")), conds)
    try:
        rule.validate()
    except RuleError as exc:
        raise PolicyError(f"{path}: {exc}") from exc
    return rule


def rule_to_dict(r: SignatureRule) -> Dict[str, Any]:
    return {"rule_id": r.rule_id, "label": r.label,
            "conditions": [{"feature": c.feature, "op": c.op, "threshold": c.threshold} for c in r.conditions]}


def policy_to_dict(ps: PolicySet) -> Dict[str, Any]:
    return {
        "version": ps.version,
        "scope": str(ps.scope),
        "rules": [rule_to_dict(r) for r in ps.record.rules],
        "blacklist": sorted(ps.record.blacklist),
        "anomaly": {
            "k": ps.profile.k,
            "warmup_windows": ps.profile.warmup_windows,
            "thresholds": [{"feature": c.feature, "op": c.op, "threshold": c.threshold}
                           for c in ps.profile.thresholds],
        },
        "response": dataclasses.asdict(ps.response),
        "detectors": dataclasses.asdict(ps.detectors),
    }


def policy_from_dict(d: Mapping[str, Any], path: str = "policy") -> PolicySet:
    allowed = {"version", "scope", "rules", "blacklist", "anomaly", "response", "detectors"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise PolicyError(f"{path}: unknown field(s) {', '.join(unknown)}")
    base = PolicySet()
    record = base.record
    if "rules" in d:
        record = SignatureRecord(tuple(rule_from_dict(r, f"{path}.rules[{i}]") for i, r in enumerate(d["rules"])))
    if "blacklist" in d:
        record = replace(record, blacklist=frozenset(int(n) for n in d["blacklist"]))
    profile = base.profile
    if "anomaly" in d:
        a = dict(d["anomaly"])
        unknown = sorted(set(a) - {"k", "warmup_windows", "thresholds"})
        if unknown:
            raise PolicyError(f"{path}.anomaly: unknown field(s) {', '.join(unknown)}")
        thresholds = tuple(condition_from_dict(c, f"{path}.anomaly.thresholds[{i}]")
                           for i, c in enumerate(a.pop("thresholds", ())))
        profile = AnomalyProfile(thresholds=thresholds, **a)
    response = _strict(ResponseParams, d["response"], f"{path}.response") if "response" in d else base.response
    detectors = _strict(DetectorParams, d["detectors"], f"{path}.detectors") if "detectors" in d else base.detectors
    ps = PolicySet(
        version=int(d.get("version", 1)),
        scope=Scope.parse(d.get("scope", "Global")),
        record=record,
        profile=profile,
        response=response,
        detectors=detectors,
    )
    try:
        ps.validate()
    except (ValueError, RuleError) as exc:
        raise PolicyError(f"{path}: {exc}") from exc
    return ps


# -- the intrusion detection tool at the base station -----------------------


class Op(str, enum.Enum):
    CREATE = "Create"
    MODIFY = "Modify"
    DELETE = "Delete"
    EXAMINE = "Examine"


ENTITIES = ("rule", "blacklist", "anomaly", "response", "detectors")


@dataclass(frozen=True)
class IdtChange:
    op: Op
    entity: str
    payload: Any = None
    scope: Scope = GLOBAL

    def __post_init__(self) -> None:
        if self.entity not in ENTITIES:
            raise PolicyError(f"unknown policy entity {self.entity!r}")


class PolicyStore:
    """The BPDP's policy repository: latest set per scope, and its backup copy."""

    def __init__(self, initial: PolicySet, region_of: Optional[Mapping[int, int]] = None) -> None:
        initial.validate()
        self.latest: Dict[Scope, PolicySet] = {initial.scope: initial}
        self.region_of = dict(region_of or {})

    def resolve(self, scope: Scope) -> PolicySet:
        """Most specific set covering ``scope`` (Cluster beats Region beats Global)."""
        if scope in self.latest:
            return self.latest[scope]
        if scope.kind == "Cluster" and scope.id in self.region_of:
            region = Scope("Region", self.region_of[scope.id])
            if region in self.latest:
                return self.latest[region]
        return self.latest[GLOBAL]

    def idt_apply(self, change: IdtChange) -> Any:
        current = self.resolve(change.scope)
        if change.op is Op.EXAMINE:
            return self._examine(current, change)
        updated = self._mutate(current, change)
        version = self.latest[change.scope].version + 1 if change.scope in self.latest else 1
        updated = replace(updated, version=version, scope=change.scope)
        try:
            updated.validate()
        except (ValueError, RuleError) as exc:
            raise PolicyError(str(exc)) from exc
        self.latest[change.scope] = updated
        return updated

    @staticmethod
    def _examine(ps: PolicySet, change: IdtChange) -> Any:
        if change.entity == "rule":
            return ps.record.rule(change.payload) if change.payload is not None else ps.record.rules
        if change.entity == "blacklist":
            return ps.record.blacklist
        if change.entity == "anomaly":
            return ps.profile
        if change.entity == "response":
            return ps.response
        return ps.detectors

    @staticmethod
    def _mutate(ps: PolicySet, change: IdtChange) -> PolicySet:
        op, entity, payload = change.op, change.entity, change.payload
        record = ps.record
        if entity == "rule":
            if op is Op.DELETE:
                rule_id = payload if isinstance(payload, str) else payload["rule_id"]
                if rule_id not in {r.rule_id for r in record.rules}:
                    raise KeyError(f"no rule {rule_id!r} to delete")
                return replace(ps, record=replace(record, rules=tuple(r for r in record.rules if r.rule_id != rule_id)))
            rule = payload if isinstance(payload, SignatureRule) else rule_from_dict(payload)
            try:
                rule.validate()
            except RuleError as exc:
                raise PolicyError(str(exc)) from exc
            exists = rule.rule_id in {r.rule_id for r in record.rules}
            if op is Op.CREATE and exists:
                raise PolicyError(f"rule {rule.rule_id!r} already exists")
            if op is Op.MODIFY and not exists:
                raise KeyError(f"no rule {rule.rule_id!r} to modify")
            rules = tuple(r for r in record.rules if r.rule_id != rule.rule_id) + (rule,)
            return replace(ps, record=replace(record, rules=rules))
        if entity == "blacklist":
            node = int(payload)
            if op is Op.DELETE:
                if node not in record.blacklist:
                    raise KeyError(f"node {node} is not blacklisted")
                return replace(ps, record=replace(record, blacklist=record.blacklist - {node}))
            return replace(ps, record=record.with_blacklisted(node))
        if op is Op.DELETE:
            raise PolicyError(f"{entity} settings can be modified but not deleted")
        fields = dict(payload or {})
        if entity == "anomaly":
            if "thresholds" in fields:
                fields["thresholds"] = tuple(c if isinstance(c, Condition) else condition_from_dict(c)
                                             for c in fields["thresholds"])
            target = ps.profile
        else:
            target = ps.response if entity == "response" else ps.detectors
        known = {f.name for f in dataclasses.fields(target)}
        unknown = sorted(set(fields) - known)
        if unknown:
            raise PolicyError(f"{entity}: unknown field(s) {', '.join(unknown)}")
        new = replace(target, **fields)
        key = {"anomaly": "profile", "response": "response", "detectors": "detectors"}[entity]
        return replace(ps, **{key: new})


# -- agent-side copies -------------------------------------------------------


class PolicyHolder:
    """Scoped policy copies held by one RPA or LPA."""

    def __init__(self) -> None:
        self.held: Dict[Scope, PolicySet] = {}
        self.pending: Dict[Scope, PolicySet] = {}
        self.discarded = 0

    def version(self, scope: Scope) -> int:
        v = self.held.get(scope)
        p = self.pending.get(scope)
        return max(v.version if v else 0, p.version if p else 0)

    def offer(self, ps: PolicySet) -> bool:
        """Queue a copy for the next window boundary; stale versions are dropped."""
        if ps.version <= self.version(ps.scope):
            self.discarded += 1
            return False
        self.pending[ps.scope] = ps
        return True

    def apply_pending(self) -> List[PolicySet]:
        applied = [self.pending[s] for s in sorted(self.pending)]
        for ps in applied:
            self.held[ps.scope] = ps
        self.pending.clear()
        return applied

    def effective(self, cluster: Optional[int] = None, region: Optional[int] = None) -> Optional[PolicySet]:
        for scope in (Scope("Cluster", cluster) if cluster is not None else None,
                      Scope("Region", region) if region is not None else None,
                      GLOBAL):
            if scope is not None and scope in self.held:
                return self.held[scope]
        return None

    def versions(self) -> Tuple[Tuple[str, int], ...]:
        return tuple((str(s), self.held[s].version) for s in sorted(self.held))


def disseminate(
    ps: PolicySet,
    rpas: Iterable[int],
    lpas_of: Callable[[int], Iterable[int]],
    base: int = 0,
) -> List[Tuple[int, int]]:
    """Downward hop list for one policy set: base to every RPA, then each RPA to its LPAs."""
    hops: List[Tuple[int, int]] = []
    targets = sorted(set(rpas))
    for r in targets:
        hops.append((base, r))
    for r in targets:
        for lpa in sorted(set(lpas_of(r))):
            hops.append((r, lpa))
    return hops


def resupply(
    store: PolicyStore,
    takeover: int,
    failed_scopes: Sequence[Scope],
    via: Optional[int] = None,
    base: int = 0,
) -> List[Tuple[PolicySet, List[Tuple[int, int]]]]:
    """Policy sets the takeover node needs for the scopes it inherited, with their hop paths.

    Cluster takeovers go through the parent regional agent (``via``);
    regional takeovers are served directly by the base station.
    """
    out = []
    seen = set()
    for scope in failed_scopes:
        ps = store.resolve(scope)
        key = (ps.scope, ps.version)
        if key in seen:
            continue
        seen.add(key)
        path = [(base, via), (via, takeover)] if via is not None else [(base, takeover)]
        out.append((ps, path))
    return out
