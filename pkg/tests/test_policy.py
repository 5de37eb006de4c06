import pytest

import helpers as h
from hidsim.agent import Condition, Observation, SignatureRule
from hidsim.policy import (
    GLOBAL,
    IdtChange,
    Op,
    PolicyError,
    PolicyHolder,
    PolicySet,
    PolicyStore,
    Scope,
    disseminate,
    policy_from_dict,
    policy_to_dict,
    resupply,
)
from hidsim.response import NodeClassRecord, State
from hidsim.simcore import BROADCAST, Kind, Packet, SmacSchedule, TdmaSchedule
from hidsim.tiers import LocalAgent
from hidsim.topology import Role

RULE = SignatureRule("probe", "Probe", (Condition("pkt_count", ">", 99),))


def test_examine_is_idempotent():
    store = PolicyStore(PolicySet())
    a = store.idt_apply(IdtChange(Op.EXAMINE, "anomaly"))
    b = store.idt_apply(IdtChange(Op.EXAMINE, "anomaly"))
    assert a == b and store.resolve(GLOBAL).version == 1


def test_create_then_delete_restores_rules():
    store = PolicyStore(PolicySet())
    before = store.resolve(GLOBAL).record.rules
    store.idt_apply(IdtChange(Op.CREATE, "rule", RULE))
    assert store.idt_apply(IdtChange(Op.EXAMINE, "rule", "probe")) == RULE
    after = store.idt_apply(IdtChange(Op.DELETE, "rule", "probe"))
    assert after.record.rules == before and after.version == 3


def test_delete_unknown_rule_errors():
    with pytest.raises(KeyError):
        PolicyStore(PolicySet()).idt_apply(IdtChange(Op.DELETE, "rule", "nope"))


def test_malformed_rule_rejected():
    store = PolicyStore(PolicySet())
    bad = {"rule_id": "x", "label": "X", "conditions": [{"feature": "nope", "op": ">", "threshold": 1}]}
    with pytest.raises(PolicyError):
        store.idt_apply(IdtChange(Op.CREATE, "rule", bad))
    assert store.resolve(GLOBAL).version == 1


def test_duplicate_create_and_missing_modify():
    store = PolicyStore(PolicySet())
    store.idt_apply(IdtChange(Op.CREATE, "rule", RULE))
    with pytest.raises(PolicyError):
        store.idt_apply(IdtChange(Op.CREATE, "rule", RULE))
    with pytest.raises(KeyError):
        store.idt_apply(IdtChange(Op.MODIFY, "rule", SignatureRule("zz", "Z", RULE.conditions)))


def test_modify_settings_and_validation():
    store = PolicyStore(PolicySet())
    ps = store.idt_apply(IdtChange(Op.MODIFY, "response", {"t_ban": 20}))
    assert ps.response.t_ban == 20 and ps.version == 2
    with pytest.raises(PolicyError):
        store.idt_apply(IdtChange(Op.MODIFY, "response", {"t_ban": 0}))
    with pytest.raises(PolicyError):
        store.idt_apply(IdtChange(Op.MODIFY, "anomaly", {"sigma": 1}))
    with pytest.raises(PolicyError):
        store.idt_apply(IdtChange(Op.DELETE, "anomaly"))
    with pytest.raises(PolicyError):
        IdtChange(Op.MODIFY, "bogus")


def test_blacklist_entity():
    store = PolicyStore(PolicySet())
    assert store.idt_apply(IdtChange(Op.CREATE, "blacklist", 12)).record.blacklist == {12}
    assert store.idt_apply(IdtChange(Op.DELETE, "blacklist", 12)).record.blacklist == frozenset()
    with pytest.raises(KeyError):
        store.idt_apply(IdtChange(Op.DELETE, "blacklist", 12))


def test_scoped_versions_and_precedence():
    store = PolicyStore(PolicySet(), region_of={5: 1})
    store.idt_apply(IdtChange(Op.MODIFY, "anomaly", {"k": 2.5}, Scope("Region", 1)))
    assert store.resolve(Scope("Cluster", 5)).profile.k == 2.5
    assert store.resolve(Scope("Cluster", 6)).profile.k == 3.0
    c = store.idt_apply(IdtChange(Op.MODIFY, "anomaly", {"k": 2.0}, Scope("Cluster", 5)))
    assert c.version == 1 and store.resolve(Scope("Cluster", 5)).profile.k == 2.0
    assert store.idt_apply(IdtChange(Op.MODIFY, "anomaly", {"k": 1.5}, Scope("Cluster", 5))).version == 2


def test_scope_parsing():
    assert Scope.parse("Global") == GLOBAL
    assert Scope.parse("Cluster:4") == Scope("Cluster", 4)
    assert str(Scope("Region", 2)) == "Region:2"
    for bad in (("Global", 1), ("Region", None), ("Galaxy", None)):
        with pytest.raises(PolicyError):
            Scope(*bad)


def test_single_cluster_dissemination_two_hops():
    assert disseminate(PolicySet(), [1], lambda r: [2]) == [(0, 1), (1, 2)]


def test_dissemination_order():
    hops = disseminate(PolicySet(), [2, 1], {1: [4, 3], 2: [5]}.get)
    assert hops == [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5)]


def test_holder_drops_stale_versions():
    holder = PolicyHolder()
    assert holder.offer(PolicySet(version=6))
    assert not holder.offer(PolicySet(version=5))
    assert holder.discarded == 1
    assert holder.effective() is None  # nothing applied before the window boundary
    holder.apply_pending()
    assert holder.effective().version == 6
    assert not holder.offer(PolicySet(version=6))


def test_holder_precedence():
    holder = PolicyHolder()
    holder.offer(PolicySet(version=1))
    holder.offer(PolicySet(version=1, scope=Scope("Cluster", 3)))
    holder.apply_pending()
    assert holder.effective(cluster=3).scope == Scope("Cluster", 3)
    assert holder.effective(cluster=4, region=1).scope == GLOBAL
    assert holder.versions() == (("Cluster:3", 1), ("Global", 1))


def test_resupply_paths():
    store = PolicyStore(PolicySet())
    store.idt_apply(IdtChange(Op.MODIFY, "anomaly", {"k": 2.0}, Scope("Cluster", 5)))
    out = resupply(store, takeover=6, failed_scopes=[GLOBAL, Scope("Cluster", 5)], via=1)
    assert [(ps.scope, path) for ps, path in out] == [(GLOBAL, [(0, 1), (1, 6)]),
                                                      (Scope("Cluster", 5), [(0, 1), (1, 6)])]
    out = resupply(store, takeover=2, failed_scopes=[Scope("Region", 1), GLOBAL])
    assert [path for _, path in out] == [[(0, 2)]]  # region falls back to the Global set, sent once


def test_policy_dict_round_trip():
    ps = PolicySet(version=3, scope=Scope("Region", 2))
    assert policy_from_dict(policy_to_dict(ps)) == ps


def test_policy_dict_strict():
    with pytest.raises(PolicyError, match="policy.anomaly"):
        policy_from_dict({"anomaly": {"kk": 2}})
    with pytest.raises(PolicyError, match=r"policy.rules\[0\]"):
        policy_from_dict({"rules": [{"rule_id": "r", "label": "x", "conditions": [], "extra": 1}]})


# -- sensitivity change reaches an LPA's verdict ---------------------------


CELL = (0, 0)
SENSOR = 9


def _window(lpa, k, count, tdma, smac):
    for i in range(count):
        at = k * 1000 + 10 + i * 50
        pkt = Packet(SENSOR, SENSOR, 3, Kind.DATA, (SENSOR,), at, k * 100 + i)
        lpa.observe(Observation(at, pkt, SENSOR, -60.0, False, CELL), 1000, tdma, smac)
    return lpa.close(k, 1000, (k + 1) * 1000 + 10, {})


def test_sensitivity_change_flips_verdict():
    store = PolicyStore(PolicySet())
    lpa = LocalAgent(3, [CELL], {CELL: (3, 1)}, warmup_windows=10, forward_deadline=10)
    lpa.admit_cells([CELL], {SENSOR: CELL}, {SENSOR: NodeClassRecord(SENSOR, State.MEMBER, 0)}, now=0)
    lpa.holder.offer(store.resolve(GLOBAL))
    tdma = TdmaSchedule(20, (SENSOR,))
    smac = SmacSchedule(250, {SENSOR: (0, 250)})

    for k in range(10):  # baseline: alternating 2 and 6 packets -> mean 4, std 2
        _window(lpa, k, 2 if k % 2 == 0 else 6, tdma, smac)
    base = lpa.learner.frozen[(SENSOR, "pkt_count")]
    assert (base.mean, base.std) == (4.0, 2.0)
    assert lpa.records[SENSOR].state is State.MEMBER

    # 9 packets sit 2.5 sigma out: quiet under k = 3
    res = _window(lpa, 10, 9, tdma, smac)
    assert not [f for f in res.findings if f.actionable]
    assert lpa.records[SENSOR].state is State.MEMBER

    ps = store.idt_apply(IdtChange(Op.MODIFY, "anomaly", {"k": 2.0}))
    assert ps.profile.k == 2.0 and ps.version == 2
    hops = disseminate(ps, [1], lambda r: [3])
    assert hops[-1] == (1, 3)
    assert lpa.holder.offer(ps)

    res = _window(lpa, 11, 9, tdma, smac)
    flagged = {(f.detector, f.feature) for f in res.findings if f.actionable}
    # busy time tracks the packet count, so it sits at the same 2.5 sigma
    assert ("Anomaly", "pkt_count") in flagged and {d for d, _ in flagged} == {"Anomaly"}
    assert lpa.records[SENSOR].state is State.UNSTABLE


# -- whole-run properties --------------------------------------------------


@pytest.fixture(scope="module")
def mixed_run():
    return h.run(h.scenario(
        [{"kind": "BlackHole", "attacker": 20, "start": 20_000, "stop": 60_000}],
        failures=[{"node": 3, "at": 30_500}],
        policy_changes=[{"at": 30_000, "op": "Modify", "entity": "anomaly", "payload": {"k": 2.5}}],
    ))


def _rank(topo, n):
    # Role is ordered sensor -> cluster -> regional -> base
    return list(Role).index(topo.nodes[n].role)


def test_policy_only_flows_down(mixed_run):
    sim = mixed_run
    lines = [l.split("\t") for l in sim.trace_text().splitlines()]
    hops = [(int(dict(kv.split("=", 1) for kv in l[4].split())["sender"]), int(l[2]))
            for l in lines if l[1] == "policy"]
    assert hops
    assert all(_rank(sim.topo, a) > _rank(sim.topo, b) for a, b in hops)


def test_quiescent_copies_match_base(mixed_run):
    sim = mixed_run
    for node, lpa in sim.lpas.items():
        if not lpa.alive:
            continue
        for scope in lpa.needed_scopes():
            held = lpa.holder.held.get(scope)
            if held is not None:
                assert held == sim.store.latest[scope]
        assert lpa.holder.effective().profile.k == 2.5


def test_no_failure_no_resupply():
    from hidsim import collect
    assert collect(h.run(h.scenario(seed=1))).resupply_hops == 0
