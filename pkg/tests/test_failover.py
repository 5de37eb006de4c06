import pytest

import helpers as h
from hidsim import collect
from hidsim.failover import Assignment, LivenessTable, detect_failure, takeover
from hidsim.response import State
from hidsim.topology import Role

MISS_LIMIT = 3


def test_all_reporting_nothing_flagged():
    t = LivenessTable([3, 4])
    for w in range(10):
        t.heard(3, w)
        t.heard(4, w)
        t.close_window()
    assert detect_failure(t, 10, MISS_LIMIT) == []


def test_silence_counts_windows():
    t = LivenessTable([3, 4, 5])
    for w in range(MISS_LIMIT):
        t.heard(4, w)
        assert detect_failure(t, w, MISS_LIMIT) == []
        t.close_window()
    assert detect_failure(t, MISS_LIMIT, MISS_LIMIT) == [3, 5]
    t.heard(3, 99)
    assert t.rows[3].missed == 0 and detect_failure(t, 99, MISS_LIMIT) == [5]


def test_unwatched_child_ignored():
    t = LivenessTable([3])
    t.unwatch(3)
    t.heard(3, 1)
    t.close_window()
    assert t.rows == {}


def test_cluster_takeover_two_clusters():
    topo = h.topology(0, regions=1, cells_per_region=2, sensors_per_cell=4)
    a = Assignment.initial(topo)
    c1, c2 = topo.ids(Role.CLUSTER)
    re = takeover(topo, a, c1)
    assert re.takeover == c2 and re.selected_by == topo.region_of[c1]
    assert set(re.sensors) == set(topo.sensors_in_cell(topo.nodes[c1].cell))
    assert all(a.lpa_of_sensor(topo, s) == c2 for s in topo.ids(Role.SENSOR))
    assert c1 in a.retired


def test_cluster_without_neighbour_orphans():
    topo = h.topology(0, regions=1, cells_per_region=1, sensors_per_cell=3)
    a = Assignment.initial(topo)
    (c,) = topo.ids(Role.CLUSTER)
    re = takeover(topo, a, c)
    assert re.takeover is None and a.orphaned == set(topo.ids(Role.SENSOR))


def test_regional_takeover_reparents_clusters():
    topo = h.topology(0)
    a = Assignment.initial(topo)
    re = takeover(topo, a, 1)
    assert re.takeover == 2 and re.selected_by == topo.base
    assert set(re.clusters) == {c for c, r in topo.region_of.items() if r == 1 and topo.nodes[c].role is Role.CLUSTER}
    assert all(a.parent_of(c) == 2 for c in topo.ids(Role.CLUSTER))


def test_sensor_cannot_fail_over():
    topo = h.topology(0)
    with pytest.raises(ValueError):
        takeover(topo, Assignment.initial(topo), topo.ids(Role.SENSOR)[0])


# -- simulated kills ---------------------------------------------------------


def cluster_kill_scenario():
    topo = h.topology(0)
    victim = h.busiest_relay(topo)
    cluster = topo.cluster_of[victim]
    attack = {"kind": "BlackHole", "attacker": victim, "start": 20_000, "stop": 60_000}
    return victim, cluster, h.scenario([attack], failures=[{"node": cluster, "at": 30_500}])


@pytest.fixture(scope="module")
def cluster_kill():
    victim, cluster, sc = cluster_kill_scenario()
    return victim, cluster, h.run(sc)


@pytest.fixture(scope="module")
def regional_kill():
    return h.run(h.scenario(failures=[{"node": 1, "at": 20_500}]))


def _disruption_windows(ev, window_ms=1000):
    return -(-(ev.first_report_at - ev.killed_at) // window_ms)


def test_cluster_kill_detected_by_parent_only(cluster_kill):
    _, cluster, sim = cluster_kill
    (ev,) = sim.failovers
    assert ev.failed == cluster and ev.selected_by == sim.topo.region_of[cluster]
    assert ev.takeover is not None and ev.takeover != cluster


def test_cluster_kill_conservation(cluster_kill):
    _, cluster, sim = cluster_kill
    (ev,) = sim.failovers
    heir = sim.lpas[ev.takeover]
    moved = set(sim.topo.sensors_in_cell(sim.topo.nodes[cluster].cell))
    assert set(ev.adopted) == moved and moved <= set(heir.records)
    monitors = {}
    for cid, lpa in sim.lpas.items():
        if lpa.alive:
            for s in sim.assignment.monitored_sensors(sim.topo, cid):
                monitors.setdefault(s, []).append(cid)
    assert all(len(monitors.get(s, [])) == 1 for s in sim.sensors)
    assert not sim.orphans


def test_cluster_kill_keeps_suspect_ban(cluster_kill):
    victim, _, sim = cluster_kill
    (ev,) = sim.failovers
    before, after = ev.before[victim], ev.after[victim]
    assert before.state is State.SUSPECT and ev.detected_at < before.ban_until
    assert after.state is State.SUSPECT and after.ban_until == before.ban_until
    assert all(ev.before[s] == ev.after[s] for s in ev.adopted)


def test_cluster_kill_bounded_disruption(cluster_kill):
    _, _, sim = cluster_kill
    (ev,) = sim.failovers
    assert ev.first_report_at is not None
    assert _disruption_windows(ev) <= MISS_LIMIT + 2
    assert collect(sim).failover_disruption == [_disruption_windows(ev)]


def test_cluster_kill_policy_resupplied(cluster_kill):
    _, _, sim = cluster_kill
    (ev,) = sim.failovers
    heir = sim.lpas[ev.takeover]
    for scope, ps in heir.holder.held.items():
        assert ps == sim.store.resolve(scope)
    assert collect(sim).resupply_hops > 0


def test_regional_kill(regional_kill):
    sim = regional_kill
    (ev,) = sim.failovers
    assert ev.failed == 1 and ev.selected_by == sim.topo.base and ev.takeover == 2
    assert ev.first_report_at is not None and _disruption_windows(ev) <= MISS_LIMIT + 2
    assert all(sim.assignment.parent_of(c) == 2 for c in sim.topo.ids(Role.CLUSTER))
    assert ev.before == ev.after and set(ev.before) == set(sim.sensors) - set(
        s for c in sim.topo.ids(Role.CLUSTER) if sim.topo.region_of[c] == 2
        for s in sim.assignment.monitored_sensors(sim.topo, c))
    for scope, ps in sim.rpas[2].holder.held.items():
        assert ps == sim.store.resolve(scope)
    assert set(sim.final_states().values()) == {State.MEMBER}


def test_no_failure_no_failover():
    sim = h.run(h.scenario(seed=2))
    assert sim.failovers == [] and collect(sim).failover_disruption == []
