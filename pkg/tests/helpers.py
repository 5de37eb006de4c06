"""Scenario builders shared by the end-to-end tests."""

from __future__ import annotations

from collections import Counter
from typing import Any, Dict, List, Optional

from hidsim.scenario import Scenario, scenario_from_dict
from hidsim.simulation import Simulation
from hidsim.topology import Role, Topology, TopologyConfig, build_topology, expected_route

ATTACK_START = 20_000
DURATION = 60_000


def topology(seed: int = 0, **cfg: Any) -> Topology:
    return build_topology(TopologyConfig(rng_seed=seed, **cfg), 35.0)


def busiest_relay(topo: Topology) -> int:
    """Sensor that relays the most sensor-to-cluster routes (ties: lowest id)."""
    load: Counter = Counter()
    for s in topo.ids(Role.SENSOR):
        path = expected_route(topo, s, topo.cluster_of[s])
        load.update(path[1:-1])
    return min(load, key=lambda n: (-load[n], n))


def far_sensor(topo: Topology, a: int) -> int:
    """Sensor out of radio range of ``a``, in a different cell, as close as possible beyond that."""
    cell = topo.nodes[a].cell
    options = [s for s in topo.ids(Role.SENSOR)
               if topo.nodes[s].cell != cell and not topo.in_range(a, s)]
    return min(options, key=lambda s: (round(topo.distance(a, s), 6), s))


def near_cluster(topo: Topology, cluster: int) -> int:
    """Sensor of the cluster's own cell closest to the cluster node."""
    cell = topo.nodes[cluster].cell
    return min(topo.sensors_in_cell(cell), key=lambda s: (topo.distance(s, cluster), s))


def other_cell_ids(topo: Topology, attacker: int, count: int = 2) -> List[int]:
    """Real sensor ids homed in cells other than the attacker's."""
    cell = topo.nodes[attacker].cell
    ids = [s for s in topo.ids(Role.SENSOR) if topo.nodes[s].cell != cell]
    return ids[:count]


def attack_dict(kind: str, topo: Topology, **extra: Any) -> Dict[str, Any]:
    """A typical single attack, placed where it does the most damage."""
    relay = busiest_relay(topo)
    d: Dict[str, Any] = {"kind": kind, "attacker": relay, "start": ATTACK_START, "stop": DURATION}
    if kind == "SelectiveForwarding":
        d["drop_ratio"] = 0.5
    elif kind == "Wormhole":
        d["peer"] = far_sensor(topo, relay)
    elif kind == "Jamming":
        d["attacker"] = near_cluster(topo, topo.cluster_of[relay])
    elif kind in ("Sybil", "FalseIdBroadcastFlood", "FalseIdTargetFlood"):
        d["fake_ids"] = other_cell_ids(topo, relay)
    if kind in ("TargetFlood", "FalseIdTargetFlood"):
        d["target"] = topo.cluster_of[relay]
    d.update(extra)
    return d


def scenario(attacks: Optional[List[Dict[str, Any]]] = None, seed: int = 0, **extra: Any) -> Scenario:
    data: Dict[str, Any] = {"seed": seed, "duration_ms": DURATION, "topology": {"rng_seed": seed}}
    if attacks:
        data["attacks"] = attacks
    data.update(extra)
    return scenario_from_dict(data)


def attack_scenario(kind: str, seed: int = 0, **extra: Any) -> Scenario:
    topo = topology(seed)
    return scenario([attack_dict(kind, topo, **extra)], seed=seed)


def run(sc: Scenario) -> Simulation:
    return Simulation(sc).run()
