"""Failure detection and takeover of cluster and regional nodes.

Only a node's parent notices its silence: regional agents track their
clusters, the base station tracks regional agents. A failed node's duties
move to its nearest alive neighbour, chosen by that parent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Set, Tuple

from .topology import Axial, NoAliveNeighbor, Role, Topology, neighbor_of


@dataclass
class Liveness:
    last_report_at: Optional[int] = None
    missed: int = 0
    heard_this_window: bool = False


class LivenessTable:
    """Per-child report arrivals as seen by one monitoring parent."""

    def __init__(self, children: Iterable[int] = ()) -> None:
        self.rows: Dict[int, Liveness] = {c: Liveness() for c in children}

    def watch(self, child: int) -> None:
        self.rows.setdefault(child, Liveness())

    def unwatch(self, child: int) -> None:
        self.rows.pop(child, None)

    def heard(self, child: int, at: int) -> None:
        row = self.rows.get(child)
        if row is None:
            return
        row.last_report_at = at
        row.missed = 0
        row.heard_this_window = True

    def close_window(self) -> None:
        for row in self.rows.values():
            if not row.heard_this_window:
                row.missed += 1
            row.heard_this_window = False


def detect_failure(table: LivenessTable, now: int, miss_limit: int) -> List[int]:
    return sorted(c for c, row in table.rows.items() if row.missed >= miss_limit)


@dataclass
class Assignment:
    """Who currently monitors whom. Starts as the built topology and drifts with takeovers."""

    lpa_of_cell: Dict[Axial, int]
    rpa_of_cluster: Dict[int, int]
    dead: Set[int] = field(default_factory=set)
    retired: Set[int] = field(default_factory=set)  # failed monitors; never reclaim their duties
    orphaned: Set[int] = field(default_factory=set)

    @classmethod
    def initial(cls, topo: Topology) -> "Assignment":
        return cls(dict(topo.cell_cluster), dict(topo.region_of))

    def cells_of(self, lpa: int) -> List[Axial]:
        return sorted(k for k, owner in self.lpa_of_cell.items() if owner == lpa)

    def clusters_of(self, rpa: int) -> List[int]:
        return sorted(c for c, owner in self.rpa_of_cluster.items() if owner == rpa and c not in self.retired)

    def lpa_of_sensor(self, topo: Topology, sensor: int) -> int:
        return self.lpa_of_cell[topo.nodes[sensor].cell]  # type: ignore[index]

    def parent_of(self, lpa: int) -> int:
        return self.rpa_of_cluster[lpa]

    def monitored_sensors(self, topo: Topology, lpa: int) -> List[int]:
        out: List[int] = []
        for key in self.cells_of(lpa):
            out.extend(topo.sensors_in_cell(key))
        return sorted(out)


@dataclass(frozen=True)
class Reassignment:
    failed: int
    takeover: Optional[int]  # None when no alive neighbour exists
    role: Role
    cells: Tuple[Axial, ...] = ()
    clusters: Tuple[int, ...] = ()
    sensors: Tuple[int, ...] = ()
    selected_by: Optional[int] = None


def takeover(topo: Topology, assignment: Assignment, failed: int) -> Reassignment:
    """Move a failed monitor's children to its nearest alive neighbour.

    Cluster failures are resolved by the failed node's regional agent, and
    regional failures by the base station. With no alive neighbour the
    children are orphaned and the caller escalates.
    """
    role = topo.nodes[failed].role
    down = assignment.dead | assignment.retired | {failed}
    assignment.retired.add(failed)
    if role is Role.CLUSTER:
        cells = tuple(assignment.cells_of(failed))
        sensors = tuple(s for k in cells for s in topo.sensors_in_cell(k))
        selector = assignment.rpa_of_cluster.get(failed)
        try:
            heir = neighbor_of(topo, failed, down)
        except NoAliveNeighbor:
            assignment.orphaned.update(sensors)
            return Reassignment(failed, None, role, cells, (), sensors, selector)
        for k in cells:
            assignment.lpa_of_cell[k] = heir
        return Reassignment(failed, heir, role, cells, (), sensors, selector)
    if role is Role.REGIONAL:
        clusters = tuple(assignment.clusters_of(failed))
        sensors = tuple(sorted(s for c in clusters for s in assignment.monitored_sensors(topo, c)))
        try:
            heir = neighbor_of(topo, failed, down)
        except NoAliveNeighbor:
            assignment.orphaned.update(sensors)
            return Reassignment(failed, None, role, (), clusters, sensors, topo.base)
        for c in clusters:
            assignment.rpa_of_cluster[c] = heir
        # the heir also inherits whatever the failed regional had adopted earlier
        for c, owner in list(assignment.rpa_of_cluster.items()):
            if owner == failed:
                assignment.rpa_of_cluster[c] = heir
        return Reassignment(failed, heir, role, (), clusters, sensors, topo.base)
    raise ValueError(f"node {failed} ({role.value}) cannot fail over")
