"""Hexagonal-cell, four-tier network layout.

Sensors sit inside pointy-top hexagonal cells. Each cell has one cluster
node at its exact centre, cells are grouped into regions served by a
regional node, and a single base station sits above everything.

The sensor radio graph is a disk model: two radio nodes (sensors and
cluster nodes) are linked when their distance is within ``radio_range``.
Regional nodes and the base station talk over a backbone and never appear
in the radio graph.
"""

from __future__ import annotations

import enum
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

SQRT3 = math.sqrt(3.0)

Axial = Tuple[int, int]
Point = Tuple[float, float]

# Axial neighbour directions, in ring-walk order.
HEX_DIRECTIONS: Tuple[Axial, ...] = ((1, 0), (1, -1), (0, -1), (-1, 0), (-1, 1), (0, 1))

_TIE_EPS = 1e-9
_MAX_PLACEMENT_ATTEMPTS = 2000


class TopologyError(ValueError):
    """Invalid topology configuration."""


class NoAliveNeighbor(LookupError):
    """Every neighbour of a failed monitor node is itself down."""


class Unreachable(LookupError):
    """No path exists between two nodes in the radio graph."""


class Role(str, enum.Enum):
    SENSOR = "Sensor"
    CLUSTER = "ClusterNode"
    REGIONAL = "RegionalNode"
    BASE = "BaseStation"


@dataclass(frozen=True)
class HexCell:
    axial_q: int
    axial_r: int
    center: Point
    radius: float

    @property
    def key(self) -> Axial:
        return (self.axial_q, self.axial_r)


@dataclass(frozen=True)
class Node:
    id: int
    role: Role
    pos: Point
    cell: Optional[Axial] = None
    region: Optional[int] = None  # regional NodeId owning this node


@dataclass(frozen=True)
class TopologyConfig:
    cells_per_region: int = 3
    regions: int = 2
    sensors_per_cell: int = 8
    cell_radius: float = 50.0
    rng_seed: int = 0

    def validate(self) -> None:
        for name in ("cells_per_region", "regions", "sensors_per_cell"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise TopologyError(f"{name} must be an integer >= 1, got {value!r}")
        if not self.cell_radius > 0:
            raise TopologyError(f"cell_radius must be > 0, got {self.cell_radius!r}")


# -- hex geometry ------------------------------------------------------------


def hex_center(key: Axial, radius: float) -> Point:
    q, r = key
    return (radius * SQRT3 * (q + r / 2.0), radius * 1.5 * r)


def hex_spiral(count: int) -> List[Axial]:
    """First ``count`` axial coordinates of the ring spiral around (0, 0)."""
    out: List[Axial] = [(0, 0)]
    ring = 1
    while len(out) < count:
        q, r = -ring, ring  # direction 4 scaled by ring
        for dq, dr in HEX_DIRECTIONS:
            for _ in range(ring):
                out.append((q, r))
                q, r = q + dq, r + dr
        ring += 1
    return out[:count]


def _axial_round(fq: float, fr: float) -> Axial:
    fs = -fq - fr
    q, r, s = round(fq), round(fr), round(fs)
    dq, dr, ds = abs(q - fq), abs(r - fr), abs(s - fs)
    if dq > dr and dq > ds:
        q = -r - s
    elif dr > ds:
        r = -q - s
    return (int(q), int(r))


def cell_of_point(p: Point, radius: float) -> Axial:
    """Hex cell containing ``p``; points on a shared edge go to the lowest (q, r)."""
    x, y = p
    guess = _axial_round((SQRT3 / 3.0 * x - y / 3.0) / radius, (2.0 / 3.0 * y) / radius)
    candidates = [guess] + [(guess[0] + dq, guess[1] + dr) for dq, dr in HEX_DIRECTIONS]
    dists = {c: math.dist(p, hex_center(c, radius)) for c in candidates}
    best = min(dists.values())
    return min(c for c, d in dists.items() if d <= best + _TIE_EPS)


def hex_adjacent(a: Axial, b: Axial) -> bool:
    return (b[0] - a[0], b[1] - a[1]) in HEX_DIRECTIONS


# -- topology ----------------------------------------------------------------


@dataclass
class Topology:
    nodes: Dict[int, Node]
    radio_range: float
    cells: Dict[Axial, HexCell] = field(default_factory=dict)
    cluster_of: Dict[int, int] = field(default_factory=dict)
    region_of: Dict[int, int] = field(default_factory=dict)
    cell_cluster: Dict[Axial, int] = field(default_factory=dict)
    neighbor_clusters: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    neighbor_regions: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    config: Optional[TopologyConfig] = None

    def __post_init__(self) -> None:
        self._links: Dict[int, Tuple[int, ...]] = {}
        self._rebuild_links()

    @classmethod
    def from_positions(cls, positions: Dict[int, Point], radio_range: float) -> "Topology":
        """Flat sensor-only topology, mostly for routing tests."""
        nodes = {nid: Node(nid, Role.SENSOR, pos) for nid, pos in positions.items()}
        return cls(nodes=nodes, radio_range=radio_range)

    def _rebuild_links(self) -> None:
        radio = sorted(n.id for n in self.nodes.values() if n.role in (Role.SENSOR, Role.CLUSTER))
        links: Dict[int, List[int]] = {nid: [] for nid in radio}
        for i, a in enumerate(radio):
            pa = self.nodes[a].pos
            for b in radio[i + 1:]:
                if math.dist(pa, self.nodes[b].pos) <= self.radio_range:
                    links[a].append(b)
                    links[b].append(a)
        self._links = {k: tuple(v) for k, v in links.items()}

    # queries

    def links(self, nid: int) -> Tuple[int, ...]:
        return self._links.get(nid, ())

    def in_range(self, a: int, b: int) -> bool:
        return b in self._links.get(a, ())

    def distance(self, a: int, b: int) -> float:
        return math.dist(self.nodes[a].pos, self.nodes[b].pos)

    def ids(self, role: Role) -> List[int]:
        return sorted(n.id for n in self.nodes.values() if n.role is role)

    @property
    def base(self) -> int:
        return self.ids(Role.BASE)[0]

    def sensors_in_cell(self, key: Axial) -> List[int]:
        return sorted(n.id for n in self.nodes.values() if n.role is Role.SENSOR and n.cell == key)

    def clusters_in_region(self, regional: int) -> List[int]:
        return sorted(c for c, r in self.region_of.items() if r == regional)

    def relocated(self, nid: int, pos: Point) -> "Topology":
        """Copy with one node moved; links are recomputed."""
        nodes = dict(self.nodes)
        old = nodes[nid]
        nodes[nid] = Node(old.id, old.role, pos, old.cell, old.region)
        return Topology(
            nodes=nodes,
            radio_range=self.radio_range,
            cells=self.cells,
            cluster_of=self.cluster_of,
            region_of=self.region_of,
            cell_cluster=self.cell_cluster,
            neighbor_clusters=self.neighbor_clusters,
            neighbor_regions=self.neighbor_regions,
            config=self.config,
        )

    def dump(self) -> str:
        """One line per node: ``id role x y cell region``."""
        lines = []
        for nid in sorted(self.nodes):
            n = self.nodes[nid]
            cell = f"{n.cell[0]},{n.cell[1]}" if n.cell is not None else "-"
            region = str(n.region) if n.region is not None else "-"
            lines.append(f"{n.id} {n.role.value} {n.pos[0]:.3f} {n.pos[1]:.3f} {cell} {region}")
        return "\n".join(lines) + "\n"


def _connected_to(topo_links: Dict[int, List[int]], start: int, members: Iterable[int]) -> bool:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in topo_links.get(u, ()):
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return all(m in seen for m in members)


def _sample_in_cell(rng: random.Random, cell: HexCell) -> Point:
    cx, cy = cell.center
    half_w = cell.radius * SQRT3 / 2.0
    while True:
        p = (cx + rng.uniform(-half_w, half_w), cy + rng.uniform(-cell.radius, cell.radius))
        if cell_of_point(p, cell.radius) == cell.key:
            return p


def build_topology(cfg: TopologyConfig, radio_range: float = 35.0) -> Topology:
    """Lay out regions of hex cells and scatter sensors uniformly inside them.

    Node ids: base station 0, then regional nodes, cluster nodes and sensors,
    each block in spiral order. A cell's sensor placement is redrawn (from
    the same RNG stream) until every sensor reaches its cluster node through
    sensors of that cell, so intra-cell routing never fails.
    """
    cfg.validate()
    if not radio_range > 0:
        raise TopologyError(f"radio_range must be > 0, got {radio_range!r}")
    rng = random.Random(cfg.rng_seed)
    n_cells = cfg.regions * cfg.cells_per_region
    keys = hex_spiral(n_cells)
    cells = {k: HexCell(k[0], k[1], hex_center(k, cfg.cell_radius), cfg.cell_radius) for k in keys}

    base_id = 0
    regional_ids = list(range(1, 1 + cfg.regions))
    cluster_ids = list(range(1 + cfg.regions, 1 + cfg.regions + n_cells))
    next_id = cluster_ids[-1] + 1

    nodes: Dict[int, Node] = {}
    region_of: Dict[int, int] = {}
    cell_cluster: Dict[Axial, int] = {}
    cluster_of: Dict[int, int] = {}

    region_cells: Dict[int, List[Axial]] = {}
    for idx, key in enumerate(keys):
        regional = regional_ids[idx // cfg.cells_per_region]
        region_cells.setdefault(regional, []).append(key)
        cid = cluster_ids[idx]
        nodes[cid] = Node(cid, Role.CLUSTER, cells[key].center, key, regional)
        region_of[cid] = regional
        cell_cluster[key] = cid

    for regional, rkeys in region_cells.items():
        xs = [cells[k].center[0] for k in rkeys]
        ys = [cells[k].center[1] for k in rkeys]
        nodes[regional] = Node(regional, Role.REGIONAL, (sum(xs) / len(xs), sum(ys) / len(ys)), None, regional)
    all_x = [c.center[0] for c in cells.values()]
    all_y = [c.center[1] for c in cells.values()]
    nodes[base_id] = Node(base_id, Role.BASE, (sum(all_x) / len(all_x), sum(all_y) / len(all_y)))

    for key in keys:
        cell = cells[key]
        cid = cell_cluster[key]
        ids = list(range(next_id, next_id + cfg.sensors_per_cell))
        next_id += cfg.sensors_per_cell
        for _ in range(_MAX_PLACEMENT_ATTEMPTS):
            pos = {sid: _sample_in_cell(rng, cell) for sid in ids}
            pos[cid] = cell.center
            members = sorted(pos)
            links: Dict[int, List[int]] = {m: [] for m in members}
            for i, a in enumerate(members):
                for b in members[i + 1:]:
                    if math.dist(pos[a], pos[b]) <= radio_range:
                        links[a].append(b)
                        links[b].append(a)
            if _connected_to(links, cid, ids):
                break
        else:
            raise TopologyError(
                f"could not place a connected cell {key} with radio_range={radio_range}; "
                "increase the range or sensors_per_cell"
            )
        for sid in ids:
            nodes[sid] = Node(sid, Role.SENSOR, pos[sid], key, region_of[cid])
            cluster_of[sid] = cid

    neighbor_clusters = {
        cell_cluster[a]: tuple(sorted(cell_cluster[b] for b in keys if hex_adjacent(a, b)))
        for a in keys
    }
    neighbor_regions: Dict[int, Tuple[int, ...]] = {}
    for ra in regional_ids:
        adj = set()
        for rb in regional_ids:
            if ra != rb and any(hex_adjacent(a, b) for a in region_cells[ra] for b in region_cells[rb]):
                adj.add(rb)
        neighbor_regions[ra] = tuple(sorted(adj))

    return Topology(
        nodes=nodes,
        radio_range=radio_range,
        cells=cells,
        cluster_of=cluster_of,
        region_of=region_of,
        cell_cluster=cell_cluster,
        neighbor_clusters=neighbor_clusters,
        neighbor_regions=neighbor_regions,
        config=cfg,
    )


def neighbor_of(topo: Topology, failed: int, dead: Iterable[int] = ()) -> int:
    """Nearest alive peer of a failed cluster or regional node (ties: lowest id)."""
    role = topo.nodes[failed].role
    if role is Role.CLUSTER:
        peers: Sequence[int] = topo.neighbor_clusters.get(failed, ())
    elif role is Role.REGIONAL:
        peers = topo.neighbor_regions.get(failed, ())
    else:
        raise ValueError(f"node {failed} is a {role.value}; only cluster/regional nodes fail over")
    down = set(dead) | {failed}
    alive = [p for p in peers if p not in down]
    if not alive:
        raise NoAliveNeighbor(f"node {failed} has no alive neighbour")
    return min(alive, key=lambda p: (round(topo.distance(failed, p), 9), p))


def expected_route(
    topo: Topology, src: int, dst: int, exclude: Iterable[int] = frozenset()
) -> List[int]:
    """Minimum-hop radio path from ``src`` to ``dst``.

    Only sensors outside ``exclude`` may relay; the endpoints may be any
    radio node. Among equal-length paths the lexicographically smallest id
    sequence is returned.
    """
    if src == dst:
        return [src]
    if src not in topo.nodes or dst not in topo.nodes:
        raise Unreachable(f"unknown endpoint in {src}->{dst}")
    excluded = exclude if isinstance(exclude, (set, frozenset)) else frozenset(exclude)

    def relay_ok(n: int) -> bool:
        return topo.nodes[n].role is Role.SENSOR and n not in excluded

    dist = {dst: 0}
    queue = deque([dst])
    while queue:
        u = queue.popleft()
        if u != dst and not relay_ok(u):
            continue
        for v in topo.links(u):
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    if src not in dist:
        raise Unreachable(f"no radio path {src}->{dst}")

    path = [src]
    cur = src
    while cur != dst:
        want = dist[cur] - 1
        cur = min(v for v in topo.links(cur) if dist.get(v) == want and (v == dst or relay_ok(v)))
        path.append(cur)
    return path
