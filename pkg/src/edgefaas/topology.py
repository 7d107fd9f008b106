"""Edge network model: brokers, far/near edge compute nodes, pass-through
network devices, and the broker-to-node hop-cost matrix.

The cloud is never a vertex of the graph; it enters only as an implicit extra
column of the cost matrix, always dearer than any edge node.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

from .errors import ConfigError, ConnectivityError, ParseError

# Reserved compute-node id for the implicit cloud.
CLOUD_ID = 0


class NodeKind(Enum):
    BROKER = "broker"
    FAR_EDGE = "far"
    NEAR_EDGE = "near"
    CLOUD = "cloud"


@dataclass(frozen=True)
class Node:
    """A broker or compute node. Brokers carry no containers."""

    id: int
    kind: NodeKind
    containers: int = 0
    service_rate: Fraction = Fraction(0)

    def __post_init__(self):
        if self.kind is NodeKind.BROKER and (self.containers or self.service_rate):
            raise ConfigError(f"broker {self.id} must have zero containers and rate")
        if self.containers < 0 or self.service_rate < 0:
            raise ConfigError(f"node {self.id}: negative capacity")

    @property
    def is_compute(self) -> bool:
        return self.kind in (NodeKind.FAR_EDGE, NodeKind.NEAR_EDGE, NodeKind.CLOUD)


@dataclass
class Topology:
    """Immutable after construction; share freely across parallel runs."""

    nodes: list[Node]
    edges: list[tuple[int, int]]
    device_nodes: list[int] = field(default_factory=list)

    def __post_init__(self):
        # Canonical ordering so that save/load round-trips compare equal.
        self.nodes = sorted(self.nodes, key=lambda n: n.id)
        self.edges = sorted(tuple(sorted(e)) for e in self.edges)
        self.device_nodes = sorted(self.device_nodes)
        self._validate()

    def _validate(self):
        ids = [n.id for n in self.nodes] + list(self.device_nodes)
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate node ids in topology")
        if CLOUD_ID in ids:
            raise ConfigError(f"node id {CLOUD_ID} is reserved for the implicit cloud")
        if any(n.kind is NodeKind.CLOUD for n in self.nodes):
            raise ConfigError("the cloud node is implicit and must not be listed")
        known = set(ids)
        for a, b in self.edges:
            if a not in known or b not in known:
                raise ConfigError(f"edge ({a}, {b}) references an undeclared node")
        if not self.brokers:
            raise ConfigError("topology has no brokers")
        if not self.edge_nodes:
            raise ConfigError("topology has no edge compute nodes")
        unreachable = _unreachable_pairs(self)
        if unreachable:
            raise ConnectivityError(
                f"{len(unreachable)} broker/node pair(s) unreachable: "
                + ", ".join(f"{i}->{j}" for i, j in unreachable[:5]),
                pairs=unreachable,
            )

    @property
    def brokers(self) -> list[Node]:
        return [n for n in self.nodes if n.kind is NodeKind.BROKER]

    @property
    def edge_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.kind in (NodeKind.FAR_EDGE, NodeKind.NEAR_EDGE)]

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for d in self.device_nodes:
            adj[d] = []
        for a, b in self.edges:
            adj[a].append(b)
            adj[b].append(a)
        return adj


@dataclass
class CostMatrix:
    """Path costs c[broker, node] over all brokers and edge compute nodes,
    plus the constant cloud cost (strictly above every edge cost)."""

    broker_ids: tuple[int, ...]
    edge_ids: tuple[int, ...]
    hops: dict[tuple[int, int], Fraction]
    cloud_cost: Fraction

    def __post_init__(self):
        for (i, j), c in self.hops.items():
            if c <= 0:
                raise ConfigError(f"cost c[{i},{j}] = {c} must be positive")
        if self.hops and self.cloud_cost <= max(self.hops.values()):
            raise ConfigError("cloud cost must exceed every edge cost")

    def cost(self, broker: int, node: int) -> Fraction:
        if node == CLOUD_ID:
            return self.cloud_cost
        return self.hops[(broker, node)]

    @property
    def node_ids(self) -> tuple[int, ...]:
        """All compute node ids, cloud included."""
        return self.edge_ids + (CLOUD_ID,)


def generate_topology(
    seed: int,
    n_brokers: int,
    n_far: int,
    n_near: int,
    far_caps: tuple[int, Fraction] = (4, Fraction(10)),
    near_caps: tuple[int, Fraction] = (8, Fraction(20)),
) -> Topology:
    """Deterministic hierarchical topology: near-edge nodes interconnected,
    far-edge nodes hang off them, brokers attach to far-edge aggregation
    points through 0-2 pass-through devices so hop distances vary."""
    if n_brokers < 1 or n_far < 1 or n_near < 1:
        raise ConfigError("need at least one broker, one far and one near edge node")
    rng = random.Random(seed)

    next_id = 1
    brokers = list(range(next_id, next_id + n_brokers))
    next_id += n_brokers
    fars = list(range(next_id, next_id + n_far))
    next_id += n_far
    nears = list(range(next_id, next_id + n_near))
    next_id += n_near

    edges: list[tuple[int, int]] = []
    devices: list[int] = []

    def new_device() -> int:
        nonlocal next_id
        devices.append(next_id)
        next_id += 1
        return next_id - 1

    # Near-edge backbone: chain, closed into a ring when large enough.
    for a, b in zip(nears, nears[1:]):
        edges.append((a, b))
    if len(nears) >= 3:
        edges.append((nears[-1], nears[0]))

    # Far-edge nodes attach to a near node, sometimes through a device.
    for f in fars:
        target = rng.choice(nears)
        if rng.random() < 0.5:
            d = new_device()
            edges.append((f, d))
            edges.append((d, target))
        else:
            edges.append((f, target))

    # Brokers attach to a far-edge aggregation point via 0-2 devices.
    for b in brokers:
        target = rng.choice(fars)
        hops = rng.choice((0, 1, 2))
        prev = b
        for _ in range(hops):
            d = new_device()
            edges.append((prev, d))
            prev = d
        edges.append((prev, target))

    nodes = [Node(b, NodeKind.BROKER) for b in brokers]
    nodes += [Node(f, NodeKind.FAR_EDGE, far_caps[0], Fraction(far_caps[1])) for f in fars]
    nodes += [Node(n, NodeKind.NEAR_EDGE, near_caps[0], Fraction(near_caps[1])) for n in nears]
    return Topology(nodes=nodes, edges=edges, device_nodes=devices)


def compute_cost_matrix(topo: Topology) -> CostMatrix:
    """Hop count (BFS over all vertices, devices included) from every broker
    to every edge node; the cloud column is twice the largest hop count."""
    adj = topo.adjacency()
    edge_ids = tuple(sorted(n.id for n in topo.edge_nodes))
    hops: dict[tuple[int, int], Fraction] = {}
    missing: list[tuple[int, int]] = []
    for broker in topo.brokers:
        dist = _bfs(adj, broker.id)
        for j in edge_ids:
            if j in dist:
                hops[(broker.id, j)] = Fraction(dist[j])
            else:
                missing.append((broker.id, j))
    if missing:
        raise ConnectivityError(
            "unreachable broker/node pairs: " + ", ".join(f"{i}->{j}" for i, j in missing),
            pairs=missing,
        )
    cloud = 2 * max(hops.values())
    return CostMatrix(
        broker_ids=tuple(sorted(b.id for b in topo.brokers)),
        edge_ids=edge_ids,
        hops=hops,
        cloud_cost=cloud,
    )


def _bfs(adj: dict[int, list[int]], start: int) -> dict[int, int]:
    dist = {start: 0}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _unreachable_pairs(topo: Topology) -> list[tuple[int, int]]:
    adj = topo.adjacency()
    pairs = []
    for broker in topo.brokers:
        dist = _bfs(adj, broker.id)
        for n in topo.edge_nodes:
            if n.id not in dist:
                pairs.append((broker.id, n.id))
    return pairs


_KIND_TO_TOKEN = {
    NodeKind.BROKER: "broker",
    NodeKind.FAR_EDGE: "far",
    NodeKind.NEAR_EDGE: "near",
}
_TOKEN_TO_KIND = {v: k for k, v in _KIND_TO_TOKEN.items()}

# Capacities applied when a far/near node line omits them.
_DEFAULT_CAPS = {NodeKind.FAR_EDGE: (4, Fraction(10)), NodeKind.NEAR_EDGE: (8, Fraction(20))}


def save_topology(topo: Topology) -> str:
    lines = ["topology v1"]
    for n in topo.nodes:
        if n.kind is NodeKind.BROKER:
            lines.append(f"node {n.id} broker")
        else:
            lines.append(f"node {n.id} {_KIND_TO_TOKEN[n.kind]} {n.containers} {n.service_rate}")
    for d in topo.device_nodes:
        lines.append(f"node {d} device")
    for a, b in topo.edges:
        lines.append(f"edge {a} {b}")
    return "\n".join(lines) + "\n"


def load_topology(text: str) -> Topology:
    """Parse the line-oriented topology format; errors carry line numbers."""
    nodes: list[Node] = []
    devices: list[int] = []
    edges: list[tuple[int, int]] = []
    seen_ids: set[int] = set()
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if line != "topology v1":
                raise ParseError("expected header 'topology v1'", lineno)
            header_seen = True
            continue
        fields = line.split()
        if fields[0] == "node":
            if len(fields) < 3:
                raise ParseError("node line needs an id and a kind", lineno)
            try:
                nid = int(fields[1])
            except ValueError:
                raise ParseError(f"bad node id {fields[1]!r}", lineno) from None
            if nid in seen_ids:
                raise ParseError(f"duplicate node id {nid}", lineno)
            if nid == CLOUD_ID:
                raise ParseError(f"node id {CLOUD_ID} is reserved for the cloud", lineno)
            seen_ids.add(nid)
            kind_tok = fields[2]
            if kind_tok == "device":
                if len(fields) != 3:
                    raise ParseError("device lines take no capacities", lineno)
                devices.append(nid)
            elif kind_tok == "broker":
                if len(fields) != 3:
                    raise ParseError("broker lines take no capacities", lineno)
                nodes.append(Node(nid, NodeKind.BROKER))
            elif kind_tok in _TOKEN_TO_KIND:
                kind = _TOKEN_TO_KIND[kind_tok]
                if len(fields) == 3:
                    containers, rate = _DEFAULT_CAPS[kind]
                elif len(fields) == 5:
                    try:
                        containers = int(fields[3])
                        rate = Fraction(fields[4])
                    except (ValueError, ZeroDivisionError):
                        raise ParseError("bad capacity values", lineno) from None
                else:
                    raise ParseError("expected 'node <id> <kind> [containers rate]'", lineno)
                nodes.append(Node(nid, kind, containers, rate))
            else:
                raise ParseError(f"unknown node kind {kind_tok!r}", lineno)
        elif fields[0] == "edge":
            if len(fields) != 3:
                raise ParseError("expected 'edge <id> <id>'", lineno)
            try:
                a, b = int(fields[1]), int(fields[2])
            except ValueError:
                raise ParseError("bad edge endpoint", lineno) from None
            if a not in seen_ids or b not in seen_ids:
                raise ParseError(f"edge ({a}, {b}) references an undeclared node", lineno)
            edges.append((a, b))
        else:
            raise ParseError(f"unknown directive {fields[0]!r}", lineno)
    if not header_seen:
        raise ParseError("empty topology file", 1)
    try:
        return Topology(nodes=nodes, edges=edges, device_nodes=devices)
    except ConfigError as exc:
        raise ParseError(str(exc)) from exc
