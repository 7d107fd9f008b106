"""Joint allocation of dedicated (mu) containers and stateless (lambda)
invocation load over an edge/cloud network.

The joint problem decomposes sequentially: a capacity-constrained assignment
places every mu-app's dedicated container first (dedicated placement strictly
dominates in the combined objective), then a transportation problem spreads
the stateless request rates over the service capacity left behind. Both
solvers are exact on rational inputs: the assignment runs on a slot-expanded
integer cost matrix, the transportation problem is scaled to an integral
min-cost flow and solved by successive shortest paths.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from heapq import heappop, heappush

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError, InconsistencyError, InfeasibleError, ParseError
from .topology import CLOUD_ID, CostMatrix, Topology, compute_cost_matrix


class Mode(Enum):
    LAMBDA = "lambda"
    MU = "mu"


@dataclass(frozen=True)
class App:
    """An application client: bound to exactly one broker, currently in
    exactly one operation mode."""

    id: int
    broker: int
    mode: Mode
    request_rate: Fraction = Fraction(1)


@dataclass
class AllocationInstance:
    """One snapshot of the allocation problem: costs, node capacities and
    per-container service rates (cloud included under CLOUD_ID), the app
    population and the two knobs alpha (mu share of containers) and beta
    (lambda over-provisioning margin)."""

    cost: CostMatrix
    capacities: dict[int, int]
    service_rates: dict[int, Fraction]
    apps: list[App]
    alpha: Fraction
    beta: Fraction

    def __post_init__(self):
        self.alpha = Fraction(self.alpha)
        self.beta = Fraction(self.beta)
        if not 0 <= self.alpha <= 1:
            raise ConfigError(f"alpha = {self.alpha} outside [0, 1]")
        if not 0 < self.beta < 1:
            raise ConfigError(f"beta = {self.beta} outside (0, 1)")
        if CLOUD_ID not in self.capacities:
            raise ConfigError("instance lacks the cloud node")
        if self.capacities[CLOUD_ID] != len(self.apps):
            raise ConfigError("cloud capacity must equal the app count")
        ids = [a.id for a in self.apps]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate app ids")
        max_rate = max((a.request_rate for a in self.apps), default=Fraction(0))
        if self.apps and self.service_rates[CLOUD_ID] <= max_rate:
            raise ConfigError("cloud service rate must exceed every request rate")
        brokers = set(self.cost.broker_ids)
        for a in self.apps:
            if a.broker not in brokers:
                raise ConfigError(f"app {a.id} bound to unknown broker {a.broker}")
            if a.request_rate <= 0:
                raise ConfigError(f"app {a.id} has non-positive request rate")

    @property
    def lambda_apps(self) -> list[App]:
        return [a for a in self.apps if a.mode is Mode.LAMBDA]

    @property
    def mu_apps(self) -> list[App]:
        return [a for a in self.apps if a.mode is Mode.MU]


def build_instance(
    topo: Topology,
    apps: list[App],
    alpha,
    beta,
    cost: CostMatrix | None = None,
) -> AllocationInstance:
    """Assemble an instance from a topology: edge capacities come from the
    nodes, the implicit cloud gets one container per app and a service rate
    high enough that even the beta-capped cloud absorbs all lambda demand."""
    if cost is None:
        cost = compute_cost_matrix(topo)
    beta = Fraction(beta)
    capacities = {n.id: n.containers for n in topo.edge_nodes}
    rates = {n.id: n.service_rate for n in topo.edge_nodes}
    max_rate = max((a.request_rate for a in apps), default=Fraction(1))
    capacities[CLOUD_ID] = len(apps)
    rates[CLOUD_ID] = max(max_rate, max_rate / beta) + 1
    return AllocationInstance(
        cost=cost,
        capacities=capacities,
        service_rates=rates,
        apps=list(apps),
        alpha=Fraction(alpha),
        beta=beta,
    )


@dataclass
class MuAssignment:
    """Sparse placement of dedicated containers: mu-app id -> node id."""

    x: dict[int, int] = field(default_factory=dict)


@dataclass
class LambdaWeights:
    """Per-broker dispatch weights over compute nodes plus the aggregate
    request rate leaving each broker. Brokers without lambda traffic carry an
    all-zero row."""

    w: dict[int, dict[int, Fraction]]
    broker_rates: dict[int, Fraction] = field(default_factory=dict)


class Constraint(Enum):
    """The verified constraint families of the allocation problem."""

    BROKER_BINDING = "broker-binding"          # one known broker per app
    MU_ONE_CONTAINER = "mu-one-container"      # every mu-app holds exactly one
    LAMBDA_NO_CONTAINER = "lambda-no-container"
    MU_NODE_CAPACITY = "mu-node-capacity"      # at most alpha*N_j per edge node
    WEIGHT_NONNEGATIVE = "weight-nonnegative"
    WEIGHT_ROW_SUM = "weight-row-sum"          # rows of active brokers sum to 1
    NODE_LOAD_LIMIT = "node-load-limit"        # inbound rate <= beta*S_j


@dataclass(frozen=True)
class Violation:
    constraint: Constraint
    subject: int | tuple
    detail: str


def broker_request_rate(instance: AllocationInstance, broker: int) -> Fraction:
    """Aggregate request rate exiting a broker (sum over its lambda apps)."""
    if broker not in instance.cost.broker_ids:
        raise KeyError(f"unknown broker {broker}")
    return sum(
        (a.request_rate for a in instance.apps if a.mode is Mode.LAMBDA and a.broker == broker),
        Fraction(0),
    )


def mu_occupancy(mu: MuAssignment) -> dict[int, int]:
    counts: dict[int, int] = defaultdict(int)
    for node in mu.x.values():
        counts[node] += 1
    return dict(counts)


def available_service_rate(instance: AllocationInstance, node: int, mu: MuAssignment) -> Fraction:
    """Service rate a node can still offer to lambda traffic: per-container
    rate times the containers not held by mu-apps."""
    occupied = sum(1 for v in mu.x.values() if v == node)
    total = instance.capacities[node]
    if occupied > total:
        raise InconsistencyError(f"node {node} hosts {occupied} mu-containers but owns {total}")
    return instance.service_rates[node] * (total - occupied)


def _cost_scale(cost: CostMatrix) -> int:
    denoms = [c.denominator for c in cost.hops.values()] + [cost.cloud_cost.denominator]
    return math.lcm(*denoms)


def solve_mu_assignment(instance: AllocationInstance) -> tuple[MuAssignment, Fraction]:
    """Minimum-cost placement of all mu-apps, at most floor(alpha*N_j)
    containers per edge node, overflow absorbed by the cloud. Exact optimum
    via the slot-expanded assignment problem; ties resolved toward lower node
    ids, then lower app ids."""
    cost = instance.cost
    mu_apps = sorted(instance.mu_apps, key=lambda a: a.id)
    if not mu_apps:
        return MuAssignment({}), Fraction(0)

    edge_ids = cost.edge_ids
    rank = {j: r for r, j in enumerate(edge_ids)}
    rank[CLOUD_ID] = len(edge_ids)
    scale = _cost_scale(cost)

    slot_nodes: list[int] = []
    for j in edge_ids:
        slot_nodes.extend([j] * math.floor(instance.alpha * instance.capacities[j]))
    slot_nodes.extend([CLOUD_ID] * len(mu_apps))

    # Secondary rank objective folded in below a factor that keeps the primary
    # cost order intact; integers stay exact in float64.
    big = len(mu_apps) * (len(edge_ids) + 1) + 1
    row_cache: dict[int, np.ndarray] = {}
    for broker in {a.broker for a in mu_apps}:
        row = [int(cost.cost(broker, j) * scale) * big + rank[j] for j in slot_nodes]
        row_cache[broker] = np.array(row, dtype=np.float64)
    matrix = np.stack([row_cache[a.broker] for a in mu_apps])
    if matrix.max() >= 2**53:
        raise ConfigError("cost values too large for exact assignment arithmetic")

    rows, cols = linear_sum_assignment(matrix)
    raw = {mu_apps[r].id: slot_nodes[c] for r, c in zip(rows, cols)}

    # Apps sharing a broker see identical costs: re-pair so lower app ids get
    # the cheaper/lower-ranked nodes of the group, canonically.
    by_broker: dict[int, list[App]] = defaultdict(list)
    for a in mu_apps:
        by_broker[a.broker].append(a)
    assignment: dict[int, int] = {}
    for broker, group in by_broker.items():
        nodes = sorted((raw[a.id] for a in group), key=lambda n: (cost.cost(broker, n), rank[n]))
        for a, node in zip(sorted(group, key=lambda g: g.id), nodes):
            assignment[a.id] = node

    total = sum((cost.cost(a.broker, assignment[a.id]) for a in mu_apps), Fraction(0))
    return MuAssignment(assignment), total


class _MinCostFlow:
    """Successive shortest paths with Dijkstra over reduced costs. Capacities
    and costs must be non-negative integers."""

    def __init__(self, n: int):
        self.n = n
        self.graph: list[list[list]] = [[] for _ in range(n)]

    def add_arc(self, u: int, v: int, cap: int, cost: int) -> tuple[int, int]:
        self.graph[u].append([v, cap, cost, len(self.graph[v])])
        self.graph[v].append([u, 0, -cost, len(self.graph[u]) - 1])
        return u, len(self.graph[u]) - 1

    def flow_on(self, arc_ref: tuple[int, int]) -> int:
        u, idx = arc_ref
        arc = self.graph[u][idx]
        return self.graph[arc[0]][arc[3]][1]  # reverse residual = pushed flow

    def run(self, source: int, sink: int, demand: int) -> int:
        graph = self.graph
        potential = [0] * self.n
        flow = 0
        while flow < demand:
            dist: list = [None] * self.n
            dist[source] = 0
            prev: list = [None] * self.n
            heap = [(0, source)]
            while heap:
                d, u = heappop(heap)
                if d > dist[u]:
                    continue
                for idx, arc in enumerate(graph[u]):
                    v, cap, cost, _ = arc
                    if cap <= 0:
                        continue
                    nd = d + cost + potential[u] - potential[v]
                    if dist[v] is None or nd < dist[v]:
                        dist[v] = nd
                        prev[v] = (u, idx)
                        heappush(heap, (nd, v))
            if dist[sink] is None:
                break
            for v in range(self.n):
                if dist[v] is not None:
                    potential[v] += dist[v]
            push = demand - flow
            v = sink
            while v != source:
                u, idx = prev[v]
                push = min(push, graph[u][idx][1])
                v = u
            v = sink
            while v != source:
                u, idx = prev[v]
                arc = graph[u][idx]
                arc[1] -= push
                graph[v][arc[3]][1] += push
                v = u
            flow += push
        return flow


def solve_lambda_transportation(
    instance: AllocationInstance, mu: MuAssignment
) -> tuple[LambdaWeights, Fraction]:
    """Minimum-cost spread of broker request rates over the service capacity
    mu-apps left available, capped at beta*S_j per node. Solved as an integral
    min-cost flow after scaling rates and capacities by their least common
    denominator; weights are recovered as exact fractions."""
    cost = instance.cost
    node_ids = cost.node_ids
    brokers = cost.broker_ids

    rates: dict[int, Fraction] = defaultdict(lambda: Fraction(0))
    for a in instance.apps:
        if a.mode is Mode.LAMBDA:
            rates[a.broker] += a.request_rate
    broker_rates = {i: rates[i] for i in brokers}
    caps = {j: instance.beta * available_service_rate(instance, j, mu) for j in node_ids}

    zero_row = {j: Fraction(0) for j in node_ids}
    weights = {i: dict(zero_row) for i in brokers}
    active = [i for i in brokers if broker_rates[i] > 0]
    if not active:
        return LambdaWeights(weights, broker_rates), Fraction(0)

    denoms = [broker_rates[i].denominator for i in active]
    denoms += [caps[j].denominator for j in node_ids]
    rate_scale = math.lcm(*denoms)
    cost_scale = _cost_scale(cost)

    demand = {i: int(broker_rates[i] * rate_scale) for i in active}
    cap_int = {j: int(caps[j] * rate_scale) for j in node_ids}
    total_demand = sum(demand.values())

    rank = {j: r for r, j in enumerate(node_ids[:-1])}
    rank[CLOUD_ID] = len(node_ids) - 1
    big = len(node_ids) * total_demand + 1

    n = 2 + len(active) + len(node_ids)
    source, sink = 0, n - 1
    broker_vertex = {i: 1 + k for k, i in enumerate(active)}
    node_vertex = {j: 1 + len(active) + k for k, j in enumerate(node_ids)}

    mcf = _MinCostFlow(n)
    arc_refs: dict[tuple[int, int], tuple[int, int]] = {}
    for i in active:
        mcf.add_arc(source, broker_vertex[i], demand[i], 0)
    for j in node_ids:
        if cap_int[j] <= 0:
            continue
        for i in active:
            c = int(cost.cost(i, j) * cost_scale)
            arc_refs[(i, j)] = mcf.add_arc(broker_vertex[i], node_vertex[j], demand[i], c * big + rank[j])
        mcf.add_arc(node_vertex[j], sink, cap_int[j], 0)

    pushed = mcf.run(source, sink, total_demand)
    if pushed < total_demand:
        residual = Fraction(total_demand - pushed, rate_scale)
        raise InfeasibleError(
            f"lambda demand exceeds available capacity by {residual}", residual_demand=residual
        )

    objective = Fraction(0)
    for (i, j), ref in arc_refs.items():
        f = mcf.flow_on(ref)
        if f:
            weights[i][j] = Fraction(f, demand[i])
            objective += cost.cost(i, j) * Fraction(f, rate_scale)
    return LambdaWeights(weights, broker_rates), objective


@dataclass
class JointSolution:
    mu: MuAssignment
    weights: LambdaWeights
    mu_cost: Fraction
    lambda_cost: Fraction
    combined_cost: Fraction
    omega: Fraction


def solve_joint(instance: AllocationInstance) -> JointSolution:
    """Sequential decomposition: place mu containers first, then balance the
    lambda load on what remains. The combined scalar uses a display-only
    dominance factor; the ordering itself is enforced by sequencing."""
    mu, mu_cost = solve_mu_assignment(instance)
    weights, lambda_cost = solve_lambda_transportation(instance, mu)
    cost = instance.cost
    all_costs = list(cost.hops.values()) + [cost.cloud_cost]
    total_rate = sum(weights.broker_rates.values(), Fraction(0))
    omega = 1 + total_rate * max(all_costs) / min(all_costs)
    return JointSolution(
        mu=mu,
        weights=weights,
        mu_cost=mu_cost,
        lambda_cost=lambda_cost,
        combined_cost=omega * mu_cost + lambda_cost,
        omega=omega,
    )


def verify(instance: AllocationInstance, mu: MuAssignment, weights: LambdaWeights) -> list[Violation]:
    """Check every constraint family on a candidate solution; the returned
    list is empty exactly when all of them hold (exact arithmetic)."""
    out: list[Violation] = []
    cost = instance.cost
    brokers = set(cost.broker_ids)
    node_ids = set(cost.node_ids)
    apps_by_id = {a.id: a for a in instance.apps}

    for a in instance.apps:
        if a.broker not in brokers:
            out.append(Violation(Constraint.BROKER_BINDING, a.id, f"unknown broker {a.broker}"))

    for a in instance.apps:
        if a.mode is Mode.MU and a.id not in mu.x:
            out.append(Violation(Constraint.MU_ONE_CONTAINER, a.id, "mu-app holds no container"))
    for k, node in mu.x.items():
        app = apps_by_id.get(k)
        if app is None:
            out.append(Violation(Constraint.MU_ONE_CONTAINER, k, "container held by unknown app"))
        elif app.mode is Mode.LAMBDA:
            out.append(Violation(Constraint.LAMBDA_NO_CONTAINER, k, f"lambda-app holds node {node}"))
        if node not in node_ids:
            out.append(Violation(Constraint.MU_ONE_CONTAINER, k, f"container on unknown node {node}"))

    occupancy = mu_occupancy(mu)
    for j in cost.edge_ids:
        cap = instance.alpha * instance.capacities[j]
        if occupancy.get(j, 0) > cap:
            out.append(
                Violation(
                    Constraint.MU_NODE_CAPACITY,
                    j,
                    f"{occupancy.get(j, 0)} mu-containers exceed cap {cap}",
                )
            )
    cloud_occ = occupancy.get(CLOUD_ID, 0)
    if cloud_occ > instance.capacities[CLOUD_ID]:
        out.append(
            Violation(Constraint.MU_NODE_CAPACITY, CLOUD_ID, f"cloud over capacity: {cloud_occ}")
        )

    rates = {i: broker_request_rate(instance, i) for i in cost.broker_ids}
    for i, row in weights.w.items():
        for j, wij in row.items():
            if wij < 0:
                out.append(Violation(Constraint.WEIGHT_NONNEGATIVE, (i, j), f"w = {wij}"))
    for i in cost.broker_ids:
        if rates[i] <= 0:
            continue  # idle brokers keep an all-zero row
        row_sum = sum(weights.w.get(i, {}).values(), Fraction(0))
        if row_sum != 1:
            out.append(Violation(Constraint.WEIGHT_ROW_SUM, i, f"weights sum to {row_sum}"))

    for j in cost.node_ids:
        inbound = Fraction(0)
        for i in cost.broker_ids:
            inbound += weights.w.get(i, {}).get(j, Fraction(0)) * rates[i]
        occupied = min(occupancy.get(j, 0), instance.capacities[j])
        limit = instance.beta * instance.service_rates[j] * (instance.capacities[j] - occupied)
        if inbound > limit:
            out.append(
                Violation(Constraint.NODE_LOAD_LIMIT, j, f"inbound rate {inbound} > {limit}")
            )
    return out


# Line-oriented instance / CSV solution formats -------------------------------


def save_instance(instance: AllocationInstance) -> str:
    lines = ["instance v1"]
    lines.append(f"param alpha {instance.alpha}")
    lines.append(f"param beta {instance.beta}")
    for a in sorted(instance.apps, key=lambda a: a.id):
        lines.append(f"app {a.id} {a.broker} {a.mode.value} {a.request_rate}")
    return "\n".join(lines) + "\n"


def load_instance(text: str, topo: Topology) -> AllocationInstance:
    alpha = beta = None
    apps: list[App] = []
    header_seen = False
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if not header_seen:
            if line != "instance v1":
                raise ParseError("expected header 'instance v1'", lineno)
            header_seen = True
            continue
        fields = line.split()
        if fields[0] == "param" and len(fields) == 3:
            try:
                value = Fraction(fields[2])
            except (ValueError, ZeroDivisionError):
                raise ParseError(f"bad parameter value {fields[2]!r}", lineno) from None
            if fields[1] == "alpha":
                alpha = value
            elif fields[1] == "beta":
                beta = value
            else:
                raise ParseError(f"unknown parameter {fields[1]!r}", lineno)
        elif fields[0] == "app" and len(fields) == 5:
            try:
                mode = Mode(fields[3])
                apps.append(App(int(fields[1]), int(fields[2]), mode, Fraction(fields[4])))
            except (ValueError, ZeroDivisionError):
                raise ParseError("bad app line", lineno) from None
        else:
            raise ParseError(f"unknown directive {fields[0]!r}", lineno)
    if not header_seen:
        raise ParseError("empty instance file", 1)
    if alpha is None or beta is None:
        raise ParseError("missing alpha/beta parameters")
    try:
        return build_instance(topo, apps, alpha, beta)
    except ConfigError as exc:
        raise ParseError(str(exc)) from exc


def save_solution(mu: MuAssignment, weights: LambdaWeights) -> str:
    lines = []
    for k in sorted(mu.x):
        lines.append(f"x,{k},{mu.x[k]}")
    for i in sorted(weights.w):
        for j in sorted(weights.w[i]):
            lines.append(f"w,{i},{j},{weights.w[i][j]}")
    return "\n".join(lines) + "\n"


def load_solution(text: str) -> tuple[MuAssignment, LambdaWeights]:
    x: dict[int, int] = {}
    w: dict[int, dict[int, Fraction]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        try:
            if parts[0] == "x" and len(parts) == 3:
                x[int(parts[1])] = int(parts[2])
            elif parts[0] == "w" and len(parts) == 4:
                w.setdefault(int(parts[1]), {})[int(parts[2])] = Fraction(parts[3])
            else:
                raise ValueError
        except (ValueError, ZeroDivisionError):
            raise ParseError(f"bad solution row {line!r}", lineno) from None
    return MuAssignment(x), LambdaWeights(w)
