"""The two experiment harnesses: snapshot Monte-Carlo over random app
populations, and trace-driven dynamic runs where an orchestrator re-optimizes
periodically (epochs) and handles asynchronous mode events best-effort in
between.

Replications are independent with per-replication random streams derived from
(seed, replication); they may run in any order and merge deterministically.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from functools import partial
from multiprocessing import get_context

import numpy as np

from .allocation import (
    App,
    LambdaWeights,
    Mode,
    MuAssignment,
    build_instance,
    solve_joint,
    verify,
)
from .errors import ConfigError, InconsistencyError, InfeasibleError, StateError
from .policy import AppTrace, PolicyParams, hybrid_schedule, optimal_schedule
from .topology import CLOUD_ID, CostMatrix, Topology, compute_cost_matrix
from .traces import TraceSet, wrap_offset

MS_PER_HOUR = 3_600_000


@dataclass(frozen=True)
class Summary:
    mean: float
    ci95: float  # normal-approximation 95% half width
    n: int


def summarize(values) -> Summary | None:
    values = [v for v in values if v is not None]
    if not values:
        return None
    arr = np.asarray(values, dtype=float)
    half = 1.96 * arr.std(ddof=1) / math.sqrt(len(arr)) if len(arr) > 1 else 0.0
    return Summary(float(arr.mean()), float(half), len(arr))


def _pmap(fn, n: int) -> list:
    """Map fn over replication indices, fanning out to worker processes when
    EDGEFAAS_PARALLEL asks for them; results merge in replication order either
    way, so parallelism never changes the output."""
    try:
        workers = max(1, int(os.environ.get("EDGEFAAS_PARALLEL", "1")))
    except ValueError:
        workers = 1
    if workers <= 1 or n <= 1:
        return [fn(rep) for rep in range(n)]
    with get_context("fork").Pool(workers) as pool:
        return pool.map(fn, range(n))


@dataclass(frozen=True)
class SampleRow:
    replication: int
    interval: int | None
    n_lambda: int
    n_mu: int
    lambda_unit_cost: float | None
    mu_cloud_fraction: float | None
    mu_unit_cost: float | None
    migrations: int | None


@dataclass
class Metrics:
    lambda_unit_cost: Summary | None
    mu_cloud_fraction: Summary | None
    mu_unit_cost: Summary | None
    migrations_per_hour: Summary | None
    mu_cost_samples: list[float]
    samples: list[SampleRow]
    failures: int = 0


# Snapshot experiments ---------------------------------------------------------


@dataclass
class SnapshotConfig:
    topology: Topology
    mean_lambda_apps: float
    mean_mu_apps: float
    alpha: Fraction
    beta: Fraction
    replications: int
    seed: int
    verify_each: bool = False

    def __post_init__(self):
        self.alpha = Fraction(self.alpha)
        self.beta = Fraction(self.beta)
        if self.replications < 1:
            raise ConfigError("need at least one replication")


def _snapshot_replication(cfg: SnapshotConfig, cost: CostMatrix, rep: int):
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, rep)))
    brokers = cost.broker_ids
    n_lambda = int(rng.poisson(cfg.mean_lambda_apps))
    n_mu = int(rng.poisson(cfg.mean_mu_apps))
    apps = [
        App(k, brokers[int(rng.integers(len(brokers)))], Mode.LAMBDA, Fraction(1))
        for k in range(n_lambda)
    ]
    apps += [
        App(n_lambda + k, brokers[int(rng.integers(len(brokers)))], Mode.MU, Fraction(1))
        for k in range(n_mu)
    ]
    if not apps:
        return SampleRow(rep, None, 0, 0, None, None, None, None)
    try:
        instance = build_instance(cfg.topology, apps, cfg.alpha, cfg.beta, cost=cost)
        solution = solve_joint(instance)
    except (InfeasibleError, InconsistencyError):
        return None  # counted as a failed replication
    if cfg.verify_each:
        violations = verify(instance, solution.mu, solution.weights)
        if violations:
            raise InconsistencyError(f"replication {rep}: {violations[0].detail}")
    lam_unit = float(solution.lambda_cost / n_lambda) if n_lambda else None
    cloud_frac = sum(1 for v in solution.mu.x.values() if v == CLOUD_ID) / n_mu if n_mu else None
    return SampleRow(rep, None, n_lambda, n_mu, lam_unit, cloud_frac, None, None)


def run_snapshot(cfg: SnapshotConfig) -> Metrics:
    """Monte-Carlo: draw Poisson app populations on uniform random brokers,
    solve each snapshot once, aggregate unit lambda cost and the cloud share
    of mu placements with 95% confidence intervals."""
    cost = compute_cost_matrix(cfg.topology)
    results = _pmap(partial(_snapshot_replication, cfg, cost), cfg.replications)
    rows = [r for r in results if r is not None]
    failures = sum(1 for r in results if r is None)
    return Metrics(
        lambda_unit_cost=summarize([r.lambda_unit_cost for r in rows]),
        mu_cloud_fraction=summarize([r.mu_cloud_fraction for r in rows]),
        mu_unit_cost=None,
        migrations_per_hour=None,
        mu_cost_samples=[],
        samples=rows,
        failures=failures,
    )


# Dynamic experiments ----------------------------------------------------------


class EventKind(Enum):
    LAMBDA_ACTIVATE = "lambda-activate"
    MU_ACTIVATE = "mu-activate"
    LAMBDA_DEACTIVATE = "lambda-deactivate"
    MU_DEACTIVATE = "mu-deactivate"
    MU_TO_LAMBDA = "mu-to-lambda"
    LAMBDA_TO_MU = "lambda-to-mu"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    app: int
    broker: int | None = None  # required for activations


@dataclass(frozen=True)
class SimContext:
    cost: CostMatrix
    mu_caps: dict[int, int]  # per-edge-node cap on dedicated containers


@dataclass
class SimState:
    """Orchestrator state between epochs: live placements and weights, the
    active population, and running cost accumulators. The rate fields are the
    instantaneous sums an event loop integrates over time."""

    mu: MuAssignment = field(default_factory=MuAssignment)
    weights: LambdaWeights | None = None
    apps: dict[int, tuple[int, Mode]] = field(default_factory=dict)
    lambda_unit: dict[int, float] = field(default_factory=dict)
    occupancy: dict[int, int] = field(default_factory=dict)
    lambda_cost_rate: float = 0.0
    lambda_rate: float = 0.0
    mu_cost_rate: float = 0.0
    migrations: int = 0
    cloud_assignments: int = 0

    @property
    def n_lambda(self) -> int:
        return sum(1 for _, m in self.apps.values() if m is Mode.LAMBDA)

    @property
    def n_mu(self) -> int:
        return sum(1 for _, m in self.apps.values() if m is Mode.MU)


def _cheapest_free_node(state: SimState, ctx: SimContext, broker: int) -> int:
    best = None
    for j in ctx.cost.edge_ids:
        if state.occupancy.get(j, 0) >= ctx.mu_caps[j]:
            continue
        key = (ctx.cost.cost(broker, j), j)
        if best is None or key < best[0]:
            best = (key, j)
    return best[1] if best else CLOUD_ID


def _add_lambda(state: SimState, ctx: SimContext, app: int, broker: int):
    unit = float(ctx.cost.cloud_cost)  # unknown to the brokers until next epoch
    state.lambda_unit[app] = unit
    state.lambda_cost_rate += unit
    state.lambda_rate += 1.0


def _drop_lambda(state: SimState, app: int):
    state.lambda_cost_rate -= state.lambda_unit.pop(app)
    state.lambda_rate -= 1.0


def _add_mu(state: SimState, ctx: SimContext, app: int, broker: int):
    node = _cheapest_free_node(state, ctx, broker)
    state.mu.x[app] = node
    state.occupancy[node] = state.occupancy.get(node, 0) + 1
    state.mu_cost_rate += float(ctx.cost.cost(broker, node))
    if node == CLOUD_ID:
        state.cloud_assignments += 1


def _drop_mu(state: SimState, ctx: SimContext, app: int, broker: int):
    node = state.mu.x.pop(app)
    state.occupancy[node] -= 1
    state.mu_cost_rate -= float(ctx.cost.cost(broker, node))


def handle_event(state: SimState, event: Event, ctx: SimContext) -> SimState:
    """Apply one best-effort rule between epochs: new lambda traffic goes to
    the cloud until the next optimization; new dedicated containers take the
    cheapest edge node with spare capacity, else the cloud, without touching
    existing placements; deactivations free what they held."""
    kind, app = event.kind, event.app
    if kind in (EventKind.LAMBDA_ACTIVATE, EventKind.MU_ACTIVATE):
        if app in state.apps:
            raise StateError(f"app {app} already active")
        if event.broker is None:
            raise ConfigError("activation events need a broker")
        broker = event.broker
        if kind is EventKind.LAMBDA_ACTIVATE:
            state.apps[app] = (broker, Mode.LAMBDA)
            _add_lambda(state, ctx, app, broker)
        else:
            state.apps[app] = (broker, Mode.MU)
            _add_mu(state, ctx, app, broker)
        return state

    if app not in state.apps:
        raise KeyError(f"app {app} is not active")
    broker, mode = state.apps[app]

    if kind is EventKind.LAMBDA_DEACTIVATE:
        if mode is not Mode.LAMBDA:
            raise StateError(f"app {app} is not in lambda mode")
        _drop_lambda(state, app)
        del state.apps[app]
    elif kind is EventKind.MU_DEACTIVATE:
        if mode is not Mode.MU:
            raise StateError(f"app {app} is not in mu mode")
        _drop_mu(state, ctx, app, broker)
        del state.apps[app]
    elif kind is EventKind.MU_TO_LAMBDA:
        if mode is not Mode.MU:
            raise StateError(f"app {app} is not in mu mode")
        _drop_mu(state, ctx, app, broker)
        state.apps[app] = (broker, Mode.LAMBDA)
        _add_lambda(state, ctx, app, broker)
    elif kind is EventKind.LAMBDA_TO_MU:
        if mode is not Mode.LAMBDA:
            raise StateError(f"app {app} is not in lambda mode")
        _drop_lambda(state, app)
        state.apps[app] = (broker, Mode.MU)
        _add_mu(state, ctx, app, broker)
    else:
        raise ConfigError(f"unknown event kind {kind}")
    return state


def count_migrations(prev: MuAssignment, new: MuAssignment) -> int:
    """Apps holding a container in both assignments whose node changed;
    activations and deactivations do not count."""
    return sum(1 for k, node in prev.x.items() if k in new.x and new.x[k] != node)


@dataclass
class DynamicConfig:
    topology: Topology
    mean_apps: float
    epoch_ms: int
    sim_time_ms: int
    traces: TraceSet
    policy: PolicyParams
    alpha: Fraction
    beta: Fraction
    replications: int
    seed: int
    lookahead: int = 50
    pattern: str = "dp"  # dp | heuristic
    verify_each: bool = False

    def __post_init__(self):
        self.alpha = Fraction(self.alpha)
        self.beta = Fraction(self.beta)
        if self.epoch_ms <= 0 or self.sim_time_ms <= 0:
            raise ConfigError("epoch and simulated time must be positive")
        if self.replications < 1:
            raise ConfigError("need at least one replication")
        if self.pattern not in ("dp", "heuristic"):
            raise ConfigError("pattern must be 'dp' or 'heuristic'")
        if not self.traces.per_app:
            raise ConfigError("dynamic simulation needs a non-empty trace set")


def _apply_optimization(state: SimState, ctx: SimContext, cfg: DynamicConfig, cost) -> int:
    """Re-solve the allocation for the currently active apps, replace live
    placements and weights, and return the number of moved containers."""
    apps = [App(k, broker, mode, Fraction(1)) for k, (broker, mode) in sorted(state.apps.items())]
    if not apps:
        migrated = 0
        state.mu = MuAssignment({})
        state.weights = None
        state.occupancy = {}
        state.mu_cost_rate = 0.0
        return migrated
    instance = build_instance(cfg.topology, apps, cfg.alpha, cfg.beta, cost=cost)
    solution = solve_joint(instance)
    if cfg.verify_each:
        violations = verify(instance, solution.mu, solution.weights)
        if violations:
            raise InconsistencyError(f"constraint violated after epoch: {violations[0]}")
    migrated = count_migrations(state.mu, solution.mu)

    state.mu = solution.mu
    state.weights = solution.weights
    occupancy: dict[int, int] = {}
    mu_cost_rate = 0.0
    for k, node in solution.mu.x.items():
        occupancy[node] = occupancy.get(node, 0) + 1
        mu_cost_rate += float(cost.cost(state.apps[k][0], node))
    state.occupancy = occupancy
    state.mu_cost_rate = mu_cost_rate

    broker_unit = {
        i: float(sum((w * cost.cost(i, j) for j, w in row.items()), Fraction(0)))
        for i, row in solution.weights.w.items()
    }
    lambda_cost_rate = 0.0
    for k, (broker, mode) in state.apps.items():
        if mode is Mode.LAMBDA:
            state.lambda_unit[k] = broker_unit[broker]
            lambda_cost_rate += broker_unit[broker]
    state.lambda_cost_rate = lambda_cost_rate
    state.migrations += migrated
    return migrated


_PRIO_APP, _PRIO_DEACTIVATE, _PRIO_TICK = 0, 1, 2


def _dynamic_replication(cfg: DynamicConfig, cost, rep: int):
    """One event-driven replication; returns per-interval samples (warm-up
    interval dropped) and the replication's migrations-per-hour, or None when
    fewer than two epochs fit."""
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, rep)))
    n_apps = int(rng.poisson(cfg.mean_apps))
    if n_apps == 0:
        return [], None
    pool = [cfg.traces.per_app[a] for a in sorted(cfg.traces.per_app)]
    brokers = cost.broker_ids

    events = []
    seq = 0
    for k in range(n_apps):
        broker = brokers[int(rng.integers(len(brokers)))]
        source = pool[int(rng.integers(len(pool)))]
        offset = int(rng.integers(0, source.span + 1))
        wrapped = wrap_offset(source, offset, cfg.sim_time_ms)
        if not wrapped.events:
            continue
        trace = AppTrace(k, wrapped.events)
        if cfg.pattern == "dp":
            pattern = optimal_schedule(trace, cfg.policy)
        else:
            pattern = hybrid_schedule(trace, cfg.policy, cfg.lookahead)
        first_time, first_mode = pattern.segments[0]
        kind = EventKind.LAMBDA_ACTIVATE if first_mode is Mode.LAMBDA else EventKind.MU_ACTIVATE
        events.append((first_time, _PRIO_APP, k, seq, Event(kind, k, broker)))
        seq += 1
        for t, m in pattern.segments[1:]:
            kind = EventKind.LAMBDA_TO_MU if m is Mode.MU else EventKind.MU_TO_LAMBDA
            events.append((t, _PRIO_APP, k, seq, Event(kind, k)))
            seq += 1
        events.append((trace.events[-1][0], _PRIO_DEACTIVATE, k, seq, None))
        seq += 1

    n_intervals = math.ceil(cfg.sim_time_ms / cfg.epoch_ms)
    for tick_idx in range(n_intervals):
        events.append((tick_idx * cfg.epoch_ms, _PRIO_TICK, -1, seq, tick_idx))
        seq += 1
    events.append((cfg.sim_time_ms, _PRIO_TICK, -1, seq, n_intervals))
    events.sort(key=lambda e: e[:4])

    caps = {n.id: math.floor(cfg.alpha * n.containers) for n in cfg.topology.edge_nodes}
    ctx = SimContext(cost=cost, mu_caps=caps)
    state = SimState()

    samples = []
    migration_total = 0
    now = 0
    acc_lambda_cost = acc_lambda_rate = acc_mu_cost = acc_mu_time = 0.0
    interval_idx = -1
    pending_migrations = 0

    for time, prio, app, _seq, payload in events:
        if time > now:
            dt = time - now
            acc_lambda_cost += state.lambda_cost_rate * dt
            acc_lambda_rate += state.lambda_rate * dt
            acc_mu_cost += state.mu_cost_rate * dt
            acc_mu_time += len(state.mu.x) * dt
            now = time
        if prio == _PRIO_TICK:
            if interval_idx >= 1:  # close the interval; the first one is warm-up
                samples.append(
                    SampleRow(
                        replication=rep,
                        interval=interval_idx,
                        n_lambda=state.n_lambda,
                        n_mu=state.n_mu,
                        lambda_unit_cost=(
                            acc_lambda_cost / acc_lambda_rate if acc_lambda_rate > 0 else None
                        ),
                        mu_cloud_fraction=None,
                        mu_unit_cost=acc_mu_cost / acc_mu_time if acc_mu_time > 0 else None,
                        migrations=pending_migrations,
                    )
                )
                migration_total += pending_migrations
            acc_lambda_cost = acc_lambda_rate = acc_mu_cost = acc_mu_time = 0.0
            interval_idx = payload
            if interval_idx < n_intervals:  # the sentinel at sim end only closes
                pending_migrations = _apply_optimization(state, ctx, cfg, cost)
        elif prio == _PRIO_DEACTIVATE:
            broker, mode = state.apps[app]
            kind = (
                EventKind.LAMBDA_DEACTIVATE if mode is Mode.LAMBDA else EventKind.MU_DEACTIVATE
            )
            handle_event(state, Event(kind, app), ctx)
        else:
            handle_event(state, payload, ctx)

    counted_ms = cfg.sim_time_ms - cfg.epoch_ms
    rate = migration_total / (counted_ms / MS_PER_HOUR) if counted_ms > 0 else None
    return samples, rate


def run_dynamic(cfg: DynamicConfig) -> Metrics:
    """Trace-driven dynamic experiment over all replications; the first epoch
    of every replication is discarded as warm-up."""
    cost = compute_cost_matrix(cfg.topology)
    rows: list[SampleRow] = []
    rates: list[float] = []
    for samples, rate in _pmap(partial(_dynamic_replication, cfg, cost), cfg.replications):
        rows.extend(samples)
        if rate is not None:
            rates.append(rate)
    mu_samples = [r.mu_unit_cost for r in rows if r.mu_unit_cost is not None]
    return Metrics(
        lambda_unit_cost=summarize([r.lambda_unit_cost for r in rows]),
        mu_cloud_fraction=None,
        mu_unit_cost=summarize(mu_samples),
        migrations_per_hour=summarize(rates),
        mu_cost_samples=mu_samples,
        samples=rows,
        failures=0,
    )
