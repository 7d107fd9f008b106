"""Per-application cost model for the two operation modes and the
mode-switching policies built on it.

A stateful (mu) interval is billed per held time unit; a stateless (lambda)
invocation is billed per call plus the storage access it makes. The switching
policies trade those against the two migration fees. All arithmetic is exact:
monetary parameters are fractions and the schedulers run on a common integer
scale internally.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

from .allocation import Mode
from .errors import ConfigError


class Access(Enum):
    READ = "R"
    WRITE = "W"
    NONE = "-"


def _as_fraction(value) -> Fraction:
    if isinstance(value, float):
        return Fraction(repr(value))  # decimal-faithful, not binary expansion
    return Fraction(value)


@dataclass(frozen=True)
class PolicyParams:
    """Monetary coefficients (units of 1e-6 $): per-invocation fee, read and
    write storage fees, stateful holding fee per time unit, and the two
    migration fees."""

    xi_lambda: Fraction
    sigma_r: Fraction
    sigma_w: Fraction
    omega_mu: Fraction
    tau_lambda: Fraction
    tau_mu: Fraction

    def __post_init__(self):
        for name in ("xi_lambda", "sigma_r", "sigma_w", "omega_mu", "tau_lambda", "tau_mu"):
            value = _as_fraction(getattr(self, name))
            if value < 0:
                raise ConfigError(f"{name} must be non-negative")
            object.__setattr__(self, name, value)

    @classmethod
    def default(cls) -> "PolicyParams":
        # Public edge-FaaS price points; migration fee is twice the cost of
        # one invocation plus one read plus one write.
        return cls(
            xi_lambda=Fraction("0.6"),
            sigma_r=Fraction("0.4"),
            sigma_w=Fraction(5),
            omega_mu=Fraction("6.3e-6"),
            tau_lambda=Fraction(12),
            tau_mu=Fraction(12),
        )

    @classmethod
    def from_mapping(cls, mapping) -> "PolicyParams":
        params = {f: getattr(cls.default(), f) for f in cls.__dataclass_fields__}
        for key, value in mapping.items():
            if key not in params:
                raise ConfigError(f"unknown policy parameter {key!r}")
            params[key] = _as_fraction(value)
        return cls(**params)


@dataclass
class AppTrace:
    """Time-ordered invocation events of one application."""

    app: object
    events: list[tuple[int, Access]]

    def __post_init__(self):
        for (t0, _), (t1, _) in zip(self.events, self.events[1:]):
            if t1 < t0:
                raise ConfigError("trace timestamps must be non-decreasing")

    @property
    def span(self) -> int:
        return self.events[-1][0] - self.events[0][0] if self.events else 0


@dataclass
class ModePattern:
    """Alternating mode segments (start time, mode) with the schedule's total
    cost, migration fees included."""

    segments: list[tuple[int, Mode]]
    total_cost: Fraction

    def __post_init__(self):
        for (t0, m0), (t1, m1) in zip(self.segments, self.segments[1:]):
            if m0 is m1:
                raise ConfigError("consecutive segments must alternate modes")
            if t1 < t0:
                raise ConfigError("segment start times must be non-decreasing")

    @property
    def n_migrations(self) -> int:
        return len(self.segments) - 1

    def mode_at(self, t: int) -> Mode | None:
        current = None
        for start, mode in self.segments:
            if start > t:
                break
            current = mode
        return current


@dataclass(frozen=True)
class PolicyResult:
    cost_lambda_only: Fraction
    cost_mu_only: Fraction
    cost_hybrid: Fraction
    cost_optimal: Fraction
    n_migrations: int
    pattern: ModePattern


def cost_stateful(duration, p: PolicyParams) -> Fraction:
    """Holding fee for a dedicated container over `duration` time units."""
    if duration < 0:
        raise ConfigError("duration must be non-negative")
    return p.omega_mu * duration


def cost_stateless(n_reads: int, n_writes: int, p: PolicyParams) -> Fraction:
    """Invocation plus storage fees for the given access counts."""
    return p.xi_lambda * (n_reads + n_writes) + p.sigma_r * n_reads + p.sigma_w * n_writes


def _scaled(p: PolicyParams):
    """Common integer scale for exact schedule arithmetic: (scale, price per
    event by access, holding fee, both migration fees)."""
    scale = math.lcm(
        p.xi_lambda.denominator,
        p.sigma_r.denominator,
        p.sigma_w.denominator,
        p.omega_mu.denominator,
        p.tau_lambda.denominator,
        p.tau_mu.denominator,
    )
    event_price = {
        Access.READ: int((p.xi_lambda + p.sigma_r) * scale),
        Access.WRITE: int((p.xi_lambda + p.sigma_w) * scale),
        Access.NONE: int(p.xi_lambda * scale),
    }
    return scale, event_price, int(p.omega_mu * scale), int(p.tau_lambda * scale), int(p.tau_mu * scale)


_FROM_LAMBDA, _FROM_MU_HELD, _FROM_MU_DIPPED = 0, 1, 2


def optimal_schedule(trace: AppTrace, p: PolicyParams) -> ModePattern:
    """Exact minimum-cost mode schedule: two-state dynamic program over the
    invocation sequence. Switches happen only at invocation instants; the
    initial mode is free, so every constant schedule is a feasible path.
    Between two stateful invocations the cheaper of holding the container and
    dipping to stateless (both migration fees, no holding) is taken."""
    if not trace.events:
        raise ConfigError("empty trace")
    scale, price, hold, tau_l, tau_m = _scaled(p)
    times = [t for t, _ in trace.events]
    costs = [price[a] for _, a in trace.events]
    n = len(times)

    dp_l = costs[0]
    dp_m = 0
    from_l: list[int] = []
    from_m: list[int] = []
    for i in range(1, n):
        gap = times[i] - times[i - 1]
        stay_l, enter_l = dp_l, dp_m + tau_l
        if stay_l <= enter_l:
            next_l, src_l = stay_l + costs[i], _FROM_LAMBDA
        else:
            next_l, src_l = enter_l + costs[i], _FROM_MU_HELD
        gap_fee = min(hold * gap, tau_l + tau_m)
        stay_m, enter_m = dp_m + gap_fee, dp_l + tau_m
        if stay_m <= enter_m:
            next_m = stay_m
            src_m = _FROM_MU_HELD if hold * gap <= tau_l + tau_m else _FROM_MU_DIPPED
        else:
            next_m, src_m = enter_m, _FROM_LAMBDA
        dp_l, dp_m = next_l, next_m
        from_l.append(src_l)
        from_m.append(src_m)

    if dp_l <= dp_m:
        mode, total = Mode.LAMBDA, dp_l
    else:
        mode, total = Mode.MU, dp_m
    steps = []  # (mode at invocation i, transition source from i-1)
    for i in range(n - 1, 0, -1):
        src = from_l[i - 1] if mode is Mode.LAMBDA else from_m[i - 1]
        steps.append((mode, src))
        mode = Mode.LAMBDA if src is _FROM_LAMBDA else Mode.MU
    steps.append((mode, None))
    steps.reverse()

    segments = [(times[0], steps[0][0])]
    for i in range(1, n):
        m, src = steps[i]
        if src is _FROM_MU_DIPPED:  # stateless excursion across the gap
            segments.append((times[i - 1], Mode.LAMBDA))
            segments.append((times[i], Mode.MU))
        elif m is not segments[-1][1]:
            segments.append((times[i], m))
    return ModePattern(segments, Fraction(total, scale))


def hybrid_schedule(trace: AppTrace, p: PolicyParams, lookahead: int = 50) -> ModePattern:
    """Prophetic switching heuristic. While stateful, leave right after an
    invocation if holding over the coming gap costs more than migrating and
    serving the next call stateless. While stateless, simulate the next
    `lookahead` invocations under stay-vs-migrate and move to stateful as
    soon as the migrate branch (fee included) reaches break-even. The initial
    mode compares both branches over the first window, fee-free."""
    if not trace.events:
        raise ConfigError("empty trace")
    if lookahead < 1:
        raise ConfigError("lookahead must be at least 1")
    scale, price, hold, tau_l, tau_m = _scaled(p)
    times = [t for t, _ in trace.events]
    costs = [price[a] for _, a in trace.events]
    n = len(times)
    prefix = [0] * (n + 1)
    for i, c in enumerate(costs):
        prefix[i + 1] = prefix[i] + c

    def reaches_break_even(i: int) -> bool:
        for m in range(i, min(i + lookahead, n)):
            if tau_m + hold * (times[m] - times[i]) <= prefix[m + 1] - prefix[i]:
                return True
        return False

    window_end = min(lookahead, n) - 1
    stay_stateless = prefix[window_end + 1]
    stay_stateful = hold * (times[window_end] - times[0])
    mode = Mode.MU if stay_stateful < stay_stateless else Mode.LAMBDA

    segments = [(times[0], mode)]
    total = 0
    for i in range(n):
        if mode is Mode.LAMBDA and reaches_break_even(i):
            mode = Mode.MU
            total += tau_m
            segments.append((times[i], Mode.MU))
        if mode is Mode.LAMBDA:
            total += costs[i]
        if i + 1 < n and mode is Mode.MU:
            gap_fee = hold * (times[i + 1] - times[i])
            if gap_fee > tau_l + costs[i + 1]:
                mode = Mode.LAMBDA
                total += tau_l
                segments.append((times[i], Mode.LAMBDA))
            else:
                total += gap_fee
    return ModePattern(segments, Fraction(total, scale))


def evaluate_policies(trace: AppTrace, p: PolicyParams, lookahead: int = 50) -> PolicyResult:
    """Cost of the four policies on one trace: always-stateless, always-
    stateful over the active span, the switching heuristic, and the exact
    optimum."""
    if not trace.events:
        raise ConfigError("empty trace")
    reads = sum(1 for _, a in trace.events if a is Access.READ)
    writes = sum(1 for _, a in trace.events if a is Access.WRITE)
    bare = sum(1 for _, a in trace.events if a is Access.NONE)
    lam_only = cost_stateless(reads, writes, p) + p.xi_lambda * bare
    mu_only = cost_stateful(trace.span, p)
    hybrid = hybrid_schedule(trace, p, lookahead)
    optimal = optimal_schedule(trace, p)
    return PolicyResult(
        cost_lambda_only=lam_only,
        cost_mu_only=mu_only,
        cost_hybrid=hybrid.total_cost,
        cost_optimal=optimal.total_cost,
        n_migrations=hybrid.n_migrations,
        pattern=hybrid,
    )
