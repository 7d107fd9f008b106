"""Invocation trace ingestion (canonical CSV plus the public 2020 dataset's
column layout) and synthetic two-regime trace generation. Timestamps are
integer milliseconds throughout."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from datetime import datetime, timezone

import numpy as np

from .errors import ConfigError, ParseError
from .policy import Access, AppTrace

CANONICAL_HEADER = ("timestamp_ms", "user", "app", "access")


@dataclass(frozen=True)
class TraceRecord:
    timestamp: int
    user: str
    app: str
    access: Access

    def __post_init__(self):
        if self.access not in (Access.READ, Access.WRITE):
            raise ConfigError("trace records flag exactly read or write")


@dataclass
class TraceSet:
    records: list[TraceRecord]
    per_app: dict[str, AppTrace] = field(init=False)

    def __post_init__(self):
        self.records = sorted(
            self.records, key=lambda r: (r.timestamp, r.app, r.user, r.access.value)
        )
        per_app: dict[str, list[tuple[int, Access]]] = {}
        for r in self.records:
            per_app.setdefault(r.app, []).append((r.timestamp, r.access))
        self.per_app = {app: AppTrace(app, events) for app, events in per_app.items()}

    def read_share(self) -> float:
        if not self.records:
            return float("nan")
        return sum(1 for r in self.records if r.access is Access.READ) / len(self.records)


def _parse_flag(value: str, lineno: int) -> bool:
    v = value.strip().lower()
    if v in ("true", "1", "t", "yes"):
        return True
    if v in ("false", "0", "f", "no", ""):
        return False
    raise ParseError(f"bad boolean flag {value!r}", lineno)


def _parse_timestamp(value: str, lineno: int) -> int:
    v = value.strip()
    try:
        return int(round(float(v) * 1000))  # numeric: seconds
    except ValueError:
        pass
    try:
        if v.endswith("Z"):
            v = v[:-1] + "+00:00"
        if "." in v:
            head, frac = v.split(".", 1)
            tz = ""
            for sep in ("+", "-"):
                if sep in frac:
                    frac, tz = frac.split(sep, 1)
                    tz = sep + tz
                    break
            v = head + "." + frac[:6].ljust(6, "0") + tz
        dt = datetime.fromisoformat(v)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        return int(round(dt.timestamp() * 1000))
    except ValueError:
        raise ParseError(f"unparsable timestamp {value!r}", lineno) from None


def parse_trace(text: str, dataset_format: str = "canonical") -> TraceSet:
    """Parse a trace CSV into a sorted record set with per-app sub-traces.
    `dataset_format` selects the canonical schema or the azure2020 adapter."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty trace file", 1) from None
    header = [h.strip() for h in header]

    if dataset_format == "canonical":
        if tuple(h.lower() for h in header) != CANONICAL_HEADER:
            raise ParseError(f"expected header {','.join(CANONICAL_HEADER)!r}", 1)
        col = {name: idx for idx, name in enumerate(CANONICAL_HEADER)}
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise ParseError(f"expected 4 columns, got {len(row)}", lineno)
            try:
                ts = int(row[col["timestamp_ms"]])
            except ValueError:
                raise ParseError(f"bad timestamp {row[col['timestamp_ms']]!r}", lineno) from None
            token = row[col["access"]].strip().upper()
            if token not in ("R", "W"):
                raise ParseError(f"access flag must be R or W, got {row[col['access']]!r}", lineno)
            records.append(
                TraceRecord(ts, row[col["user"]].strip(), row[col["app"]].strip(), Access(token))
            )
        return TraceSet(records)

    if dataset_format == "azure2020":
        needed = {"Timestamp", "AnonUserId", "AnonAppName", "Read", "Write"}
        col = {name: idx for idx, name in enumerate(header)}
        missing = needed - col.keys()
        if missing:
            raise ParseError(f"missing columns: {', '.join(sorted(missing))}", 1)
        records = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} columns, got {len(row)}", lineno)
            ts = _parse_timestamp(row[col["Timestamp"]], lineno)
            write = _parse_flag(row[col["Write"]], lineno)
            read = _parse_flag(row[col["Read"]], lineno)
            if not read and not write:
                raise ParseError("row flags neither read nor write", lineno)
            access = Access.WRITE if write else Access.READ
            records.append(
                TraceRecord(ts, row[col["AnonUserId"]].strip(), row[col["AnonAppName"]].strip(), access)
            )
        return TraceSet(records)

    raise ConfigError(f"unknown dataset format {dataset_format!r}")


def serialize_trace(traces: TraceSet) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CANONICAL_HEADER)
    for r in traces.records:
        writer.writerow([r.timestamp, r.user, r.app, r.access.value])
    return out.getvalue()


@dataclass(frozen=True)
class SynthParams:
    """Two-regime renewal generator knobs. Rates are per hour; per-app rate
    multipliers spread log-uniformly over `rate_decades` decades so app
    densities differ wildly, in miniature."""

    burst_rate_per_hour: float = 600.0
    idle_rate_per_hour: float = 2.0
    mean_burst_ms: float = 15 * 60_000.0
    mean_idle_ms: float = 45 * 60_000.0
    read_prob: float = 0.77
    rate_decades: float = 1.0


def synth_trace(seed: int, n_apps: int, horizon: int, params: SynthParams | None = None) -> TraceSet:
    """Deterministic synthetic trace: each app alternates exponential bursty
    and idle regimes with Poisson arrivals inside each, over [0, horizon)."""
    if n_apps < 1:
        raise ConfigError("need at least one app")
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    p = params or SynthParams()
    if not 0 <= p.read_prob <= 1:
        raise ConfigError("read_prob must be within [0, 1]")
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    records: list[TraceRecord] = []
    duty = p.mean_burst_ms / (p.mean_burst_ms + p.mean_idle_ms)
    for i in range(n_apps):
        app = f"app-{i:04d}"
        user = f"user-{i:04d}"
        mult = 10.0 ** rng.uniform(-p.rate_decades / 2, p.rate_decades / 2)
        rates = {  # events per ms in each regime
            True: p.burst_rate_per_hour * mult / 3_600_000.0,
            False: p.idle_rate_per_hour * mult / 3_600_000.0,
        }
        bursty = bool(rng.random() < duty)
        t = 0.0
        while t < horizon:
            regime_end = t + rng.exponential(p.mean_burst_ms if bursty else p.mean_idle_ms)
            rate = rates[bursty]
            while rate > 0:
                t += rng.exponential(1.0 / rate)
                if t >= regime_end or t >= horizon:
                    break
                access = Access.READ if rng.random() < p.read_prob else Access.WRITE
                records.append(TraceRecord(int(t), user, app, access))
            t = regime_end
            bursty = not bursty
    return TraceSet(records)


def wrap_offset(trace: AppTrace, offset: int, horizon: int) -> AppTrace:
    """Rotate a trace by `offset` modulo its span (wrap just past the last
    event) and clip to [0, horizon). Relative gaps survive up to the one
    boundary gap the rotation cuts."""
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    if not trace.events:
        return AppTrace(trace.app, [])
    base = trace.events[0][0]
    period = trace.span + 1
    shifted = sorted(
        (((t - base + offset) % period, a) for t, a in trace.events), key=lambda e: e[0]
    )
    return AppTrace(trace.app, [(t, a) for t, a in shifted if t < horizon])
