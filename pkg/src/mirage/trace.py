"""Job traces: CSV ingest, cleaning, chronological splits and synthetic workloads."""
from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

HOUR = 3600
DAY = 24 * HOUR

FIELDS = ("JobID", "JobName", "UserID", "SubmitTime", "StartTime", "EndTime", "Timelimit", "NumNodes")

_SUBJOB_RE = re.compile(r"^(?P<prefix>.+)_(?P<index>\d+)$")


class TraceError(ValueError):
    """Raised for unreadable or inconsistent trace files."""


@dataclass(frozen=True)
class JobRecord:
    job_id: str
    job_name: str
    user_id: str
    submit_time: int
    start_time: int
    end_time: int
    time_limit: int
    num_nodes: int

    @property
    def runtime(self) -> int:
        return self.end_time - self.start_time

    @property
    def wait(self) -> int:
        return self.start_time - self.submit_time


def _order_key(rec: JobRecord):
    return (rec.submit_time, rec.job_id)


@dataclass(frozen=True)
class Trace:
    records: tuple[JobRecord, ...]
    node_count: int

    def __post_init__(self):
        if self.node_count < 1:
            raise TraceError(f"node_count must be positive, got {self.node_count}")
        object.__setattr__(self, "records", tuple(sorted(self.records, key=_order_key)))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def span(self) -> tuple[int, int]:
        if not self.records:
            return (0, 0)
        return (self.records[0].submit_time, self.records[-1].submit_time)

    def summary(self) -> dict:
        if not self.records:
            return {"jobs": 0, "node_count": self.node_count}
        waits = np.array([r.wait for r in self.records], dtype=float) / HOUR
        return {
            "jobs": len(self.records),
            "node_count": self.node_count,
            "first_submit": self.records[0].submit_time,
            "last_submit": self.records[-1].submit_time,
            "mean_wait_h": float(waits.mean()),
            "max_nodes": max(r.num_nodes for r in self.records),
        }


def _parse_int(raw: str, name: str, row: int) -> int:
    try:
        value = float(raw)
    except ValueError:
        raise TraceError(f"row {row}: field {name} is not numeric: {raw!r}") from None
    if not math.isfinite(value) or value != int(value):
        raise TraceError(f"row {row}: field {name} must be an integer, got {raw!r}")
    return int(value)


def parse_trace(path, node_count: int) -> Trace:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"trace file not found: {path}")
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TraceError(f"{path}: empty file, expected header {','.join(FIELDS)}") from None
        if tuple(h.strip() for h in header) != FIELDS:
            raise TraceError(f"{path}: malformed header {header!r}, expected {','.join(FIELDS)}")
        for row_no, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(FIELDS):
                raise TraceError(f"row {row_no}: expected {len(FIELDS)} fields, got {len(row)}")
            job_id, job_name, user_id = (c.strip() for c in row[:3])
            submit, start, end, limit, nodes = (
                _parse_int(raw.strip(), name, row_no) for raw, name in zip(row[3:], FIELDS[3:])
            )
            if nodes < 1:
                raise TraceError(f"row {row_no}: NumNodes must be >= 1, got {nodes}")
            if limit < 0:
                raise TraceError(f"row {row_no}: Timelimit must be >= 0, got {limit}")
            if start < submit:
                raise TraceError(f"row {row_no}: StartTime {start} precedes SubmitTime {submit}")
            if end < start:
                raise TraceError(f"row {row_no}: EndTime {end} precedes StartTime {start}")
            records.append(JobRecord(job_id, job_name, user_id, submit, start, end, limit, nodes))
    return Trace(tuple(records), node_count)


def write_trace(trace: Trace, path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(FIELDS)
        for r in trace.records:
            writer.writerow([r.job_id, r.job_name, r.user_id, r.submit_time, r.start_time,
                             r.end_time, r.time_limit, r.num_nodes])


def _merge_group(group: Sequence[JobRecord]) -> JobRecord:
    first = min(group, key=lambda r: (r.start_time, r.submit_time, r.job_id))
    return replace(
        first,
        submit_time=min(r.submit_time for r in group),
        start_time=first.start_time,
        end_time=max(r.end_time for r in group),
        time_limit=max(r.time_limit for r in group),
        num_nodes=max(r.num_nodes for r in group),
    )


def clean_trace(trace: Trace) -> Trace:
    """Drop oversize jobs, fold `<prefix>_<n>` sub-jobs into one record, clamp to limits.

    A merged record keeps the id of its earliest sub-job, so re-cleaning is a no-op.
    """
    kept = [r for r in trace.records if r.num_nodes <= trace.node_count]

    groups: dict[tuple[str, str], list[JobRecord]] = {}
    out = []
    for rec in kept:
        m = _SUBJOB_RE.match(rec.job_id)
        if m is None:
            out.append(rec)
        else:
            groups.setdefault((rec.user_id, m.group("prefix")), []).append(rec)
    for group in groups.values():
        out.append(group[0] if len(group) == 1 else _merge_group(group))

    clamped = [
        replace(r, end_time=r.start_time + r.time_limit) if r.runtime > r.time_limit else r
        for r in out
    ]
    return Trace(tuple(clamped), trace.node_count)


def split_trace(trace: Trace, ratio: float) -> tuple[Trace, Trace]:
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"split ratio must lie in (0, 1), got {ratio}")
    if not trace.records:
        raise TraceError("cannot split an empty trace")
    cut = int(round(ratio * len(trace.records)))
    return (Trace(trace.records[:cut], trace.node_count),
            Trace(trace.records[cut:], trace.node_count))


def window(trace: Trace, start: int, end: int) -> Trace:
    """Records submitted in [start, end)."""
    return Trace(tuple(r for r in trace.records if start <= r.submit_time < end), trace.node_count)


# --------------------------------------------------------------------------- synthesis

LIMIT_CHOICES_H = (1, 12, 24, 48)


@dataclass
class SynthParams:
    duration: int = 30 * DAY
    node_count: int = 88
    # constant rate (jobs/hour) or a per-hour schedule that repeats
    rate: float = 7.0
    rate_schedule: tuple[float, ...] | None = None
    runtime_mu: float = 1.0  # log-hours
    runtime_sigma: float = 1.2
    limit_weights: tuple[float, ...] = (0.2, 0.3, 0.3, 0.2)
    sizes: tuple[int, ...] = (1, 2, 4, 8)
    size_weights: tuple[float, ...] = (0.55, 0.2, 0.15, 0.1)
    n_users: int = 50
    seed: int = 0

    def validate(self) -> None:
        if self.duration <= 0:
            raise ValueError("synthetic trace duration must be positive")
        rates = self.rate_schedule if self.rate_schedule is not None else (self.rate,)
        if len(rates) == 0 or any(r < 0 for r in rates):
            raise ValueError("arrival rates must be non-negative")
        for name, w, n in (("limit_weights", self.limit_weights, len(LIMIT_CHOICES_H)),
                           ("size_weights", self.size_weights, len(self.sizes))):
            if len(w) != n:
                raise ValueError(f"{name} needs {n} entries, got {len(w)}")
            if any(x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
                raise ValueError(f"{name} must be non-negative and sum to 1")
        if max(self.sizes) > self.node_count or min(self.sizes) < 1:
            raise ValueError("job sizes must lie in [1, node_count]")

    @classmethod
    def from_mapping(cls, section) -> "SynthParams":
        kw = {}
        for key, raw in dict(section).items():
            key = key.strip().lower()
            if key in ("duration", "node_count", "n_users", "seed"):
                kw[key] = int(float(raw))
            elif key in ("rate", "runtime_mu", "runtime_sigma"):
                kw[key] = float(raw)
            elif key in ("rate_schedule", "limit_weights", "size_weights"):
                kw[key] = tuple(float(x) for x in str(raw).replace(",", " ").split())
            elif key == "sizes":
                kw[key] = tuple(int(x) for x in str(raw).replace(",", " ").split())
            else:
                raise ValueError(f"unknown [synth] key: {key}")
        return cls(**kw)


def synth_trace(params: SynthParams) -> Trace:
    params.validate()
    rng = np.random.default_rng(params.seed)
    schedule = params.rate_schedule if params.rate_schedule is not None else (params.rate,)

    n_hours = int(math.ceil(params.duration / HOUR))
    rates = np.array([schedule[h % len(schedule)] for h in range(n_hours)], dtype=float)
    counts = rng.poisson(rates)
    submits = []
    for h, c in enumerate(counts):
        if c:
            lo = h * HOUR
            hi = min((h + 1) * HOUR, params.duration)
            if hi > lo:
                submits.append(rng.integers(lo, hi, size=c))
    submits = np.sort(np.concatenate(submits)) if submits else np.zeros(0, dtype=np.int64)
    n = len(submits)

    limits = np.array(LIMIT_CHOICES_H)[rng.choice(len(LIMIT_CHOICES_H), size=n, p=params.limit_weights)] * HOUR
    runtimes = np.exp(rng.normal(params.runtime_mu, params.runtime_sigma, size=n)) * HOUR
    runtimes = np.clip(np.round(runtimes), 1, limits).astype(np.int64)
    sizes = np.array(params.sizes)[rng.choice(len(params.sizes), size=n, p=params.size_weights)]
    users = rng.integers(0, params.n_users, size=n)

    records = tuple(
        JobRecord(f"s{i}", "synth", f"u{users[i]}", int(submits[i]), int(submits[i]),
                  int(submits[i] + runtimes[i]), int(limits[i]), int(sizes[i]))
        for i in range(n)
    )
    return Trace(records, params.node_count)


def diurnal_trace(days: int, node_count: int = 32, busy_hours: float = 18.0,
                  burst_hour: float = 0.0, marker: bool = True, start: int = 0, waves: int = 2) -> Trace:
    """Deterministic daily load cycle built from one-node jobs.

    At `burst_hour` each day a burst of one-node jobs arrives, enough for
    `waves` back-to-back waves that keep the cluster full for `busy_hours`.
    A one-node job submitted `x` hours into the busy phase queues behind the
    burst and starts with the last wave, so its wait is close to
    `busy_hours - busy_hours / waves - x`; in the remaining hours the cluster
    has idle nodes. With `marker`, one job starts when the busy phase ends so
    the time elapsed in the idle phase is visible in the running-job statistics.
    """
    if waves < 1:
        raise ValueError("need at least one wave")
    wave = int(round(busy_hours * HOUR / waves))
    idle = DAY - waves * wave
    if idle <= 0:
        raise ValueError("busy_hours must be shorter than a day")
    per_wave = node_count - 2  # leave room for a predecessor/successor pair
    records = []
    for d in range(days):
        t0 = start + d * DAY + int(burst_hour * HOUR)
        for j in range(waves * per_wave):
            records.append(JobRecord(f"d{d}b{j:04d}", "burst", f"u{j % 7}", t0, t0, t0 + wave, wave, 1))
        if marker:
            tm = t0 + waves * wave
            records.append(JobRecord(f"d{d}m", "marker", "umarker", tm, tm, tm + idle, idle, 1))
    return Trace(tuple(records), node_count)


def steady_trace(days: int, node_count: int = 64, runtime_h: float = 1.0, backlog: int = 64,
                 start: int = 0) -> Trace:
    """Saturated cluster with a FIFO backlog of one-node jobs that neither grows nor drains.

    `backlog` jobs queue at `start` behind a full cluster, and arrivals then
    match the service rate of all `node_count` nodes. A job submitted at any
    later instant waits about `backlog * runtime_h / node_count` hours,
    provided the simulation starts at `start` so the initial backlog is seen.
    """
    runtime = int(runtime_h * HOUR)
    gap = runtime / node_count
    # the first wave ends staggered so that departures, like arrivals, are evenly spaced
    ends = [start + int(round((i + 1) * gap)) for i in range(node_count)] + [start + runtime] * backlog
    records = [JobRecord(f"q{i:06d}", "steady", "u0", start, start, e, runtime, 1) for i, e in enumerate(ends)]
    i = len(records)
    end = start + days * DAY
    n = 1
    while (t := start + int(round(n * gap))) < end:
        records.append(JobRecord(f"q{i:06d}", "steady", "u0", t, t, t + runtime, runtime, 1))
        i += 1
        n += 1
    return Trace(tuple(records), node_count)
