"""Episode driver, load classification, paired evaluation and report files.

An episode warms a simulator up to the predecessor's submission, then asks a
policy at every cadence tick (and at the predecessor's end instant) whether to
submit the successor. A branch cloned at predecessor submission replays the
reactive rule to measure the counterfactual wait that defines the load class.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .encoder import INTERVAL_DEFAULT, K_DEFAULT, History, PairState, encode_snapshot
from .policies import AvgTracker, TreeEnsemble, avg_decide, predictor_decide, reactive_decide
from .reward import Kind, Outcome, RewardConfig, outcome, shape_reward
from .simulator import Simulator
from .trace import DAY, HOUR, Trace

HEAVY, MEDIUM, LIGHT = "heavy", "medium", "light"
LOAD_CLASSES = (HEAVY, MEDIUM, LIGHT)


def classify_load(reactive_wait_h: float) -> str:
    if reactive_wait_h < 0:
        raise ValueError("reactive wait cannot be negative")
    if reactive_wait_h > 12:
        return HEAVY
    if reactive_wait_h >= 2:
        return MEDIUM
    return LIGHT


@dataclass(frozen=True)
class PairSpec:
    size: int = 1
    limit: int = 48 * 3600
    runtime: int | None = None  # None: the sub-job uses its whole limit

    @property
    def run_s(self) -> int:
        return self.limit if self.runtime is None else self.runtime


@dataclass(frozen=True)
class EpisodePlan:
    trace: Trace = field(repr=False, compare=False)
    submit_at: float  # predecessor submission instant; the warm-up ends here
    pair: PairSpec = PairSpec()
    warmup: float = 2 * DAY
    cadence: float = INTERVAL_DEFAULT
    cap: float = 72 * 3600
    k: int = K_DEFAULT
    policy: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.cadence <= 0:
            raise ValueError("decision cadence must be positive")
        if self.pair.run_s < self.cadence:
            raise ValueError("predecessor runtime must be at least one cadence interval")
        if self.warmup < 0:
            raise ValueError("warm-up must be non-negative")

    @property
    def window_start(self) -> float:
        return self.submit_at - self.warmup


@dataclass(frozen=True)
class EpisodeResult:
    submit_at: float
    reactive_wait: float  # hours
    outcome: Outcome
    load_class: str
    decisions: int
    succ_submit: float
    policy: str = ""


@dataclass
class Decision:
    """What a policy sees at one decision instant."""
    now: float
    matrix: np.ndarray
    pred_done: bool
    remaining_pred: float  # seconds; the full runtime while the predecessor is still queued
    wait_log: list[float]
    row: np.ndarray  # the current state vector (last matrix row)


class Policy(Protocol):
    name: str

    def begin(self, rng: np.random.Generator) -> None: ...

    def decide(self, d: Decision) -> bool: ...


# ---------------------------------------------------------------------- episode engine

class PairEpisode:
    """Step-wise episode; `decision()` describes the current instant and `act()` advances it."""

    def __init__(self, plan: EpisodePlan):
        self.plan = plan
        p = plan.pair
        sim = Simulator(plan.trace, start_at=plan.window_start)
        self.history = History(plan.k)
        first = plan.submit_at - plan.k * plan.cadence
        for j in range(plan.k, 0, -1):
            t = plan.submit_at - j * plan.cadence
            if t < plan.window_start or t < first:
                continue
            sim.run_until(t)
            self.history.push(encode_snapshot(sim.sample(), self._pair_state(sim, None)))
        sim.run_until(plan.submit_at)
        self.sim = sim
        self.pred = sim.submit(p.size, p.limit, p.run_s)
        self._branch = sim.clone()
        self._pushed = -1  # last grid tick after submission whose row is in the history
        self.decisions = 0
        self.done = False
        self.result_outcome: Outcome | None = None
        self.succ_submit: float | None = None

    # pair fields: predecessor wait so far (or realized) and elapsed runtime
    def _pair_state(self, sim: Simulator, pred_id: str | None) -> PairState:
        p = self.plan.pair
        wait = elapsed = 0.0
        if pred_id is not None:
            job = sim.job(pred_id)
            if job.start_time is None:
                wait = sim.now - job.submit_time
            else:
                wait = job.start_time - job.submit_time
                elapsed = min(sim.now - job.start_time, p.run_s)
        return PairState(p.size, p.limit, wait, elapsed, p.size, p.limit)

    @property
    def pred_end(self) -> float | None:
        start = self.sim.job(self.pred).start_time
        return None if start is None else start + self.plan.pair.run_s

    def _tick_time(self, i: int) -> float:
        return self.plan.submit_at + i * self.plan.cadence

    def _row(self) -> np.ndarray:
        return encode_snapshot(self.sim.sample(), self._pair_state(self.sim, self.pred))

    def decision(self) -> Decision:
        sim, plan = self.sim, self.plan
        row = self._row()
        i = int((sim.now - plan.submit_at) // plan.cadence)
        if self._tick_time(i) == sim.now and i > self._pushed:
            self.history.push(row)
            self._pushed = i
        if self._tick_time(self._pushed) == sim.now:
            matrix = self.history.matrix()
        else:
            h = self.history.copy()
            h.push(row)
            matrix = h.matrix()
        end = self.pred_end
        done = end is not None and sim.now >= end
        remaining = plan.pair.run_s if end is None else max(end - sim.now, 0.0)
        return Decision(sim.now, matrix, done, remaining, sim.wait_log, row)

    def advance_to(self, t: float) -> None:
        """Run to instant t, recording every grid row on the way."""
        while self._tick_time(self._pushed + 1) <= t:
            self.sim.run_until(self._tick_time(self._pushed + 1))
            self.history.push(self._row())
            self._pushed += 1
        self.sim.run_until(t)

    @property
    def capped(self) -> bool:
        end = self.pred_end
        return end is not None and self.sim.now >= end + self.plan.cap

    def act(self, submit: bool) -> bool:
        """Apply one decision; returns True once the episode is finished."""
        if self.done:
            raise RuntimeError("episode already finished")
        self.decisions += 1
        sim, plan = self.sim, self.plan
        if submit or self.capped:
            self.succ_submit = sim.now
            succ = sim.submit(plan.pair.size, plan.pair.limit, plan.pair.run_s)
            sim.run_until_started(succ)
            sim.run_until_started(self.pred)
            self.result_outcome = outcome(self.pred_end, sim.job(succ).start_time)
            self.done = True
            return True
        now = sim.now
        nxt = self._tick_time(int((now - plan.submit_at) // plan.cadence) + 1)
        end = self.pred_end
        if end is not None and now < end < nxt:
            sim.run_until(end)
            return False
        sim.run_until(nxt)
        if end is None and (end := self.pred_end) is not None and end < sim.now:
            raise RuntimeError("predecessor ended between ticks; runtime shorter than cadence")
        return False

    def reactive_wait(self) -> float:
        """Counterfactual successor wait (hours) under the reactive rule."""
        return reactive_wait(self._branch, self.pred, self.plan.pair)


def reactive_wait(branch: Simulator, pred: str, pair: PairSpec) -> float:
    sim = branch.clone()
    sim.run_until_started(pred)
    sim.run_until(sim.job(pred).start_time + pair.run_s)
    succ = sim.submit(pair.size, pair.limit, pair.run_s)
    return sim.run_until_started(succ) / HOUR


def run_episode(plan: EpisodePlan, policy: Policy, rng: np.random.Generator | None = None,
                reactive_h: float | None = None) -> EpisodeResult:
    ep = PairEpisode(plan)
    policy.begin(np.random.default_rng(plan.seed) if rng is None else rng)
    while not ep.act(policy.decide(ep.decision()) if not ep.capped else True):
        pass
    rw = ep.reactive_wait() if reactive_h is None else reactive_h
    return EpisodeResult(plan.submit_at, rw, ep.result_outcome, classify_load(rw), ep.decisions,
                         ep.succ_submit, plan.policy or getattr(policy, "name", ""))


# ---------------------------------------------------------------------- baseline policy objects

class _Stateless:
    name = ""

    def begin(self, rng) -> None:
        pass


class ReactivePolicy(_Stateless):
    name = "reactive"

    def decide(self, d: Decision) -> bool:
        return reactive_decide(d.pred_done)


class AvgPolicy:
    name = "avg"

    def __init__(self, window: int | None = None, fixed: float | None = None):
        self.window, self.fixed = window, fixed

    def begin(self, rng) -> None:
        self.tracker = AvgTracker(self.window)

    def decide(self, d: Decision) -> bool:
        if self.fixed is not None:
            return d.remaining_pred <= self.fixed
        self.tracker.sync(d.wait_log)
        return avg_decide(self.tracker, d.remaining_pred)


class PredictorPolicy(_Stateless):
    def __init__(self, model: TreeEnsemble, name: str = "trees"):
        self.model, self.name = model, name

    def decide(self, d: Decision) -> bool:
        return predictor_decide(self.model, d.row, d.remaining_pred)


class CallablePolicy(_Stateless):
    def __init__(self, fn: Callable[[Decision], bool], name: str = "custom"):
        self.fn, self.name = fn, name

    def decide(self, d: Decision) -> bool:
        return bool(self.fn(d))


# ---------------------------------------------------------------------- episode sampling

@dataclass(frozen=True)
class EvalConfig:
    episodes: int = 200
    pair: PairSpec = PairSpec()
    warmup: float = 2 * DAY
    cadence: float = INTERVAL_DEFAULT
    cap: float = 72 * 3600
    k: int = K_DEFAULT
    limit_jitter: tuple[int, int] | None = None  # draw each pair's limit uniformly from [lo, hi] seconds


def sample_plans(trace: Trace, t0: float, t1: float, n: int, seed: int, cfg: EvalConfig) -> list[EpisodePlan]:
    """Episode submission instants drawn uniformly from [t0 + warm-up, t1 - longest pair limit]."""
    if n < 1:
        raise ValueError("need at least one episode")
    lo = t0 + cfg.warmup
    longest = cfg.pair.limit if cfg.limit_jitter is None else cfg.limit_jitter[1]
    hi = t1 - longest
    if hi < lo:
        raise ValueError("evaluation range too short for the warm-up plus one predecessor")
    rng = np.random.default_rng(seed)
    starts = np.floor(rng.uniform(lo, hi, size=n)).astype(np.int64)
    plans = []
    for i, s in enumerate(starts):
        pair = cfg.pair
        if cfg.limit_jitter is not None:
            lim = int(rng.integers(cfg.limit_jitter[0], cfg.limit_jitter[1] + 1))
            pair = replace(pair, limit=lim, runtime=None)
        plans.append(EpisodePlan(trace, float(s), pair, cfg.warmup, cfg.cadence, cfg.cap, cfg.k,
                                 seed=seed * 1_000_003 + i))
    return plans


# ---------------------------------------------------------------------- evaluation and reports

ROW_FIELDS = ("policy", "episode", "submit_at", "limit_h", "reactive_wait_h", "load_class", "kind",
              "interruption_h", "overlap_h", "decisions", "succ_submit")


@dataclass
class Report:
    rows: list[dict] = field(default_factory=list)

    def policies(self) -> list[str]:
        return list(dict.fromkeys(r["policy"] for r in self.rows))

    def aggregates(self) -> dict:
        out = {}
        for pol in self.policies():
            out[pol] = {}
            for cls in LOAD_CLASSES + ("all",):
                rs = [r for r in self.rows if r["policy"] == pol and (cls == "all" or r["load_class"] == cls)]
                if not rs:
                    out[pol][cls] = {"n": 0}
                    continue
                intr = np.array([r["interruption_h"] for r in rs])
                ovl = np.array([r["overlap_h"] for r in rs])
                out[pol][cls] = {
                    "n": len(rs),
                    "mean_interruption_h": float(intr.mean()),
                    "mean_overlap_h": float(ovl.mean()),
                    "mean_abs_error_h": float((intr + ovl).mean()),
                    "zero_interruption_fraction": float(np.mean(intr == 0)),
                    "mean_reactive_wait_h": float(np.mean([r["reactive_wait_h"] for r in rs])),
                }
        return out


def _run_chunk(name: str, pol: Policy, plans: list[EpisodePlan], idx: list[int], seed: int) -> list[dict]:
    rows = []
    for i in idx:
        res = run_episode(replace(plans[i], policy=name), pol, np.random.default_rng([seed, i]))
        rows.append(result_row(name, i, plans[i], res))
    return rows


def evaluate(policies: dict[str, Policy], plans: list[EpisodePlan], seed: int = 0, workers: int = 1,
             progress: Callable[[str, int], None] | None = None) -> Report:
    """Paired evaluation: every policy runs on the same plans, each episode with its own seeded generator.

    With workers > 1 episodes run in a process pool; rows come back in the same order.
    """
    report = Report()
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        chunks = [list(range(len(plans)))[w::workers] for w in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for name, pol in policies.items():
                futures = [pool.submit(_run_chunk, name, pol, plans, c, seed) for c in chunks if c]
                rows = [r for f in futures for r in f.result()]
                report.rows.extend(sorted(rows, key=lambda r: r["episode"]))
        return report
    reactive_cache: dict[int, float] = {}
    for name, pol in policies.items():
        for i, plan in enumerate(plans):
            rng = np.random.default_rng([seed, i])
            res = run_episode(replace(plan, policy=name), pol, rng, reactive_cache.get(i))
            reactive_cache[i] = res.reactive_wait
            report.rows.append(result_row(name, i, plan, res))
            if progress:
                progress(name, i)
    return report


def result_row(policy: str, i: int, plan: EpisodePlan, res: EpisodeResult) -> dict:
    return {
        "policy": policy, "episode": i, "submit_at": plan.submit_at, "limit_h": plan.pair.limit / HOUR,
        "reactive_wait_h": res.reactive_wait, "load_class": res.load_class, "kind": res.outcome.kind.value,
        "interruption_h": res.outcome.interruption, "overlap_h": res.outcome.overlap,
        "decisions": res.decisions, "succ_submit": res.succ_submit,
    }


def empirical_cdf(values) -> list[tuple[float, float]]:
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        return []
    uniq, counts = np.unique(v, return_counts=True)
    return [(float(x), float(c)) for x, c in zip(uniq, np.cumsum(counts) / v.size)]


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


def emit_report(report: Report, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"rows": out / "rows.csv", "summary": out / "summary.json", "cdf": out / "cdf.csv"}
    with paths["rows"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in report.rows:
            w.writerow([_fmt(r[k]) for k in ROW_FIELDS])
    paths["summary"].write_text(json.dumps(report.aggregates(), indent=2, sort_keys=True) + "\n")
    with paths["cdf"].open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("policy", "load_class", "interruption_h", "cdf"))
        for pol in report.policies():
            for cls in LOAD_CLASSES:
                vals = [r["interruption_h"] for r in report.rows if r["policy"] == pol and r["load_class"] == cls]
                for x, c in empirical_cdf(vals):
                    w.writerow((pol, cls, repr(x), repr(c)))
    return paths


def read_rows(path) -> Report:
    rep = Report()
    with Path(path).open() as fh:
        for r in csv.DictReader(fh):
            for k in ("submit_at", "limit_h", "reactive_wait_h", "interruption_h", "overlap_h", "succ_submit"):
                r[k] = float(r[k])
            r["episode"], r["decisions"] = int(r["episode"]), int(r["decisions"])
            rep.rows.append(r)
    return rep


# ---------------------------------------------------------------------- wait-time samples for tree predictors

def collect_wait_samples(trace: Trace, t0: float, t1: float, n: int, pair: PairSpec, seed: int = 0,
                         warmup: float = 2 * DAY) -> tuple[np.ndarray, np.ndarray]:
    """Probe-job waits (hours) at uniformly drawn instants, with the state vector seen at submission."""
    lo, hi = t0 + warmup, t1
    if hi <= lo:
        raise ValueError("range too short for the warm-up")
    rng = np.random.default_rng(seed)
    instants = np.sort(np.floor(rng.uniform(lo, hi, size=n)))
    sim = Simulator(trace, start_at=t0)
    X, y = [], []
    state = PairState(pair.size, pair.limit, 0.0, 0.0, pair.size, pair.limit)
    for t in instants:
        sim.run_until(float(t))
        X.append(encode_snapshot(sim.sample(), state))
        branch = sim.clone()
        jid = branch.submit(pair.size, pair.limit, pair.run_s)
        y.append(branch.run_until_started(jid) / HOUR)
    return np.array(X), np.array(y)
