"""Discrete-event batch cluster simulator with priority scheduling and EASY backfilling.

The agent-facing surface is `submit` / `step` / `sample` plus `run_until_started`.
Scheduling passes run on every arrival or completion instant; within one instant
completions are processed before arrivals, then a single pass runs.
"""
from __future__ import annotations

import heapq
from bisect import insort
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .trace import Trace


class SimulatorError(RuntimeError):
    pass


@dataclass(slots=True)
class SimJob:
    job_id: str
    num_nodes: int
    time_limit: int
    actual_runtime: int
    submit_time: float
    source: str = "trace"
    start_time: float | None = None
    end_time: float | None = None

    @property
    def wait(self) -> float | None:
        return None if self.start_time is None else self.start_time - self.submit_time

    def copy(self) -> "SimJob":
        return SimJob(self.job_id, self.num_nodes, self.time_limit, self.actual_runtime,
                      self.submit_time, self.source, self.start_time, self.end_time)


@dataclass(frozen=True)
class ClusterSnapshot:
    """Queue and running-job view at `now`.

    `queued` rows are (num_nodes, age_s, time_limit_s); `running` rows are
    (num_nodes, elapsed_s, time_limit_s).
    """
    now: float
    queued: np.ndarray
    running: np.ndarray
    free_nodes: int
    total_nodes: int


def fifo_priority(job: SimJob):
    return (job.submit_time, job.job_id)


class Simulator:
    def __init__(self, trace: Trace, node_count: int | None = None, start_at: float = 0,
                 seed: int = 0, priority: Callable[[SimJob], tuple] = fifo_priority,
                 keep_history: bool = False):
        node_count = trace.node_count if node_count is None else node_count
        if node_count < 1:
            raise SimulatorError("node_count must be positive")
        biggest = max((r.num_nodes for r in trace.records), default=0)
        if biggest > node_count:
            raise SimulatorError(f"trace contains a {biggest}-node job but the cluster has {node_count} nodes")
        self.total = node_count
        self.free = node_count
        self.now = start_at
        self.seed = seed
        self.priority = priority
        # (submit, job_id, nodes, limit, runtime); shared read-only between clones
        self._arrivals = tuple(
            (r.submit_time, r.job_id, r.num_nodes, r.time_limit, min(r.runtime, r.time_limit))
            for r in trace.records if r.submit_time >= start_at
        )
        self._next = 0
        self._queue: list[tuple[tuple, SimJob]] = []
        self._running: dict[str, SimJob] = {}
        self._ends: list[tuple[float, str]] = []
        self._agent: dict[str, SimJob] = {}
        self._agent_seq = 0
        self.wait_log: list[float] = []
        self.history: dict[str, tuple[float, float, float]] | None = {} if keep_history else None

    # ------------------------------------------------------------------ agent API

    def submit(self, num_nodes: int, time_limit: int, actual_runtime: int | None = None,
               job_id: str | None = None) -> str:
        if num_nodes < 1:
            raise SimulatorError("a job needs at least one node")
        if num_nodes > self.total:
            raise SimulatorError(f"request of {num_nodes} nodes exceeds cluster size {self.total}")
        actual_runtime = time_limit if actual_runtime is None else actual_runtime
        if actual_runtime > time_limit:
            raise SimulatorError("actual_runtime exceeds time_limit")
        if actual_runtime < 0:
            raise SimulatorError("actual_runtime must be non-negative")
        if job_id is None:
            job_id = f"agent{self._agent_seq:05d}"
            self._agent_seq += 1
        if job_id in self._agent:
            raise SimulatorError(f"duplicate job id {job_id}")
        job = SimJob(job_id, num_nodes, time_limit, actual_runtime, self.now, source="agent")
        self._agent[job_id] = job
        self._enqueue(job)
        self._schedule()
        return job_id

    def step(self, duration: float) -> None:
        if duration <= 0:
            raise SimulatorError("step duration must be positive")
        target = self.now + duration
        self._advance(target)
        self.now = target

    def run_until(self, t: float) -> None:
        if t > self.now:
            self.step(t - self.now)

    def sample(self) -> ClusterSnapshot:
        now = self.now
        if self._queue:
            queued = np.array([(j.num_nodes, now - j.submit_time, j.time_limit) for _, j in self._queue], dtype=float)
        else:
            queued = np.zeros((0, 3))
        if self._running:
            running = np.array([(j.num_nodes, now - j.start_time, j.time_limit) for j in self._running.values()], dtype=float)
        else:
            running = np.zeros((0, 3))
        return ClusterSnapshot(now, queued, running, self.free, self.total)

    def run_until_started(self, job_id: str) -> float:
        job = self.job(job_id)
        while job.start_time is None:
            t = self._next_event_time()
            if t is None:
                raise SimulatorError(f"job {job_id} can never start: no pending events")
            self._advance(t)
            self.now = t
        return job.start_time - job.submit_time

    def run_to_completion(self) -> None:
        while (t := self._next_event_time()) is not None:
            self._advance(t)
            self.now = t

    def job(self, job_id: str) -> SimJob:
        try:
            return self._agent[job_id]
        except KeyError:
            raise KeyError(f"unknown job id {job_id!r}") from None

    def clone(self) -> "Simulator":
        other = object.__new__(Simulator)
        other.total = self.total
        other.free = self.free
        other.now = self.now
        other.seed = self.seed
        other.priority = self.priority
        other._arrivals = self._arrivals
        other._next = self._next
        copies: dict[str, SimJob] = {}

        def cp(job):
            c = copies.get(job.job_id)
            if c is None:
                c = copies[job.job_id] = job.copy()
            return c

        other._agent = {k: cp(j) for k, j in self._agent.items()}
        other._queue = [(key, cp(j)) for key, j in self._queue]
        other._running = {k: cp(j) for k, j in self._running.items()}
        other._ends = list(self._ends)
        other._agent_seq = self._agent_seq
        other.wait_log = list(self.wait_log)
        other.history = None if self.history is None else dict(self.history)
        return other

    @property
    def queue_length(self) -> int:
        return len(self._queue)

    @property
    def running_count(self) -> int:
        return len(self._running)

    @property
    def allocated(self) -> int:
        return self.total - self.free

    # ------------------------------------------------------------------ internals

    def _next_event_time(self) -> float | None:
        t = self._arrivals[self._next][0] if self._next < len(self._arrivals) else None
        if self._ends and (t is None or self._ends[0][0] < t):
            t = self._ends[0][0]
        return t

    def _advance(self, limit: float) -> None:
        while True:
            t = self._next_event_time()
            if t is None or t > limit:
                return
            self.now = t
            ends = self._ends
            while ends and ends[0][0] == t:
                _, jid = heapq.heappop(ends)
                job = self._running.pop(jid)
                self.free += job.num_nodes
            arrivals = self._arrivals
            while self._next < len(arrivals) and arrivals[self._next][0] == t:
                submit, jid, nodes, limit_s, runtime = arrivals[self._next]
                self._next += 1
                self._enqueue(SimJob(jid, nodes, limit_s, runtime, submit))
            self._schedule()

    def _enqueue(self, job: SimJob) -> None:
        insort(self._queue, (self.priority(job), job), key=lambda item: item[0])

    def _start(self, job: SimJob) -> None:
        job.start_time = self.now
        job.end_time = self.now + min(job.actual_runtime, job.time_limit)
        self.free -= job.num_nodes
        self._running[job.job_id] = job
        heapq.heappush(self._ends, (job.end_time, job.job_id))
        self.wait_log.append(self.now - job.submit_time)
        if self.history is not None:
            self.history[job.job_id] = (job.submit_time, job.start_time, job.end_time)

    def reservation(self, need: int) -> tuple[float, int]:
        """Earliest time `need` nodes are free if running jobs use their full limits,
        and how many nodes beyond `need` are free at that time."""
        avail = self.free
        if avail >= need:
            return self.now, avail - need
        expected = sorted((j.start_time + j.time_limit, j.num_nodes) for j in self._running.values())
        i = 0
        while i < len(expected):
            t = expected[i][0]
            while i < len(expected) and expected[i][0] == t:
                avail += expected[i][1]
                i += 1
            if avail >= need:
                return t, avail - need
        raise SimulatorError("reservation impossible: request exceeds cluster size")

    def _schedule(self) -> None:
        queue = self._queue
        while queue and queue[0][1].num_nodes <= self.free:
            _, job = queue.pop(0)
            self._start(job)
        if not queue or self.free == 0:
            return
        shadow, extra = self.reservation(queue[0][1].num_nodes)
        i = 1
        while i < len(queue) and self.free > 0:
            job = queue[i][1]
            if job.num_nodes <= self.free:
                if self.now + job.time_limit <= shadow:
                    queue.pop(i)
                    self._start(job)
                    continue
                if job.num_nodes <= extra:
                    queue.pop(i)
                    self._start(job)
                    extra -= job.num_nodes
                    continue
            i += 1


def new_simulator(trace: Trace, node_count: int | None = None, start_at: float = 0, seed: int = 0,
                  **kwargs) -> Simulator:
    return Simulator(trace, node_count, start_at, seed, **kwargs)
