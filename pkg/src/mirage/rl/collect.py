"""Cluster-backed training environment, offline branch sampling and serving adapters."""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from ..encoder import SUBMIT, flatten
from ..harness import Decision, EpisodePlan, EvalConfig, PairEpisode, PairSpec
from ..reward import RewardConfig, outcome, shape_reward
from ..trace import DAY, Trace
from .network import Network, action_probs, greedy_submit, q_values
from .replay import Experience


class ClusterEnv:
    """Episodes drawn uniformly from [t0 + warm-up, t1 - longest limit] of a trace."""

    def __init__(self, trace: Trace, t0: float, t1: float, cfg: EvalConfig = EvalConfig(),
                 reward: RewardConfig = RewardConfig()):
        self.trace, self.cfg, self.rcfg = trace, cfg, reward
        self.lo = t0 + cfg.warmup
        longest = cfg.pair.limit if cfg.limit_jitter is None else cfg.limit_jitter[1]
        self.hi = t1 - longest
        if self.hi < self.lo:
            raise ValueError("training range too short for the warm-up plus one predecessor")
        self.ep: PairEpisode | None = None
        self.reward, self.time = 0.0, 0.0

    def plan(self, rng: np.random.Generator) -> EpisodePlan:
        cfg = self.cfg
        start = float(np.floor(rng.uniform(self.lo, self.hi)))
        pair = cfg.pair
        if cfg.limit_jitter is not None:
            pair = replace(pair, limit=int(rng.integers(cfg.limit_jitter[0], cfg.limit_jitter[1] + 1)), runtime=None)
        return EpisodePlan(self.trace, start, pair, cfg.warmup, cfg.cadence, cfg.cap, cfg.k)

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        self.ep = PairEpisode(self.plan(rng))
        self.time = self.ep.plan.submit_at
        return self.ep.decision().matrix

    def step(self, submit: bool):
        if self.ep.act(submit):
            self.reward = shape_reward(self.ep.result_outcome, self.rcfg)
            return None, True
        return self.ep.decision().matrix, False


def collect_offline_samples(trace: Trace, t0: float, t1: float, pair: PairSpec = PairSpec(), starts: int = 10,
                            seed: int = 0, chain: int = 2, points: int = 7, warmup: float = 2 * DAY,
                            cadence: float = 600, k: int = 144,
                            reward: RewardConfig = RewardConfig()) -> list[Experience]:
    """Branch the successor's submission at `points` evenly spaced instants per predecessor.

    For every sampled start the simulator is warmed up, the predecessor is
    submitted, and each candidate instant between that submission and the
    predecessor's end (both inclusive) is replayed on a clone. A chain of
    `chain` sub-jobs yields at most `chain - 1` such groups; later sub-jobs are
    submitted reactively on the main line.
    """
    if t1 - t0 <= warmup:
        raise ValueError("range shorter than the warm-up")
    if points < 2:
        raise ValueError("need at least two candidate instants")
    rng = np.random.default_rng(seed)
    hi = t1 - pair.limit
    lo = t0 + warmup
    if hi < lo:
        raise ValueError("range too short for the warm-up plus one predecessor")
    out: list[Experience] = []
    for s in np.floor(rng.uniform(lo, hi, size=starts)):
        ep = PairEpisode(EpisodePlan(trace, float(s), pair, warmup, cadence, 72 * 3600, k))
        w = float(s)
        for _ in range(chain - 1):
            branch = ep.sim.clone()
            branch.run_until_started(ep.pred)
            p_end = branch.job(ep.pred).start_time + pair.run_s
            if p_end > t1:
                break
            for i in range(points):
                c = w + i * (p_end - w) / (points - 1)
                ep.advance_to(c)
                d = ep.decision()
                br = ep.sim.clone()
                succ = br.submit(pair.size, pair.limit, pair.run_s)
                br.run_until_started(succ)
                r = shape_reward(outcome(p_end, br.job(succ).start_time), reward)
                out.append(Experience(flatten(d.matrix, SUBMIT), SUBMIT, r, True, time=c))
            # the chain continues: the successor goes in reactively and becomes the next predecessor
            ep.pred = ep.sim.submit(pair.size, pair.limit, pair.run_s)
            w = p_end
    return out


class DQNPolicy:
    name = "dqn"

    def __init__(self, net: Network, name: str = "dqn"):
        self.net, self.name = net, name

    def begin(self, rng) -> None:
        pass

    def decide(self, d: Decision) -> bool:
        return greedy_submit(*q_values(self.net, d.matrix))


class PGPolicy:
    name = "pg"

    def __init__(self, net: Network, name: str = "pg", greedy: bool = False):
        self.net, self.name, self.greedy = net, name, greedy

    def begin(self, rng) -> None:
        self.rng = rng

    def decide(self, d: Decision) -> bool:
        p_submit, p_hold = action_probs(self.net, d.matrix)
        if self.greedy:
            return p_submit > p_hold
        return bool(self.rng.random() < p_submit)
