"""End-to-end learning on a synthetic diurnal trace.

The trace repeats one deterministic day: a burst keeps the cluster full for
most of it and the rest is idle, so the successor's wait is a fixed function
of the time of day. Agents are trained on the first part of the trace and
compared with the reactive rule on paired episodes drawn from the rest.
During training, periodic checkpoints are scored on held-out episodes from the
training range and the best one is kept.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoder import NormStats
from .harness import AvgPolicy, EvalConfig, PairSpec, ReactivePolicy, evaluate, run_episode, sample_plans
from .reward import RewardConfig
from .rl.collect import ClusterEnv, DQNPolicy, PGPolicy, collect_offline_samples
from .rl.network import ArchConfig, init_network
from .rl.optim import OptimizerState
from .rl.replay import ReplayPool
from .rl.train import TrainConfig, pretrain_offline, train_dqn_online, train_pg_online
from .trace import DAY, diurnal_trace


@dataclass
class DiurnalSetup:
    days: int = 60
    train_days: int = 36
    node_count: int = 16
    busy_hours: float = 20.0
    waves: int = 20
    k: int = 6
    cadence: float = 3600
    limit_jitter: tuple[int, int] = (24 * 3600, 48 * 3600)
    hidden: tuple[int, ...] = (64, 32)
    experts: int = 2
    offline_starts: int = 300
    pretrain_epochs: int = 100
    dqn_episodes: int = 800
    pg_updates: int = 250
    pg_batch: int = 8
    eval_episodes: int = 200
    lr: float = 1e-3
    pg_lr: float = 3e-3
    updates_per_episode: int = 16
    gamma: float = 1.0
    terminal_only: bool = True
    submit_bias: float = -4.0  # initial P-head logit offset against submitting at every tick
    select_episodes: int = 60  # held-out training-range episodes for checkpoint scoring
    dqn_select_every: int = 25
    pg_select_every: int = 10

    def eval_cfg(self) -> EvalConfig:
        return EvalConfig(episodes=self.eval_episodes, pair=PairSpec(1, self.limit_jitter[1]), k=self.k,
                          cadence=self.cadence, limit_jitter=self.limit_jitter)


def _norm_from(exps) -> NormStats:
    rows = np.stack([e.state[:-1] for e in exps]).reshape(-1, 40)
    return NormStats.fit(rows)


class BestCheckpoint:
    """Progress hook: every `every` calls, score the policy on fixed plans and remember the best parameters."""

    def __init__(self, net, policy, plans, every: int, seed: int):
        self.net, self.policy, self.plans, self.every, self.seed = net, policy, plans, every, seed
        self.calls = 0
        self.best_err, self.best_theta = np.inf, None
        self.scores: list[float] = []

    def score(self) -> float:
        errs = []
        for i, plan in enumerate(self.plans):
            res = run_episode(plan, self.policy, np.random.default_rng([self.seed, i]), reactive_h=0.0)
            errs.append(res.outcome.magnitude)
        return float(np.mean(errs))

    def check(self) -> None:
        err = self.score()
        self.scores.append(err)
        if err < self.best_err:
            self.best_err, self.best_theta = err, self.net.theta.copy()

    def __call__(self, _entry) -> None:
        self.calls += 1
        if self.calls % self.every == 0:
            self.check()

    def restore(self) -> None:
        self.check()
        self.net.theta[:] = self.best_theta


def run_diurnal(seed: int, setup: DiurnalSetup = DiurnalSetup(), verbose: bool = False) -> dict:
    t_start = time.time()
    say = print if verbose else (lambda *a, **k: None)
    trace = diurnal_trace(setup.days, node_count=setup.node_count, busy_hours=setup.busy_hours, waves=setup.waves)
    split = setup.train_days * DAY
    ecfg = setup.eval_cfg()
    reward = RewardConfig(gamma=setup.gamma, terminal_only=setup.terminal_only)

    offline = collect_offline_samples(trace, 0, split, PairSpec(1, setup.limit_jitter[1]), setup.offline_starts,
                                      seed=seed, k=setup.k, cadence=setup.cadence, reward=reward)
    norm = _norm_from(offline)
    say(f"offline samples: {len(offline)} ({time.time() - t_start:.0f}s)")

    # mixture DQN: offline pretraining, then online episodes from the training range
    arch = ArchConfig(foundation="mlp", k=setup.k, hidden=setup.hidden, experts=setup.experts)
    dqn = init_network(arch, seed=seed, norm=norm)
    tcfg = TrainConfig(lr=setup.lr, batch=128, updates_per_episode=setup.updates_per_episode, seed=seed)
    opt = OptimizerState.like(dqn.theta, setup.lr)
    pretrain_offline(dqn, offline, setup.pretrain_epochs, tcfg, opt)
    pool = ReplayPool(tcfg.replay_capacity, seed)
    pool.extend(offline)
    env = ClusterEnv(trace, 0, split, ecfg, reward)
    held_out = sample_plans(trace, 0, split, setup.select_episodes, 20_000 + seed, ecfg)
    dqn_pick = BestCheckpoint(dqn, DQNPolicy(dqn), held_out, setup.dqn_select_every, seed)
    dqn_log = train_dqn_online(dqn, env, setup.dqn_episodes, tcfg, reward, pool=pool, opt=opt, progress=dqn_pick)
    dqn_pick.restore()
    say(f"dqn trained ({time.time() - t_start:.0f}s); last-100 mean reward "
        f"{np.mean([e.reward for e in dqn_log[-100:]]):.2f}; held-out error {dqn_pick.best_err:.2f} h")

    pg = init_network(ArchConfig(foundation="mlp", k=setup.k, hidden=setup.hidden), seed=seed + 1, norm=norm)
    pg.p_head.p["b"][0] += setup.submit_bias
    pcfg = TrainConfig(lr=setup.pg_lr, pg_batch=setup.pg_batch, seed=seed)
    pg_pick = BestCheckpoint(pg, PGPolicy(pg), held_out, setup.pg_select_every, seed)
    pg_log = train_pg_online(pg, ClusterEnv(trace, 0, split, ecfg, reward), setup.pg_updates, pcfg,
                             progress=pg_pick)
    pg_pick.restore()
    say(f"pg trained ({time.time() - t_start:.0f}s); last-100 mean reward "
        f"{np.mean([e.reward for e in pg_log[-100:]]):.2f}; held-out error {pg_pick.best_err:.2f} h")

    plans = sample_plans(trace, split, setup.days * DAY, setup.eval_episodes, 10_000 + seed, ecfg)
    policies = {"reactive": ReactivePolicy(), "avg": AvgPolicy(), "dqn-moe": DQNPolicy(dqn, "dqn-moe"),
                "pg": PGPolicy(pg)}
    report = evaluate(policies, plans, seed=seed)
    agg = report.aggregates()
    base = agg["reactive"]["heavy"].get("mean_interruption_h", float("nan"))
    result = {
        "seed": seed,
        "heavy_episodes": agg["reactive"]["heavy"]["n"],
        "reactive_heavy_mean_interruption_h": base,
        "seconds": time.time() - t_start,
        "summary": agg,
    }
    for name in ("avg", "dqn-moe", "pg"):
        err = agg[name]["heavy"].get("mean_abs_error_h", float("nan"))
        result[f"{name}_heavy_abs_error_h"] = err
        result[f"{name}_ratio"] = err / base if base else float("nan")
    say(f"done ({result['seconds']:.0f}s): " + ", ".join(
        f"{n} ratio {result[f'{n}_ratio']:.3f}" for n in ("avg", "dqn-moe", "pg")))
    result["report"] = report
    return result
