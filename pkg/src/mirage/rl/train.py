"""Offline supervised pretraining and online DQN / policy-gradient loops.

Environments follow a small protocol: `reset(rng)` returns the first state
matrix, `step(submit)` returns `(next_matrix_or_None, done)`, and once an
episode is done `reward` holds its shaped reward and `time` its start instant.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Callable, Protocol

import numpy as np

from ..encoder import HOLD, PLACEHOLDER, SUBMIT, flatten
from ..reward import RewardConfig, episode_experiences
from .network import Network, greedy_submit
from .nn import MoEFoundation
from .optim import OptimizerState, adam_step
from .replay import Experience, ReplayPool


class Env(Protocol):
    reward: float
    time: float

    def reset(self, rng: np.random.Generator) -> np.ndarray: ...

    def step(self, submit: bool) -> tuple[np.ndarray | None, bool]: ...


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 128
    epochs: int = 50
    replay_capacity: int = 50_000
    updates_per_episode: int = 4
    eps_start: float = 0.5
    eps_end: float = 0.05
    eps_decay_frac: float = 0.5
    pg_batch: int = 8
    baseline: bool = True
    moe_fractions: int = 10
    seed: int = 0

    @classmethod
    def from_mapping(cls, section) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in dict(section).items():
            key = key.strip().lower()
            if key not in types:
                raise ValueError(f"unknown [train] key: {key}")
            t = types[key]
            if t == "bool":
                kw[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            elif t == "int":
                kw[key] = int(raw)
            else:
                kw[key] = float(raw)
        return cls(**kw)


def epsilon_at(episode: int, episodes: int, cfg: TrainConfig) -> float:
    """Linear decay from eps_start to eps_end over the first eps_decay_frac of training, then flat."""
    span = max(1.0, cfg.eps_decay_frac * episodes)
    frac = min(1.0, episode / span)
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


# ---------------------------------------------------------------------- supervised pretraining

def _regress(net: Network, exps: list[Experience], epochs: int, cfg: TrainConfig, opt: OptimizerState,
             rng: np.random.Generator) -> list[float]:
    X = np.stack([e.state for e in exps])
    y = np.array([e.reward for e in exps], dtype=float)
    mask = net.head_mask("v")
    losses = []
    for _ in range(epochs):
        order = rng.permutation(len(y))
        total = 0.0
        for lo in range(0, len(y), cfg.batch):
            idx = order[lo:lo + cfg.batch]
            loss, g = net.v_loss_grad(X[idx], y[idx])
            g[~mask] = 0
            adam_step(net.theta, g, opt)
            total += loss * len(idx)
        losses.append(total / len(y))
    return losses


def pretrain_offline(net: Network, pool, epochs: int, cfg: TrainConfig = TrainConfig(),
                     opt: OptimizerState | None = None) -> list[float]:
    """Fit the V-head to observed shaped rewards; returns the per-epoch mean loss.

    A mixture foundation is first trained expert by expert on temporal slices of
    the pool (slice i goes to expert i mod E), then jointly with the gate.
    """
    exps = list(pool.items if isinstance(pool, ReplayPool) else pool)
    if not exps:
        raise ValueError("cannot pretrain on an empty pool")
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState.like(net.theta, cfg.lr) if opt is None else opt
    losses: list[float] = []
    moe = net.foundation if isinstance(net.foundation, MoEFoundation) else None
    if moe is not None and cfg.moe_fractions > 0 and len(moe.experts) > 1:
        by_time = sorted(exps, key=lambda e: e.time)
        parts = np.array_split(np.arange(len(by_time)), cfg.moe_fractions)
        n_exp = len(moe.experts)
        try:
            for e in range(n_exp):
                idx = np.concatenate([p for i, p in enumerate(parts) if i % n_exp == e])
                if idx.size == 0:
                    continue
                moe.force = e
                losses += _regress(net, [by_time[i] for i in idx], epochs, cfg, opt, rng)
        finally:
            moe.force = None
    losses += _regress(net, exps, epochs, cfg, opt, rng)
    return losses


# ---------------------------------------------------------------------- online DQN

@dataclass
class EpisodeLog:
    episode: int
    steps: int
    reward: float
    epsilon: float
    loss: float
    submitted_at_step: int


def dqn_targets(net: Network, batch: list[Experience], gamma: float) -> np.ndarray:
    r = np.array([e.reward for e in batch], dtype=float)
    live = [i for i, e in enumerate(batch) if not e.terminal]
    if live and gamma != 0:
        nxt = np.stack([batch[i].next_state for i in live])
        xs, xh = nxt.copy(), nxt.copy()
        xs[:, -1], xh[:, -1] = SUBMIT, HOLD
        q = net.q(np.concatenate([xs, xh])).astype(np.float64)
        best = np.maximum(q[: len(live)], q[len(live):])
        r[live] += gamma * best
    return r


def _select(net: Network, matrix: np.ndarray, eps: float, rng: np.random.Generator):
    xs, xh = flatten(matrix, SUBMIT), flatten(matrix, HOLD)
    if rng.random() < eps:
        submit = bool(rng.random() < 0.5)
    else:
        q = net.q(np.stack([xs, xh]))
        submit = greedy_submit(float(q[0]), float(q[1]))
    return submit, (xs if submit else xh)


def train_dqn_online(net: Network, env: Env, episodes: int, cfg: TrainConfig = TrainConfig(),
                     reward: RewardConfig = RewardConfig(), pool: ReplayPool | None = None,
                     opt: OptimizerState | None = None,
                     epsilon: Callable[[int], float] | None = None,
                     progress: Callable[[EpisodeLog], None] | None = None) -> list[EpisodeLog]:
    """Epsilon-greedy rollouts into a replay pool; after each episode, mini-batch steps toward
    r + gamma * max_a Q(next, a) (just r for terminal transitions). `reward` supplies the
    discount and whether only the submit step carries the episode reward."""
    rng = np.random.default_rng(cfg.seed)
    pool = ReplayPool(cfg.replay_capacity, cfg.seed) if pool is None else pool
    opt = OptimizerState.like(net.theta, cfg.lr) if opt is None else opt
    mask = net.head_mask("v")
    eps_fn = epsilon or (lambda ep: epsilon_at(ep, episodes, cfg))
    log = []
    for ep in range(episodes):
        eps = eps_fn(ep)
        matrix = env.reset(rng)
        states, actions, nexts = [], [], []
        while True:
            submit, x = _select(net, matrix, eps, rng)
            states.append(x.astype(np.float32))
            actions.append(SUBMIT if submit else HOLD)
            matrix, done = env.step(submit)
            if done:
                break
            nexts.append(flatten(matrix, PLACEHOLDER).astype(np.float32))
        exps = episode_experiences(states, actions, [env.time] * len(states), env.reward, reward.terminal_only)
        for e, n in zip(exps, nexts):
            e.next_state = n
        pool.extend(exps)
        loss = float("nan")
        for _ in range(cfg.updates_per_episode):
            batch = pool.sample(min(cfg.batch, len(pool)))
            targets = dqn_targets(net, batch, reward.gamma)
            loss, g = net.v_loss_grad(np.stack([e.state for e in batch]), targets)
            g[~mask] = 0
            adam_step(net.theta, g, opt)
        entry = EpisodeLog(ep, len(states), float(env.reward), eps, loss,
                           len(states) - 1 if actions[-1] == SUBMIT else -1)
        log.append(entry)
        if progress:
            progress(entry)
    return log


# ---------------------------------------------------------------------- online policy gradient

def train_pg_online(net: Network, env: Env, updates: int, cfg: TrainConfig = TrainConfig(),
                    opt: OptimizerState | None = None,
                    progress: Callable[[EpisodeLog], None] | None = None) -> list[EpisodeLog]:
    """REINFORCE: each update rolls `pg_batch` episodes and ascends sum_t (R - b) grad log pi(a_t|s_t).

    R is the episode's shaped reward, b the batch mean when `baseline` is on.
    An all-zero gradient leaves the parameters (and the optimizer state) untouched.
    """
    rng = np.random.default_rng(cfg.seed)
    opt = OptimizerState.like(net.theta, cfg.lr) if opt is None else opt
    mask = net.head_mask("p")
    log = []
    for u in range(updates):
        xs, acts, owners, returns = [], [], [], []
        for b in range(cfg.pg_batch):
            matrix = env.reset(rng)
            n0 = len(xs)
            while True:
                x = flatten(matrix, PLACEHOLDER)
                p_submit = float(net.probs(x)[0, 0])
                submit = bool(rng.random() < p_submit)
                xs.append(x)
                acts.append(0 if submit else 1)
                owners.append(b)
                matrix, done = env.step(submit)
                if done:
                    break
            returns.append(float(env.reward))
            log.append(EpisodeLog(u * cfg.pg_batch + b, len(xs) - n0, float(env.reward), 0.0, 0.0,
                                  len(xs) - n0 - 1 if acts[-1] == 0 else -1))
        R = np.array(returns)
        adv = R - R.mean() if cfg.baseline else R
        w = adv[np.array(owners)] / cfg.pg_batch
        surrogate, g = net.pg_surrogate_grad(np.stack(xs), acts, w)
        g[~mask] = 0
        if g.any():
            adam_step(net.theta, -g, opt)  # ascent
        if progress:
            progress(log[-1])
    return log


# ---------------------------------------------------------------------- synthetic environments

class BanditEnv:
    """One state, both actions end the episode with a fixed reward."""

    def __init__(self, reward_submit: float, reward_hold: float, k: int = 4, m: int = 40, value: float = 0.5):
        self.rewards = {True: reward_submit, False: reward_hold}
        self.matrix = np.full((k, m), value)
        self.reward, self.time = 0.0, 0.0

    def reset(self, rng) -> np.ndarray:
        return self.matrix

    def step(self, submit: bool):
        self.reward = self.rewards[bool(submit)]
        return None, True


class ChainEnv:
    """A short chain of distinct states; holding moves along, submitting (or the last state) ends it."""

    def __init__(self, rewards_by_state: list[float], k: int = 4, m: int = 40):
        self.rewards = rewards_by_state
        self.k, self.m = k, m
        self.reward, self.time, self.i = 0.0, 0.0, 0

    def _matrix(self) -> np.ndarray:
        mat = np.zeros((self.k, self.m))
        mat[:, 0] = self.i
        return mat

    def reset(self, rng) -> np.ndarray:
        self.i = 0
        return self._matrix()

    def step(self, submit: bool):
        if submit or self.i == len(self.rewards) - 1:
            self.reward = self.rewards[self.i]
            return None, True
        self.i += 1
        return self._matrix(), False
