from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Experience:
    """One transition. `state` is a flat input whose action slot holds `action`."""
    state: np.ndarray
    action: float
    reward: float
    terminal: bool
    next_state: np.ndarray | None = None
    time: float = 0.0  # simulated instant of the decision

    def __post_init__(self):
        if self.terminal and self.next_state is not None:
            raise ValueError("terminal experiences carry no next state")


class ReplayPool:
    def __init__(self, capacity: int = 50_000, seed: int = 0):
        if capacity < 1:
            raise ValueError("replay capacity must be positive")
        self.capacity = capacity
        self.items: deque[Experience] = deque(maxlen=capacity)
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.items)

    def push(self, exp: Experience) -> None:
        self.items.append(exp)

    def extend(self, exps) -> None:
        for e in exps:
            self.push(e)

    def sample(self, batch: int) -> list[Experience]:
        n = len(self.items)
        if n == 0:
            raise ValueError("cannot sample from an empty replay pool")
        if batch > n:
            raise ValueError(f"batch {batch} exceeds pool size {n}")
        idx = self.rng.choice(n, size=batch, replace=False)
        return [self.items[i] for i in idx]


def replay_push(pool: ReplayPool, exp: Experience) -> None:
    pool.push(exp)


def replay_sample(pool: ReplayPool, batch: int) -> list[Experience]:
    return pool.sample(batch)
