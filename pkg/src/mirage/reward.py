"""Episode outcomes and the shared shaped reward."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .encoder import HOLD, SUBMIT
from .rl.replay import Experience

HOUR = 3600.0


class Kind(str, Enum):
    INTERRUPTION = "interruption"
    OVERLAP = "overlap"
    EXACT = "exact"


@dataclass(frozen=True)
class RewardConfig:
    e_i: float = 1.0
    e_o: float = 1.0
    gamma: float = 0.99
    # reward only the submit step instead of every step of the episode
    terminal_only: bool = False

    def __post_init__(self):
        if self.e_i < 0 or self.e_o < 0:
            raise ValueError("penalty coefficients must be non-negative")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")

    @classmethod
    def from_mapping(cls, section) -> "RewardConfig":
        kw = {}
        for key, raw in dict(section).items():
            key = key.strip().lower()
            if key in ("e_i", "e_o", "gamma"):
                kw[key] = float(raw)
            elif key == "terminal_only":
                kw[key] = str(raw).strip().lower() in ("1", "true", "yes", "on")
            else:
                raise ValueError(f"unknown [reward] key: {key}")
        return cls(**kw)


@dataclass(frozen=True)
class Outcome:
    kind: Kind
    magnitude: float  # hours

    def __post_init__(self):
        if self.magnitude < 0:
            raise ValueError("outcome magnitude must be non-negative")
        if (self.magnitude == 0) != (self.kind == Kind.EXACT):
            raise ValueError("magnitude is zero exactly when the outcome is exact")

    @property
    def interruption(self) -> float:
        return self.magnitude if self.kind == Kind.INTERRUPTION else 0.0

    @property
    def overlap(self) -> float:
        return self.magnitude if self.kind == Kind.OVERLAP else 0.0

    @property
    def signed(self) -> float:
        """Successor start minus predecessor end, in hours."""
        return self.interruption - self.overlap


def outcome(pred_end: float, succ_start: float) -> Outcome:
    """Compare realized times (seconds)."""
    gap = succ_start - pred_end
    if gap > 0:
        return Outcome(Kind.INTERRUPTION, gap / HOUR)
    if gap < 0:
        return Outcome(Kind.OVERLAP, -gap / HOUR)
    return Outcome(Kind.EXACT, 0.0)


def shape_reward(out: Outcome, cfg: RewardConfig) -> float:
    if out.kind == Kind.INTERRUPTION:
        return -cfg.e_i * out.magnitude
    if out.kind == Kind.OVERLAP:
        return -cfg.e_o * out.magnitude
    return 0.0


@dataclass
class Episode:
    """Decisions from the first invocation after predecessor submission to the submit.

    `steps` holds (instant, action, flat state with the action slot set).
    """
    steps: list[tuple[float, float, np.ndarray]] = field(default_factory=list)
    outcome: Outcome | None = None

    @property
    def submit_index(self) -> int:
        return len(self.steps) - 1

    def validate(self) -> None:
        actions = [a for _, a, _ in self.steps]
        if not actions or actions[-1] != SUBMIT:
            raise ValueError("episode must end with a submit action")
        if actions.count(SUBMIT) != 1:
            raise ValueError("episode must contain exactly one submit action")
        if self.outcome is None:
            raise ValueError("episode outcome not observed yet")


def episode_experiences(states, actions, times, reward: float, terminal_only: bool = False) -> list[Experience]:
    n = len(states)
    out = []
    for i in range(n):
        last = i == n - 1
        out.append(Experience(
            state=states[i], action=actions[i],
            reward=reward if (last or not terminal_only) else 0.0,
            terminal=last,
            next_state=None if last else states[i + 1],
            time=times[i],
        ))
    return out


def assign_episode_rewards(episode: Episode, cfg: RewardConfig) -> list[Experience]:
    episode.validate()
    r = shape_reward(episode.outcome, cfg)
    times, actions, states = zip(*episode.steps)
    return episode_experiences(list(states), list(actions), list(times), r, cfg.terminal_only)
