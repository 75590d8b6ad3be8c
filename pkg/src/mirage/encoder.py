"""State encoding: 40-variable snapshot vectors, k-row history matrices, flat network inputs.

Vector layout (0-based slices):
    0       queued job count
    1:6     queued sizes   p0 p25 p50 p75 p100
    6:11    queued ages (h)
    11:16   queued limits (h)
    16      running job count
    17:24   running sizes  p0..p100, mean, std
    24:29   running elapsed (h)
    29:34   running limits (h)
    34:40   predecessor size, limit (h), queue wait (h), elapsed (h); successor size, limit (h)
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .simulator import ClusterSnapshot

M_VARS = 40
K_DEFAULT = 144
INTERVAL_DEFAULT = 600
HOUR = 3600.0

SUBMIT, HOLD, PLACEHOLDER = 1.0, -1.0, 0.0

# name -> slice into the state vector; used by the coverage test
LAYOUT = {
    "queue_len": slice(0, 1),
    "queue_size": slice(1, 6),
    "queue_age": slice(6, 11),
    "queue_limit": slice(11, 16),
    "run_count": slice(16, 17),
    "run_size": slice(17, 24),
    "run_elapsed": slice(24, 29),
    "run_limit": slice(29, 34),
    "pair": slice(34, 40),
}

_QS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])


@dataclass(frozen=True)
class PairState:
    pred_size: float
    pred_limit: float  # seconds
    pred_wait: float  # seconds
    pred_elapsed: float  # seconds
    succ_size: float
    succ_limit: float  # seconds

    def as_features(self) -> np.ndarray:
        return np.array([self.pred_size, self.pred_limit / HOUR, self.pred_wait / HOUR,
                         self.pred_elapsed / HOUR, self.succ_size, self.succ_limit / HOUR])


def percentile_summary(values) -> np.ndarray:
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        return np.zeros(5)
    pos = _QS * (v.size - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, v.size - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)


def encode_snapshot(snapshot: ClusterSnapshot, pair: PairState) -> np.ndarray:
    out = np.empty(M_VARS)
    q, r = snapshot.queued, snapshot.running
    out[0] = len(q)
    out[1:6] = percentile_summary(q[:, 0])
    out[6:11] = percentile_summary(q[:, 1] / HOUR)
    out[11:16] = percentile_summary(q[:, 2] / HOUR)
    out[16] = len(r)
    sizes = r[:, 0]
    out[17:22] = percentile_summary(sizes)
    out[22] = sizes.mean() if sizes.size else 0.0
    out[23] = sizes.std() if sizes.size else 0.0
    out[24:29] = percentile_summary(r[:, 1] / HOUR)
    out[29:34] = percentile_summary(r[:, 2] / HOUR)
    out[34:40] = pair.as_features()
    return out


class History:
    """Ring of the most recent state vectors."""

    def __init__(self, k: int = K_DEFAULT):
        self.k = k
        self._rows: deque[np.ndarray] = deque(maxlen=k)

    def push(self, vec: np.ndarray) -> None:
        self._rows.append(np.asarray(vec, dtype=float))

    def __len__(self) -> int:
        return len(self._rows)

    def copy(self) -> "History":
        h = History(self.k)
        h._rows.extend(self._rows)
        return h

    def matrix(self) -> np.ndarray:
        return build_state_matrix(self._rows, self.k)


def build_state_matrix(history, k: int = K_DEFAULT, m: int = M_VARS) -> np.ndarray:
    rows = list(history)[-k:] if k > 0 else []
    mat = np.zeros((k, m))
    if rows:
        mat[k - len(rows):] = np.asarray(rows, dtype=float)
    return mat


def flatten(matrix: np.ndarray, action: float) -> np.ndarray:
    if action not in (SUBMIT, HOLD, PLACEHOLDER):
        raise ValueError(f"action ordinal must be -1, 0 or +1, got {action}")
    return np.concatenate([np.asarray(matrix, dtype=float).ravel(), [float(action)]])


def unflatten(flat: np.ndarray, k: int = K_DEFAULT, m: int = M_VARS) -> tuple[np.ndarray, float]:
    flat = np.asarray(flat)
    if flat.size != k * m + 1:
        raise ValueError(f"expected {k * m + 1} values, got {flat.size}")
    return flat[:-1].reshape(k, m).copy(), float(flat[-1])


@dataclass
class NormStats:
    """Per-variable affine standardization shared by every history row."""
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=float)
        scale = np.asarray(self.scale, dtype=float).copy()
        scale[~(np.abs(scale) > 0)] = 1.0
        self.scale = scale

    @classmethod
    def identity(cls, m: int = M_VARS) -> "NormStats":
        return cls(np.zeros(m), np.ones(m))

    @classmethod
    def fit(cls, rows) -> "NormStats":
        """Fit from training state vectors (any array whose last axis is the variable axis)."""
        a = np.asarray(rows, dtype=float)
        a = a.reshape(-1, a.shape[-1])
        return cls(a.mean(axis=0), a.std(axis=0))


def normalize(flat: np.ndarray, stats: NormStats) -> np.ndarray:
    """Standardize every row of a flat state (or a batch of them); the action slot passes through."""
    flat = np.asarray(flat, dtype=float)
    m = stats.mean.size
    body = flat[..., :-1]
    k = body.shape[-1] // m
    shaped = body.reshape(body.shape[:-1] + (k, m))
    out = np.empty_like(flat)
    out[..., :-1] = ((shaped - stats.mean) / stats.scale).reshape(body.shape)
    out[..., -1] = flat[..., -1]
    return out
