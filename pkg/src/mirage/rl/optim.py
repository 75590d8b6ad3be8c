from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0

    @classmethod
    def like(cls, theta: np.ndarray, lr: float = 1e-3, **kw) -> "OptimizerState":
        return cls(np.zeros(theta.shape, dtype=np.float64), np.zeros(theta.shape, dtype=np.float64), lr, **kw)


def adam_step(theta: np.ndarray, grad: np.ndarray, state: OptimizerState) -> tuple[np.ndarray, OptimizerState]:
    """Descend `grad` in place with bias-corrected moments; returns (theta, state)."""
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {theta.shape}")
    g = grad.astype(np.float64, copy=False)
    state.t += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.t)
    v_hat = state.v / (1.0 - state.beta2 ** state.t)
    theta -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(theta.dtype)
    return theta, state
