"""Dual-head function approximator over a shared foundation.

The V-head maps the foundation output to one Q-value for the (state, action)
input; the P-head maps it to two logits (submit, hold). All parameters live in
one flat vector `theta` so optimizers and finite-difference checks can treat
the model as a single array.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..encoder import HOLD, K_DEFAULT, M_VARS, PLACEHOLDER, SUBMIT, NormStats, flatten, normalize
from .nn import Layer, Linear, MLPFoundation, MoEFoundation, TransformerFoundation, softmax, walk

MAGIC = b"MIRAGE01"
PROB_FLOOR = 1e-15  # keeps served probabilities inside (0, 1) when the logits saturate
FORMAT_VERSION = 1


class ModelFileError(ValueError):
    pass


@dataclass(frozen=True)
class ArchConfig:
    foundation: str = "mlp"  # "mlp" | "transformer"
    k: int = K_DEFAULT
    m: int = M_VARS
    hidden: tuple[int, ...] = (256, 128)
    d_model: int = 64
    heads: int = 4
    layers: int = 2
    ff: int = 128
    experts: int = 0  # 0: single foundation; E >= 1: dense mixture of E foundations
    dtype: str = "float32"

    @property
    def input_dim(self) -> int:
        return self.k * self.m + 1

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ArchConfig":
        d = dict(d)
        if "hidden" in d:
            d["hidden"] = tuple(int(x) for x in d["hidden"])
        return cls(**d)

    @classmethod
    def from_mapping(cls, section) -> "ArchConfig":
        kw = {}
        for key, raw in dict(section).items():
            key = key.strip().lower()
            if key in ("foundation", "dtype"):
                kw[key] = str(raw).strip()
            elif key == "hidden":
                kw[key] = tuple(int(x) for x in str(raw).replace(",", " ").split())
            elif key in ("k", "m", "d_model", "heads", "layers", "ff", "experts"):
                kw[key] = int(raw)
            else:
                raise ValueError(f"unknown [network] key: {key}")
        return cls(**kw)


def _make_foundation(arch: ArchConfig) -> Layer:
    if arch.foundation == "mlp":
        return MLPFoundation(arch.input_dim, arch.hidden)
    if arch.foundation == "transformer":
        return TransformerFoundation(arch.k, arch.m, arch.d_model, arch.heads, arch.layers, arch.ff)
    raise ValueError(f"unknown foundation {arch.foundation!r}")


class _Root(Layer):
    def __init__(self, foundation, v_head, p_head):
        self.foundation, self.v_head, self.p_head = foundation, v_head, p_head

    def children(self):
        return [self.foundation, self.v_head, self.p_head]


class Network:
    def __init__(self, arch: ArchConfig, seed: int = 0, norm: NormStats | None = None):
        if arch.experts < 0:
            raise ValueError("experts must be >= 0")
        self.arch = arch
        self.dtype = np.dtype(arch.dtype)
        self.norm = norm
        if arch.experts:
            self.foundation = MoEFoundation([_make_foundation(arch) for _ in range(arch.experts)], arch.input_dim)
        else:
            self.foundation = _make_foundation(arch)
        d = self.foundation.d_out
        self.v_head = Linear(d, 1)
        self.p_head = Linear(d, 2)
        self._root = _Root(self.foundation, self.v_head, self.p_head)
        self._allocate(seed)

    # ------------------------------------------------------------------ parameters

    def _allocate(self, seed: int) -> None:
        specs = []
        for path, layer in walk(self._root):
            for name, shape, init in layer.param_specs():
                specs.append((layer, path + name, name, shape, init))
        total = sum(int(np.prod(s[3])) for s in specs)
        self.theta = np.zeros(total, dtype=self.dtype)
        self.grad = np.zeros(total, dtype=self.dtype)
        self.slices: dict[str, slice] = {}
        rng = np.random.default_rng(seed)
        offset = 0
        bound: dict[int, tuple[dict, dict, Layer]] = {}
        for layer, full, name, shape, init in specs:
            n = int(np.prod(shape))
            sl = slice(offset, offset + n)
            self.slices[full] = sl
            if init == "zeros":
                pass
            elif init == "ones":
                self.theta[sl] = 1.0
            else:
                self.theta[sl] = rng.uniform(-init, init, size=n)
            p, g, _ = bound.setdefault(id(layer), ({}, {}, layer))
            p[name] = self.theta[sl].reshape(shape)
            g[name] = self.grad[sl].reshape(shape)
            offset += n
        for _, layer in walk(self._root):
            entry = bound.get(id(layer))
            layer.bind(*(entry[:2] if entry else ({}, {})))

    def param_slice(self, prefix: str) -> slice:
        """Contiguous span of parameters whose path starts with prefix."""
        idx = [s for k, s in self.slices.items() if k.startswith(prefix)]
        return slice(min(s.start for s in idx), max(s.stop for s in idx))

    def head_mask(self, head: str) -> np.ndarray:
        """Boolean mask of parameters trained by `head` ('v' or 'p')."""
        other = self.param_slice("2." if head == "v" else "1.")
        mask = np.ones(self.theta.size, dtype=bool)
        mask[other] = False
        return mask

    @property
    def n_params(self) -> int:
        return self.theta.size

    # ------------------------------------------------------------------ forward passes

    def prepare(self, flat: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(flat, dtype=float))
        if x.shape[1] != self.arch.input_dim:
            raise ValueError(f"expected inputs of width {self.arch.input_dim}, got {x.shape[1]}")
        if self.norm is not None:
            x = normalize(x, self.norm)
        return x.astype(self.dtype, copy=False)

    def representation(self, flat) -> np.ndarray:
        return self.foundation.forward(self.prepare(flat))

    def q(self, flat) -> np.ndarray:
        return self.v_head.forward(self.representation(flat))[:, 0]

    def logits(self, flat) -> np.ndarray:
        return self.p_head.forward(self.representation(flat))

    def probs(self, flat) -> np.ndarray:
        """Columns are (submit, hold) probabilities."""
        p = softmax(self.logits(flat).astype(np.float64))
        return p * (1.0 - 2 * PROB_FLOOR) + PROB_FLOOR

    # ------------------------------------------------------------------ losses and gradients

    def v_loss(self, flat, targets) -> float:
        err = self.q(flat).astype(np.float64) - np.asarray(targets, dtype=np.float64)
        return float(np.mean(err ** 2))

    def pg_surrogate(self, flat, action_idx, weights) -> float:
        p = softmax(self.logits(flat).astype(np.float64))
        logp = np.log(p[np.arange(len(action_idx)), np.asarray(action_idx, dtype=int)])
        return float(np.sum(np.asarray(weights, dtype=np.float64) * logp))

    def v_loss_grad(self, flat, targets) -> tuple[float, np.ndarray]:
        """Mean squared error of the V-head against targets; returns (loss, gradient copy)."""
        targets = np.asarray(targets, dtype=self.dtype)
        self.grad[:] = 0
        q = self.q(flat)
        err = q - targets
        loss = float(np.mean(err.astype(np.float64) ** 2))
        dq = (2.0 / err.size) * err
        self.foundation.backward(self.v_head.backward(dq[:, None].astype(self.dtype)))
        return loss, self.grad.copy()

    def pg_surrogate_grad(self, flat, action_idx, weights) -> tuple[float, np.ndarray]:
        """Surrogate sum_i w_i log pi(a_i | s_i) / n_episodes is supplied via `weights`.

        `action_idx` is 0 for submit, 1 for hold. Returns (surrogate, gradient copy).
        """
        action_idx = np.asarray(action_idx, dtype=int)
        weights = np.asarray(weights, dtype=np.float64)
        self.grad[:] = 0
        z = self.logits(flat).astype(np.float64)
        p = softmax(z)
        rows = np.arange(len(action_idx))
        logp = np.log(p[rows, action_idx])
        surrogate = float(np.sum(weights * logp))
        onehot = np.zeros_like(p)
        onehot[rows, action_idx] = 1.0
        dz = weights[:, None] * (onehot - p)
        self.foundation.backward(self.p_head.backward(dz.astype(self.dtype)))
        return surrogate, self.grad.copy()

    def copy(self) -> "Network":
        other = Network(self.arch, 0, self.norm)
        other.theta[:] = self.theta
        return other


def init_network(arch: ArchConfig, seed: int = 0, norm: NormStats | None = None) -> Network:
    return Network(arch, seed, norm)


def q_values(net: Network, matrix: np.ndarray) -> tuple[float, float]:
    x = np.stack([flatten(matrix, SUBMIT), flatten(matrix, HOLD)])
    q = net.q(x)
    return float(q[0]), float(q[1])


def greedy_submit(q_submit: float, q_hold: float) -> bool:
    """Ties hold."""
    return q_submit > q_hold


def action_probs(net: Network, matrix: np.ndarray) -> tuple[float, float]:
    p = net.probs(flatten(matrix, PLACEHOLDER))[0]
    return float(p[0]), float(p[1])


def moe_forward(net: Network, flat) -> np.ndarray:
    """Gated mixture of expert representations for a mixture network."""
    if not isinstance(net.foundation, MoEFoundation):
        raise TypeError("network has no mixture foundation")
    return net.representation(flat)


def gate_weights(net: Network, flat) -> np.ndarray:
    return net.foundation.gate_weights(net.prepare(flat))


# ---------------------------------------------------------------------- persistence

def save_model(net: Network, path, norm: NormStats | None = None) -> None:
    norm = net.norm if norm is None else norm
    header = {
        "format_version": FORMAT_VERSION,
        "arch": net.arch.to_dict(),
        "n_params": int(net.theta.size),
        "param_dtype": "<f4" if net.dtype == np.float32 else "<f8",
        "norm_m": 0 if norm is None else int(norm.mean.size),
    }
    hbytes = json.dumps(header, sort_keys=True).encode()
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(hbytes)))
        fh.write(hbytes)
        if norm is not None:
            fh.write(norm.mean.astype("<f8").tobytes())
            fh.write(norm.scale.astype("<f8").tobytes())
        fh.write(net.theta.astype(header["param_dtype"]).tobytes())


def load_model(path, expected: ArchConfig | None = None) -> Network:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4:
        raise ModelFileError("model file truncated")
    magic = data[:8]
    if magic != MAGIC:
        if magic[:6] == MAGIC[:6]:
            raise ModelFileError(f"unsupported model file version {magic[6:].decode(errors='replace')}")
        raise ModelFileError("not a model file (bad magic)")
    (hlen,) = struct.unpack("<I", data[8:12])
    pos = 12 + hlen
    if len(data) < pos:
        raise ModelFileError("model file truncated in header")
    try:
        header = json.loads(data[12:pos])
    except json.JSONDecodeError as exc:
        raise ModelFileError(f"corrupt model header: {exc}") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"unsupported format version {header.get('format_version')}")
    arch = ArchConfig.from_dict(header["arch"])
    if expected is not None and expected != arch:
        raise ModelFileError(f"model architecture {arch} conflicts with requested {expected}")
    m = header["norm_m"]
    pdtype = np.dtype(header["param_dtype"])
    need = pos + 16 * m + header["n_params"] * pdtype.itemsize
    if len(data) != need:
        raise ModelFileError(f"model file has {len(data)} bytes, expected {need} (truncated or corrupt)")
    norm = None
    if m:
        mean = np.frombuffer(data, "<f8", m, pos)
        scale = np.frombuffer(data, "<f8", m, pos + 8 * m)
        norm = NormStats(mean.copy(), scale.copy())
        pos += 16 * m
    net = Network(arch, 0, norm)
    if net.theta.size != header["n_params"]:
        raise ModelFileError("parameter count does not match architecture")
    net.theta[:] = np.frombuffer(data, pdtype, header["n_params"], pos)
    return net
