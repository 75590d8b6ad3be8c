"""Minimal numpy layers with explicit backward passes.

Every layer declares its parameters; the owning network allocates one flat
parameter vector and one flat gradient vector and hands each layer views into
them. `forward` caches what `backward` needs, so a backward call always refers
to the most recent forward call on that layer.
"""
from __future__ import annotations

import math

import numpy as np


class Layer:
    def param_specs(self) -> list[tuple[str, tuple[int, ...], float]]:
        """(name, shape, init) per parameter; init is a uniform half-width, "zeros" or "ones"."""
        return []

    def children(self) -> list["Layer"]:
        return []

    def bind(self, params: dict, grads: dict) -> None:
        self.p = params
        self.g = grads


def glorot(n_in: int, n_out: int) -> float:
    return math.sqrt(6.0 / (n_in + n_out))


class Linear(Layer):
    def __init__(self, n_in: int, n_out: int, bias: bool = True, init_width: float | None = None):
        if n_in < 1 or n_out < 1:
            raise ValueError("layer widths must be positive")
        self.n_in, self.n_out, self.bias = n_in, n_out, bias
        self.init_width = glorot(n_in, n_out) if init_width is None else init_width

    def param_specs(self):
        specs = [("W", (self.n_in, self.n_out), self.init_width)]
        if self.bias:
            specs.append(("b", (self.n_out,), "zeros"))
        return specs

    def forward(self, x):
        self.x = x
        y = x @ self.p["W"]
        if self.bias:
            y = y + self.p["b"]
        return y

    def backward(self, dy):
        x2 = self.x.reshape(-1, self.n_in)
        d2 = dy.reshape(-1, self.n_out)
        self.g["W"] += x2.T @ d2
        if self.bias:
            self.g["b"] += d2.sum(axis=0)
        return dy @ self.p["W"].T


_GELU_C = math.sqrt(2.0 / math.pi)


class GELU(Layer):
    def forward(self, x):
        self.x = x
        self.t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
        return 0.5 * x * (1.0 + self.t)

    def backward(self, dy):
        x, t = self.x, self.t
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return dy * (0.5 * (1.0 + t) + 0.5 * x * dt)


class LayerNorm(Layer):
    def __init__(self, d: int, eps: float = 1e-5):
        self.d, self.eps = d, eps

    def param_specs(self):
        return [("gamma", (self.d,), "ones"), ("beta", (self.d,), "zeros")]

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        xc = x - mu
        var = (xc * xc).mean(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + self.eps)
        self.xhat = xc * self.inv
        return self.xhat * self.p["gamma"] + self.p["beta"]

    def backward(self, dy):
        d = self.d
        self.g["gamma"] += (dy * self.xhat).reshape(-1, d).sum(axis=0)
        self.g["beta"] += dy.reshape(-1, d).sum(axis=0)
        dxhat = dy * self.p["gamma"]
        return self.inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                           - self.xhat * (dxhat * self.xhat).mean(axis=-1, keepdims=True))


def softmax(z, axis=-1):
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


class SelfAttention(Layer):
    def __init__(self, d: int, heads: int):
        if d % heads:
            raise ValueError("d_model must be divisible by the head count")
        self.d, self.h, self.dh = d, heads, d // heads
        self.qkv = Linear(d, 3 * d)
        self.out = Linear(d, d)

    def children(self):
        return [self.qkv, self.out]

    def forward(self, x):
        B, T, _ = x.shape
        qkv = self.qkv.forward(x).reshape(B, T, 3, self.h, self.dh).transpose(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]  # (B, h, T, dh)
        scale = 1.0 / math.sqrt(self.dh)
        a = softmax((q @ k.transpose(0, 1, 3, 2)) * scale)
        self.cache = (q, k, v, a, scale)
        o = (a @ v).transpose(0, 2, 1, 3).reshape(B, T, self.d)
        return self.out.forward(o)

    def backward(self, dy):
        q, k, v, a, scale = self.cache
        B, h, T, dh = q.shape
        do = self.out.backward(dy).reshape(B, T, h, dh).transpose(0, 2, 1, 3)
        da = do @ v.transpose(0, 1, 3, 2)
        dv = a.transpose(0, 1, 3, 2) @ do
        ds = a * (da - (da * a).sum(axis=-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        dqkv = np.stack([dq, dk, dv]).transpose(1, 3, 0, 2, 4).reshape(B, T, 3 * self.d)
        return self.qkv.backward(dqkv)


class EncoderLayer(Layer):
    """Pre-norm transformer encoder block."""

    def __init__(self, d: int, heads: int, ff: int):
        self.ln1, self.attn = LayerNorm(d), SelfAttention(d, heads)
        self.ln2, self.fc1, self.act, self.fc2 = LayerNorm(d), Linear(d, ff), GELU(), Linear(ff, d)

    def children(self):
        return [self.ln1, self.attn, self.ln2, self.fc1, self.act, self.fc2]

    def forward(self, x):
        x = x + self.attn.forward(self.ln1.forward(x))
        return x + self.fc2.forward(self.act.forward(self.fc1.forward(self.ln2.forward(x))))

    def backward(self, dy):
        dx1 = dy + self.ln2.backward(self.fc1.backward(self.act.backward(self.fc2.backward(dy))))
        return dx1 + self.ln1.backward(self.attn.backward(dx1))


def sinusoidal_positions(n: int, d: int) -> np.ndarray:
    pos = np.arange(n)[:, None]
    i = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


class MLPFoundation(Layer):
    def __init__(self, n_in: int, hidden: tuple[int, ...]):
        if not hidden or min(hidden) < 1:
            raise ValueError("MLP needs at least one positive-width hidden layer")
        self.layers: list[Layer] = []
        prev = n_in
        for width in hidden:
            self.layers += [Linear(prev, width), GELU()]
            prev = width
        self.d_out = prev

    def children(self):
        return self.layers

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy


class TransformerFoundation(Layer):
    """k history rows become k tokens; the action ordinal becomes one extra token.

    Output is the mean of the final token states.
    """

    def __init__(self, k: int, m: int, d_model: int, heads: int, layers: int, ff: int):
        if min(k, m, d_model, heads, layers, ff) < 1:
            raise ValueError("transformer dimensions must be positive")
        self.k, self.m, self.d = k, m, d_model
        self.embed = Linear(m, d_model)
        self.blocks = [EncoderLayer(d_model, heads, ff) for _ in range(layers)]
        self.ln = LayerNorm(d_model)
        self.pe = sinusoidal_positions(k + 1, d_model)
        self.d_out = d_model

    def param_specs(self):
        w = glorot(1, self.d)
        return [("act_w", (self.d,), w), ("act_b", (self.d,), w)]

    def children(self):
        return [self.embed, *self.blocks, self.ln]

    def forward(self, x):
        B = x.shape[0]
        rows = x[:, :-1].reshape(B, self.k, self.m)
        act = x[:, -1:]
        self.act = act
        tok = np.concatenate([self.embed.forward(rows),
                              (act * self.p["act_w"] + self.p["act_b"])[:, None, :]], axis=1)
        h = tok + self.pe.astype(x.dtype)
        for blk in self.blocks:
            h = blk.forward(h)
        h = self.ln.forward(h)
        return h.mean(axis=1)

    def backward(self, dy):
        T = self.k + 1
        dh = np.repeat(dy[:, None, :] / T, T, axis=1)
        dh = self.ln.backward(dh)
        for blk in reversed(self.blocks):
            dh = blk.backward(dh)
        drows = self.embed.backward(dh[:, :-1])
        da = dh[:, -1]
        self.g["act_w"] += (da * self.act).sum(axis=0)
        self.g["act_b"] += da.sum(axis=0)
        dx = np.empty((dy.shape[0], self.k * self.m + 1), dtype=dy.dtype)
        dx[:, :-1] = drows.reshape(dy.shape[0], -1)
        dx[:, -1] = (da * self.p["act_w"]).sum(axis=1)
        return dx


class MoEFoundation(Layer):
    """Dense mixture: softmax(x W) weights the experts' representations."""

    def __init__(self, experts: list[Layer], n_in: int):
        if not experts:
            raise ValueError("a mixture needs at least one expert")
        self.experts = experts
        self.gate = Linear(n_in, len(experts), bias=False, init_width=0.01)
        self.d_out = experts[0].d_out
        self.force: int | None = None

    def children(self):
        return [*self.experts, self.gate]

    def gate_weights(self, x):
        return softmax(self.gate.forward(x))

    def forward(self, x):
        if self.force is not None:
            return self.experts[self.force].forward(x)
        self.w = self.gate_weights(x)
        self.reps = [e.forward(x) for e in self.experts]
        out = self.w[:, 0:1] * self.reps[0]
        for i in range(1, len(self.experts)):
            out = out + self.w[:, i:i + 1] * self.reps[i]
        return out

    def backward(self, dy):
        if self.force is not None:
            return self.experts[self.force].backward(dy)
        w = self.w
        dx = None
        dw = np.empty_like(w)
        for i, (e, r) in enumerate(zip(self.experts, self.reps)):
            dw[:, i] = (dy * r).sum(axis=1)
            d = e.backward(w[:, i:i + 1] * dy)
            dx = d if dx is None else dx + d
        dlogits = w * (dw - (dw * w).sum(axis=1, keepdims=True))
        return dx + self.gate.backward(dlogits)


def walk(layer: Layer, prefix: str = ""):
    """Yield (path, layer) for a layer tree in a fixed order."""
    yield prefix, layer
    for i, child in enumerate(layer.children()):
        yield from walk(child, f"{prefix}{i}.")
