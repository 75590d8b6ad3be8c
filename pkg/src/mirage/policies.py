"""Non-learned submission rules and regression-tree wait predictors."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HOUR = 3600.0
TREE_MAGIC = "MIRAGE-TREES 1"


def reactive_decide(pred_done: bool) -> bool:
    return bool(pred_done)


@dataclass
class AvgTracker:
    """Running mean of observed queue waits (seconds); `window` keeps only the trailing N."""
    window: int | None = None
    waits: list[float] = field(default_factory=list)
    _seen: int = 0

    def observe(self, wait: float) -> None:
        if wait < 0:
            raise ValueError("queue wait cannot be negative")
        self.waits.append(float(wait))
        if self.window is not None and len(self.waits) > self.window:
            del self.waits[: len(self.waits) - self.window]

    def sync(self, log) -> None:
        """Consume entries of an append-only wait log not seen yet."""
        for w in log[self._seen:]:
            self.observe(w)
        self._seen = len(log)

    @property
    def mean_wait(self) -> float:
        return float(np.mean(self.waits)) if self.waits else 0.0


def avg_decide(tracker: AvgTracker, remaining_pred: float) -> bool:
    return remaining_pred <= tracker.mean_wait


# ---------------------------------------------------------------------- regression trees

@dataclass
class Node:
    value: float
    feature: int = -1
    threshold: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None

    @property
    def leaf(self) -> bool:
        return self.left is None

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self.leaf:
            return np.full(len(X), self.value)
        go_left = X[:, self.feature] <= self.threshold
        out = np.empty(len(X))
        out[go_left] = self.left.predict(X[go_left])
        out[~go_left] = self.right.predict(X[~go_left])
        return out


def _best_split(X: np.ndarray, y: np.ndarray, min_leaf: int):
    """Exhaustive search for the split (x <= threshold) with the smallest summed squared error."""
    n = len(y)
    best = None
    best_sse = np.sum((y - y.mean()) ** 2) - 1e-12 * max(1.0, float(np.abs(y).max(initial=0.0)))
    for f in range(X.shape[1]):
        order = np.argsort(X[:, f], kind="stable")
        xs, ys = X[order, f], y[order]
        cs, cs2 = np.cumsum(ys), np.cumsum(ys * ys)
        nl = np.arange(1, n)
        # split after position i-1 only where the value changes
        ok = (xs[1:] != xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not ok.any():
            continue
        sl, sl2 = cs[:-1], cs2[:-1]
        sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
        sse = (sl2 - sl * sl / nl) + (sr2 - sr * sr / (n - nl))
        sse = np.where(ok, sse, np.inf)
        i = int(np.argmin(sse))
        if sse[i] < best_sse:
            best_sse, best = sse[i], (f, float(xs[i]))
    return best


def fit_tree(X: np.ndarray, y: np.ndarray, depth: int, min_leaf: int = 1) -> Node:
    node = Node(float(np.mean(y)))
    if depth <= 0 or len(y) < 2 * min_leaf:
        return node
    split = _best_split(X, y, min_leaf)
    if split is None:
        return node
    f, thr = split
    mask = X[:, f] <= thr
    node.feature, node.threshold = f, thr
    node.left = fit_tree(X[mask], y[mask], depth - 1, min_leaf)
    node.right = fit_tree(X[~mask], y[~mask], depth - 1, min_leaf)
    return node


@dataclass
class TreeConfig:
    kind: str = "boosted"  # "boosted" | "bagged"
    n_trees: int = 50
    depth: int = 4
    learning_rate: float = 0.1
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("boosted", "bagged"):
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.n_trees < 0 or self.depth < 0 or self.min_leaf < 1:
            raise ValueError("tree count, depth and leaf size must be non-negative / positive")


@dataclass
class TreeEnsemble:
    kind: str
    trees: list[Node]
    base: float
    learning_rate: float = 1.0
    depth: int = 0
    n_features: int = 0

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.trees:
            return np.full(len(X), self.base)
        if self.kind == "bagged":
            return np.mean([t.predict(X) for t in self.trees], axis=0)
        out = np.full(len(X), self.base)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out


def fit_tree_ensemble(samples, cfg: TreeConfig = TreeConfig()) -> TreeEnsemble:
    """`samples` is a sequence of (features, target) pairs or an (X, y) tuple of arrays."""
    if isinstance(samples, tuple) and len(samples) == 2 and isinstance(samples[0], np.ndarray):
        X, y = samples
    else:
        samples = list(samples)
        if not samples:
            raise ValueError("cannot fit a tree ensemble to an empty sample set")
        X = np.array([s[0] for s in samples], dtype=float)
        y = np.array([s[1] for s in samples], dtype=float)
    X, y = np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(y, dtype=float)
    if len(y) == 0:
        raise ValueError("cannot fit a tree ensemble to an empty sample set")
    rng = np.random.default_rng(cfg.seed)
    base = float(np.mean(y))
    trees = []
    if cfg.kind == "bagged":
        for _ in range(cfg.n_trees):
            idx = rng.integers(0, len(y), size=len(y))
            trees.append(fit_tree(X[idx], y[idx], cfg.depth, cfg.min_leaf))
        return TreeEnsemble("bagged", trees, base, 1.0, cfg.depth, X.shape[1])
    pred = np.full(len(y), base)
    for _ in range(cfg.n_trees):
        t = fit_tree(X, y - pred, cfg.depth, cfg.min_leaf)
        trees.append(t)
        pred += cfg.learning_rate * t.predict(X)
    return TreeEnsemble("boosted", trees, base, cfg.learning_rate, cfg.depth, X.shape[1])


def predictor_decide(model: TreeEnsemble, features, remaining_pred: float) -> bool:
    """Submit once the predicted wait (hours) covers the predecessor's remaining time (seconds)."""
    predicted_h = float(model.predict(np.asarray(features, dtype=float).reshape(1, -1))[0])
    return predicted_h * HOUR >= remaining_pred


# ---------------------------------------------------------------------- text persistence

def _dump(node: Node, out: list[str]) -> None:
    if node.leaf:
        out.append(f"L {node.value!r}")
        return
    out.append(f"S {node.feature} {node.threshold!r} {node.value!r}")
    _dump(node.left, out)
    _dump(node.right, out)


def _load(lines, pos: int) -> tuple[Node, int]:
    parts = lines[pos].split()
    if parts[0] == "L":
        return Node(float(parts[1])), pos + 1
    if parts[0] != "S" or len(parts) != 4:
        raise ValueError(f"malformed tree line {pos + 1}: {lines[pos]!r}")
    node = Node(float(parts[3]), int(parts[1]), float(parts[2]))
    node.left, pos = _load(lines, pos + 1)
    node.right, pos = _load(lines, pos)
    return node, pos


def save_trees(model: TreeEnsemble, path) -> None:
    lines = [TREE_MAGIC,
             f"kind={model.kind} trees={len(model.trees)} depth={model.depth} "
             f"lr={model.learning_rate!r} base={model.base!r} features={model.n_features}"]
    for t in model.trees:
        lines.append("tree")
        _dump(t, lines)
    Path(path).write_text("\n".join(lines) + "\n")


def load_trees(path) -> TreeEnsemble:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != TREE_MAGIC:
        raise ValueError("not a tree ensemble file")
    try:
        head = dict(kv.split("=", 1) for kv in lines[1].split())
        n = int(head["trees"])
        trees, pos = [], 2
        for _ in range(n):
            if lines[pos] != "tree":
                raise ValueError(f"expected 'tree' at line {pos + 1}")
            t, pos = _load(lines, pos + 1)
            trees.append(t)
    except (KeyError, IndexError) as exc:
        raise ValueError(f"truncated or malformed tree file: {exc}") from None
    return TreeEnsemble(head["kind"], trees, float(head["base"]), float(head["lr"]),
                        int(head["depth"]), int(head["features"]))
