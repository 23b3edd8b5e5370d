"""Exact greedy binary trees.

One grower serves three split criteria:

* ``gini``   weighted Gini impurity, leaves hold the class-1 probability
* ``newton`` squared error on residual targets, leaves take one Newton step
* ``second_order`` gradient/hessian gain with L1/L2 leaf regularisation and a
  minimum-gain penalty

Thresholds sit at midpoints between consecutive distinct values and a row goes
left iff ``value <= threshold``. Gain ties resolve to the lower feature index,
then the lower threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

HESSIAN_FLOOR = 1e-16
LEAF = -1


@dataclass
class DecisionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_splits(self) -> int:
        return int(np.sum(self.feature != LEAF))

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        while True:
            f = self.feature[node]
            live = np.flatnonzero(f != LEAF)
            if len(live) == 0:
                return node
            cur = node[live]
            go_left = X[live, f[live]] <= self.threshold[cur]
            node[live] = np.where(go_left, self.left[cur], self.right[cur])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(np.asarray(X, dtype=float))]

    @classmethod
    def leaf(cls, value: float, n: int = 0) -> "DecisionTree":
        return cls(np.array([LEAF]), np.array([0.0]), np.array([LEAF]), np.array([LEAF]),
                   np.array([float(value)]), np.array([0.0]), np.array([n]))


def resolve_max_features(rule, n_features: int) -> int:
    if rule is None or rule == "all":
        return n_features
    if rule == "sqrt":
        return max(1, int(math.sqrt(n_features)))
    if rule == "log2":
        return max(1, int(math.log2(n_features))) if n_features > 1 else 1
    if isinstance(rule, bool):
        raise ValueError(f"invalid max_features {rule!r}")
    if isinstance(rule, int):
        if rule < 1:
            raise ValueError("max_features must be >= 1")
        return min(rule, n_features)
    if isinstance(rule, float):
        if not 0 < rule <= 1:
            raise ValueError("fractional max_features must lie in (0, 1]")
        return max(1, int(rule * n_features))
    raise ValueError(f"invalid max_features {rule!r}")


# ---------------------------------------------------------------- criteria
# Each criterion maps per-row statistics to split gains and leaf values.
# Stats columns: gini (w0, w1); newton (r, h, 1); second_order (g, h).


def _safe_div(a, b):
    return np.divide(a, b, out=np.zeros_like(a, dtype=float), where=b > 0)


class _Gini:
    accept_zero_gain = True

    @staticmethod
    def impurity(s):
        w = s[..., 0] + s[..., 1]
        return _safe_div(2.0 * s[..., 0] * s[..., 1], w)

    def gain(self, left, right, total):
        return self.impurity(total) - self.impurity(left) - self.impurity(right)

    def leaf_value(self, total) -> float:
        w = total[0] + total[1]
        return float(total[1] / w) if w > 0 else 0.0

    def is_pure(self, stats) -> bool:
        return not (np.any(stats[:, 0] > 0) and np.any(stats[:, 1] > 0))


class _Newton:
    accept_zero_gain = True

    @staticmethod
    def _score(s):
        return _safe_div(s[..., 0] ** 2, s[..., 2])

    def gain(self, left, right, total):
        return self._score(left) + self._score(right) - self._score(total)

    def leaf_value(self, total) -> float:
        return float(total[0] / max(total[1], HESSIAN_FLOOR))

    def is_pure(self, stats) -> bool:
        r = stats[:, 0]
        return bool(r.max() == r.min())


class _SecondOrder:
    accept_zero_gain = False

    def __init__(self, reg_lambda: float, reg_alpha: float, gamma: float):
        self.reg_lambda = reg_lambda
        self.reg_alpha = reg_alpha
        self.gamma = gamma

    def _score(self, s):
        return s[..., 0] ** 2 / np.maximum(s[..., 1] + self.reg_lambda, HESSIAN_FLOOR)

    def gain(self, left, right, total):
        return 0.5 * (self._score(left) + self._score(right) - self._score(total)) - self.gamma

    def leaf_value(self, total) -> float:
        g, h = total[0], total[1]
        shrunk = math.copysign(max(abs(g) - self.reg_alpha, 0.0), g)
        return float(-shrunk / max(h + self.reg_lambda, HESSIAN_FLOOR))

    def is_pure(self, stats) -> bool:
        return False


def gini_criterion():
    return _Gini()


def newton_criterion():
    return _Newton()


def second_order_criterion(reg_lambda=1.0, reg_alpha=0.0, gamma=0.0):
    return _SecondOrder(reg_lambda, reg_alpha, gamma)


# ---------------------------------------------------------------- growing


def _best_split(X, stats, features, criterion):
    """Return (gain, feature, threshold) of the best split, or None."""
    Xn = X[:, features]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    cum = np.cumsum(stats[order], axis=0)[:-1]  # (m-1, k, s): rows [0..i] go left
    total = stats.sum(axis=0)
    gain = criterion.gain(cum, total - cum, total)
    valid = xs[1:] > xs[:-1]
    gain = np.where(valid, gain, -np.inf)
    flat = gain.T.ravel()  # feature-major: ties favour lower feature, then lower threshold
    best = int(np.argmax(flat))
    g = flat[best]
    if not np.isfinite(g):
        return None
    if criterion.accept_zero_gain:
        if g < -1e-9:  # rounding noise around an exact zero-gain split
            return None
    elif g <= 0:
        return None
    k, i = divmod(best, gain.shape[0])
    lo, hi = xs[i, k], xs[i + 1, k]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    return float(g), int(features[k]), float(thr)


def grow_tree(X: np.ndarray, stats: np.ndarray, criterion, *, max_depth: Optional[int] = None,
              min_samples_split: int = 2, max_features=None,
              allowed_features: Optional[Sequence[int]] = None,
              rng: Optional[np.random.Generator] = None) -> DecisionTree:
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    if n == 0:
        raise ValueError("cannot grow a tree on zero rows")
    allowed = np.arange(d) if allowed_features is None else np.asarray(sorted(allowed_features))
    k = resolve_max_features(max_features, len(allowed))
    if k < len(allowed) and rng is None:
        raise ValueError("feature subsampling needs a random generator")

    feature, threshold, left, right, value, gain, count = [], [], [], [], [], [], []

    def new_node(idx):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(criterion.leaf_value(stats[idx].sum(axis=0)))
        gain.append(0.0)
        count.append(len(idx))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        if max_depth is not None and depth >= max_depth:
            continue
        if len(idx) < max(min_samples_split, 2) or criterion.is_pure(stats[idx]):
            continue
        feats = allowed
        if k < len(allowed):
            feats = np.sort(rng.choice(allowed, size=k, replace=False))
        found = _best_split(X[idx], stats[idx], feats, criterion)
        if found is None:
            continue
        g, f, thr = found
        mask = X[idx, f] <= thr
        li, ri = idx[mask], idx[~mask]
        feature[node], threshold[node], gain[node] = f, thr, max(g, 0.0)
        left[node] = new_node(li)
        right[node] = new_node(ri)
        stack.append((right[node], ri, depth + 1))
        stack.append((left[node], li, depth + 1))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        value=np.array(value, dtype=float),
        gain=np.array(gain, dtype=float),
        n_samples=np.array(count, dtype=np.int64),
    )


def gini_stats(y: np.ndarray, sample_weights: Optional[np.ndarray] = None) -> np.ndarray:
    y = np.asarray(y)
    w = np.ones(len(y)) if sample_weights is None else np.asarray(sample_weights, dtype=float)
    return np.column_stack([w * (y == 0), w * (y == 1)])


def fit_tree(X: np.ndarray, y: np.ndarray, sample_weights: Optional[np.ndarray] = None,
             params: Optional[dict] = None, seed: int = 0) -> DecisionTree:
    """Gini classification tree; leaves carry the weighted class-1 fraction."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("X must be a non-empty 2-D matrix")
    if len(y) != X.shape[0]:
        raise ValueError("X and y lengths differ")
    p = params or {}
    return grow_tree(
        X, gini_stats(y, sample_weights), gini_criterion(),
        max_depth=p.get("max_depth"),
        min_samples_split=p.get("min_samples_split", 2),
        max_features=p.get("max_features", "all"),
        rng=np.random.default_rng(seed),
    )
