"""Random-forest regression surrogate (SMAC style) on encoded configurations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class _Tree:
    feature: np.ndarray
    threshold: np.ndarray
    is_cat: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        active = self.left[node] >= 0
        while active.any():
            idx = np.nonzero(active)[0]
            n = node[idx]
            x = X[idx, self.feature[n]]
            thr = self.threshold[n]
            go_left = np.where(self.is_cat[n], x == thr, x <= thr)
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active[idx] = self.left[node[idx]] >= 0
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


def _best_split(x: np.ndarray, y: np.ndarray, categorical: bool):
    """Return (sse, threshold) of the best binary split on one feature, or None."""
    n = len(y)
    if categorical:
        vals = np.unique(x)
        if len(vals) < 2:
            return None
        total = y.sum()
        total_sq = (y * y).sum()
        best = None
        for v in vals:
            mask = x == v
            nl = int(mask.sum())
            sl = y[mask].sum()
            sql = (y[mask] ** 2).sum()
            nr = n - nl
            sr = total - sl
            sqr = total_sq - sql
            sse = (sql - sl * sl / nl) + (sqr - sr * sr / nr)
            if best is None or sse < best[0] - 1e-12:
                best = (sse, float(v))
        return best
    order = np.argsort(x, kind="stable")
    xs = x[order]
    ys = y[order]
    valid = np.nonzero(xs[1:] > xs[:-1])[0]
    if len(valid) == 0:
        return None
    cs = np.cumsum(ys)
    cs2 = np.cumsum(ys * ys)
    nl = valid + 1.0
    nr = n - nl
    sl = cs[valid]
    sr = cs[-1] - sl
    sse = (cs2[valid] - sl * sl / nl) + ((cs2[-1] - cs2[valid]) - sr * sr / nr)
    k = int(np.argmin(sse))
    i = valid[k]
    return float(sse[k]), float((xs[i] + xs[i + 1]) / 2.0)


def _grow(X, y, cat_mask, rng, max_features, min_samples_split, max_depth):
    feature, threshold, is_cat, left, right, value = [], [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(0.0)
        is_cat.append(False)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(value) - 1

    root = new_node()
    stack = [(root, np.arange(len(y)), 0)]
    d = X.shape[1]
    while stack:
        node, idx, depth = stack.pop()
        ys = y[idx]
        value[node] = float(ys.mean())
        if len(idx) < min_samples_split or depth >= max_depth or np.ptp(ys) == 0.0:
            continue
        best = None
        tried = 0
        for f in rng.permutation(d):
            if tried >= max_features and best is not None:
                break
            tried += 1
            split = _best_split(X[idx, f], ys, bool(cat_mask[f]))
            if split is not None and (best is None or split[0] < best[0] - 1e-12):
                best = (split[0], split[1], int(f))
        if best is None:
            continue
        _, thr, f = best
        col = X[idx, f]
        mask = (col == thr) if cat_mask[f] else (col <= thr)
        l, r = new_node(), new_node()
        feature[node], threshold[node], is_cat[node] = f, thr, bool(cat_mask[f])
        left[node], right[node] = l, r
        stack.append((r, idx[~mask], depth + 1))
        stack.append((l, idx[mask], depth + 1))
    return _Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(is_cat, dtype=bool),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.asarray(value, dtype=float),
    )


@dataclass
class RandomForest:
    """Bagged regression trees; the spread across trees is the uncertainty."""

    n_trees: int = 10
    min_samples_split: int = 3
    max_features: int | None = None
    bootstrap: bool = True
    max_depth: int = 64
    seed: int = 0
    trees: list[_Tree] = field(default_factory=list, repr=False)
    n_features: int = 0

    def fit(self, X: np.ndarray, y: np.ndarray, cat_mask: np.ndarray | None = None) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or len(X) != len(y) or len(y) == 0:
            raise ValueError("need a non-empty 2-D X aligned with y")
        n, d = X.shape
        cat_mask = np.zeros(d, dtype=bool) if cat_mask is None else np.asarray(cat_mask, dtype=bool)
        k = self.max_features or max(1, math.ceil(math.sqrt(d)))
        rng = np.random.default_rng(self.seed)
        self.trees = []
        for _ in range(self.n_trees):
            rows = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.trees.append(_grow(X[rows], y[rows], cat_mask, rng, k, self.min_samples_split, self.max_depth))
        self.n_features = d
        return self

    def predict(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        preds = np.stack([t.predict(X) for t in self.trees])
        mean = preds.mean(axis=0)
        var = preds.var(axis=0) if len(self.trees) > 1 else np.zeros(len(X))
        return mean, var
