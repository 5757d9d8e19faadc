"""CART regression trees and bagged forests, compiled with numba.

Trees are stored flat: per node a split feature (-1 for leaves), threshold,
left/right child ids and the node mean. A forest is a stack of such arrays,
one row per tree. Splits minimize the within-node sum of squares; the
threshold is the midpoint between adjacent distinct values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit


@njit(cache=True)
def _grow(X, y, rows, max_depth, min_leaf, mtry, feat, thr, left, right, value):  # pragma: no cover - compiled
    n = rows.shape[0]
    p = X.shape[1]
    idx = rows.copy()
    features = np.arange(p)
    # stack entries: node, start, end, depth
    stack = np.empty((2 * n + 2, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    xs = np.empty(n)
    ys = np.empty(n)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        start = stack[top, 1]
        end = stack[top, 2]
        depth = stack[top, 3]
        m = end - start
        s = 0.0
        for i in range(start, end):
            s += y[idx[i]]
        value[node] = s / m
        feat[node] = -1
        if m < 2 * min_leaf or (max_depth >= 0 and depth >= max_depth):
            continue
        constant = True
        y0 = y[idx[start]]
        for i in range(start + 1, end):
            if y[idx[i]] != y0:
                constant = False
                break
        if constant:
            continue

        # partial Fisher-Yates draw of mtry candidate features
        for j in range(mtry):
            k = j + np.random.randint(p - j)
            t = features[j]
            features[j] = features[k]
            features[k] = t

        best_gain = -1.0
        best_f = -1
        best_t = 0.0
        for j in range(mtry):
            f = features[j]
            for i in range(m):
                xs[i] = X[idx[start + i], f]
            order = np.argsort(xs[:m], kind="mergesort")
            for i in range(m):
                ys[i] = y[idx[start + order[i]]]
            sl = 0.0
            for i in range(m - 1):
                sl += ys[i]
                nl = i + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                a = xs[order[i]]
                b = xs[order[i + 1]]
                if a == b:
                    continue
                sr = s - sl
                gain = sl * sl / nl + sr * sr / nr
                if gain > best_gain:
                    best_gain = gain
                    best_f = f
                    best_t = 0.5 * (a + b)
        if best_f < 0 or best_gain <= s * s / m + 1e-12 * abs(s * s / m):
            continue

        # partition idx[start:end] around the threshold
        i = start
        j = end - 1
        while i <= j:
            if X[idx[i], best_f] <= best_t:
                i += 1
            else:
                t = idx[i]
                idx[i] = idx[j]
                idx[j] = t
                j -= 1
        feat[node] = best_f
        thr[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes
        stack[top, 1] = start
        stack[top, 2] = i
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = i
        stack[top, 2] = end
        stack[top, 3] = depth + 1
        top += 1
        n_nodes += 2
    return n_nodes


@njit(cache=True)
def _grow_forest(X, y, n_trees, bootstrap, max_depth, min_leaf, mtry, seed):  # pragma: no cover - compiled
    np.random.seed(seed)
    n = X.shape[0]
    cap = 2 * n + 1
    feat = np.full((n_trees, cap), -1, dtype=np.int64)
    thr = np.zeros((n_trees, cap))
    left = np.zeros((n_trees, cap), dtype=np.int64)
    right = np.zeros((n_trees, cap), dtype=np.int64)
    value = np.zeros((n_trees, cap))
    rows = np.arange(n)
    for t in range(n_trees):
        if bootstrap:
            for i in range(n):
                rows[i] = np.random.randint(n)
        _grow(X, y, rows, max_depth, min_leaf, mtry, feat[t], thr[t], left[t], right[t], value[t])
    return feat, thr, left, right, value


@njit(cache=True)
def _predict_forest(Q, feat, thr, left, right, value):  # pragma: no cover - compiled
    n_trees = feat.shape[0]
    out = np.zeros(Q.shape[0])
    for q in range(Q.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            node = 0
            while feat[t, node] >= 0:
                if Q[q, feat[t, node]] <= thr[t, node]:
                    node = left[t, node]
                else:
                    node = right[t, node]
            acc += value[t, node]
        out[q] = acc / n_trees
    return out


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_trees(self) -> int:
        return self.feat.shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _predict_forest(np.ascontiguousarray(X, dtype=float), self.feat, self.thr, self.left, self.right, self.value)


def grow_ensemble(
    X: np.ndarray,
    y: np.ndarray,
    n_trees: int = 1,
    bootstrap: bool = False,
    max_depth: int | None = None,
    min_leaf: int = 1,
    feature_subsample: float = 1.0,
    seed: int = 0,
) -> TreeEnsemble:
    """Grow ``n_trees`` trees; each split considers ``max(1, round(p * feature_subsample))`` random features."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    mtry = max(1, int(round(X.shape[1] * feature_subsample)))
    arrays = _grow_forest(
        X, y, int(n_trees), bool(bootstrap), -1 if max_depth is None else int(max_depth),
        int(min_leaf), min(mtry, X.shape[1]), int(seed) % (2**32),
    )
    return TreeEnsemble(*arrays)
