"""Random forest probability estimates for a binary target.

Trees are grown on bootstrap samples with Gini splits over ``mtry``
randomly drawn features per node and a minimum leaf size. A leaf predicts
the fraction of ones among the bootstrap rows that reach it and the forest
predicts the mean over trees. Out-of-bag predictions come for free and are
used to weight the forest inside the forest/logit blend.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


@njit(cache=True)
def _grow(Xb, yb, srt, mtry, min_leaf, feat, thr, left, right, value):
    # Xb, yb: bootstrap sample; srt[f] holds sample positions sorted by
    # feature f and is kept sorted within every node range by stable
    # partitioning, so no node ever re-sorts.
    n, d = Xb.shape
    feats = np.arange(d)
    goes_left = np.zeros(n, dtype=np.bool_)
    buf = np.empty(n, dtype=np.int64)
    stack = np.empty((feat.shape[0], 3), dtype=np.int64)
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n
    top = 1
    n_nodes = 1
    while top > 0:
        top -= 1
        node = stack[top, 0]
        s = stack[top, 1]
        e = stack[top, 2]
        m = e - s
        total = 0.0
        for i in range(s, e):
            total += yb[srt[0, i]]
        value[node] = total / m
        feat[node] = -1
        if m < 2 * min_leaf or total == 0.0 or total == m:
            continue
        # partial Fisher-Yates draw of mtry features
        for a in range(mtry):
            b = a + np.random.randint(0, d - a)
            tmp = feats[a]
            feats[a] = feats[b]
            feats[b] = tmp
        best = total * total / m + 1e-12
        best_f = -1
        best_i = 0
        best_t = 0.0
        for a in range(mtry):
            f = feats[a]
            sl = 0.0
            for i in range(s, s + min_leaf - 1):
                sl += yb[srt[f, i]]
            for i in range(min_leaf, m - min_leaf + 1):
                sl += yb[srt[f, s + i - 1]]
                lo = Xb[srt[f, s + i - 1], f]
                hi = Xb[srt[f, s + i], f]
                if lo >= hi:
                    continue
                sr = total - sl
                score = sl * sl / i + sr * sr / (m - i)
                if score > best:
                    best = score
                    best_f = f
                    best_i = i
                    t = 0.5 * (lo + hi)
                    if t >= hi:
                        t = lo
                    best_t = t
        if best_f < 0:
            continue
        mid = s + best_i
        for i in range(s, e):
            goes_left[srt[best_f, i]] = i < mid
        for g in range(d):
            if g == best_f:
                continue
            a = s
            b = 0
            for i in range(s, e):
                pos = srt[g, i]
                if goes_left[pos]:
                    srt[g, a] = pos
                    a += 1
                else:
                    buf[b] = pos
                    b += 1
            for i in range(b):
                srt[g, a + i] = buf[i]
        feat[node] = best_f
        thr[node] = best_t
        left[node] = n_nodes
        right[node] = n_nodes + 1
        stack[top, 0] = n_nodes + 1
        stack[top, 1] = mid
        stack[top, 2] = e
        stack[top + 1, 0] = n_nodes
        stack[top + 1, 1] = s
        stack[top + 1, 2] = mid
        top += 2
        n_nodes += 2
    return n_nodes


@njit(cache=True)
def _predict_tree(X, feat, thr, left, right, value, out):
    for r in range(X.shape[0]):
        node = 0
        while feat[node] >= 0:
            if X[r, feat[node]] <= thr[node]:
                node = left[node]
            else:
                node = right[node]
        out[r] = value[node]


@njit(cache=True)
def _fit_forest(X, y, seeds, mtry, min_leaf, max_nodes):
    n, d = X.shape
    n_trees = seeds.shape[0]
    feat = np.full((n_trees, max_nodes), -1, dtype=np.int64)
    thr = np.zeros((n_trees, max_nodes))
    left = np.zeros((n_trees, max_nodes), dtype=np.int64)
    right = np.zeros((n_trees, max_nodes), dtype=np.int64)
    value = np.zeros((n_trees, max_nodes))
    oob_sum = np.zeros(n)
    oob_cnt = np.zeros(n, dtype=np.int64)
    inbag = np.zeros(n, dtype=np.bool_)
    pred = np.empty(n)
    for t in range(n_trees):
        np.random.seed(seeds[t])
        rows = np.empty(n, dtype=np.int64)
        inbag[:] = False
        for i in range(n):
            r = np.random.randint(0, n)
            rows[i] = r
            inbag[r] = True
        Xb = np.empty((n, d))
        yb = np.empty(n)
        for i in range(n):
            Xb[i] = X[rows[i]]
            yb[i] = y[rows[i]]
        srt = np.empty((d, n), dtype=np.int64)
        for f in range(d):
            srt[f] = np.argsort(Xb[:, f], kind="mergesort")
        _grow(Xb, yb, srt, mtry, min_leaf, feat[t], thr[t], left[t], right[t], value[t])
        _predict_tree(X, feat[t], thr[t], left[t], right[t], value[t], pred)
        for i in range(n):
            if not inbag[i]:
                oob_sum[i] += pred[i]
                oob_cnt[i] += 1
    return feat, thr, left, right, value, oob_sum, oob_cnt


@njit(cache=True)
def _predict_forest(X, feat, thr, left, right, value):
    n_trees = feat.shape[0]
    out = np.zeros(X.shape[0])
    pred = np.empty(X.shape[0])
    for t in range(n_trees):
        _predict_tree(X, feat[t], thr[t], left[t], right[t], value[t], pred)
        out += pred
    return out / n_trees


@dataclass(frozen=True)
class Forest:
    feat: np.ndarray
    thr: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    oob: np.ndarray

    @property
    def n_trees(self) -> int:
        return self.feat.shape[0]

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        return _predict_forest(X, self.feat, self.thr, self.left, self.right, self.value)

    def predict_tree(self, X, t: int) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        out = np.empty(X.shape[0])
        _predict_tree(X, self.feat[t], self.thr[t], self.left[t], self.right[t], self.value[t], out)
        return out


def fit_forest(X, y, *, n_trees: int = 200, min_leaf: int = 5, mtry: int | None = None,
               seed: int = 0) -> Forest:
    """Grow a probability forest on ``X`` (n, d) and 0/1 targets ``y``.

    ``mtry`` defaults to ceil(sqrt(d)). Per-tree seeds are drawn from
    ``seed``, so the result is a deterministic function of the arguments.
    Rows that are never out of bag get the full-forest prediction as their
    OOB value.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    n, d = X.shape
    if d == 0:
        raise ValueError("forest needs at least one feature")
    if mtry is None:
        mtry = math.ceil(math.sqrt(d))
    mtry = min(max(int(mtry), 1), d)
    seeds = np.random.default_rng(seed).integers(0, 2**31 - 1, size=n_trees)
    max_nodes = 2 * (n // min_leaf) + 3
    feat, thr, left, right, value, oob_sum, oob_cnt = _fit_forest(
        X, y, seeds, mtry, int(min_leaf), max_nodes
    )
    forest = Forest(feat, thr, left, right, value, np.empty(0))
    oob = np.where(oob_cnt > 0, oob_sum / np.maximum(oob_cnt, 1), np.nan)
    missing = np.isnan(oob)
    if missing.any():
        oob[missing] = forest.predict(X[missing])
    return Forest(feat, thr, left, right, value, oob)
