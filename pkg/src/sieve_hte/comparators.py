"""Random-forest T-learner and X-learner baselines.

The forest is a small bagged CART implementation: bootstrap rows per tree,
``round(sqrt(p))`` candidate features per node, exhaustive split search over
sorted values minimising the children's squared error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import InputError
from .nuisance import predict_propensity


@dataclass(frozen=True)
class ForestOptions:
    n_trees: int = 200
    min_leaf: int = 5
    max_depth: int = 12
    max_features: int | None = None
    seed: int = 0


@numba.njit(cache=True)
def _grow(x, y, rows, min_leaf, max_depth, mtry, seed):
    np.random.seed(seed)
    n_rows = rows.size
    p = x.shape[1]
    cap = 2 * n_rows + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)
    idx = rows.copy()
    # stack of (node id, segment start, segment end, depth)
    stack = np.zeros((cap, 4), dtype=np.int64)
    top = 0
    stack[0, 0] = 0
    stack[0, 1] = 0
    stack[0, 2] = n_rows
    stack[0, 3] = 0
    top = 1
    n_nodes = 1
    feats = np.arange(p)
    while top > 0:
        top -= 1
        node = stack[top, 0]
        lo = stack[top, 1]
        hi = stack[top, 2]
        depth = stack[top, 3]
        m = hi - lo
        total = 0.0
        ymin = np.inf
        ymax = -np.inf
        for i in range(lo, hi):
            v = y[idx[i]]
            total += v
            ymin = min(ymin, v)
            ymax = max(ymax, v)
        value[node] = total / m
        if m < 2 * min_leaf or depth >= max_depth or ymax - ymin <= 1e-12 * max(1.0, abs(ymax)):
            continue
        # partial Fisher-Yates for the candidate features
        for j in range(mtry):
            r = j + np.random.randint(p - j)
            tmp = feats[j]
            feats[j] = feats[r]
            feats[r] = tmp
        best_gain = -np.inf
        best_feat = -1
        best_thr = 0.0
        seg = idx[lo:hi]
        for jj in range(mtry):
            f = feats[jj]
            xs = x[seg, f]
            order = np.argsort(xs, kind="mergesort")
            xs_sorted = xs[order]
            ys_sorted = y[seg[order]]
            csum = 0.0
            for i in range(m - 1):
                csum += ys_sorted[i]
                nl = i + 1
                nr = m - nl
                if nl < min_leaf or nr < min_leaf:
                    continue
                if xs_sorted[i + 1] <= xs_sorted[i]:
                    continue
                gain = csum * csum / nl + (total - csum) * (total - csum) / nr
                if gain > best_gain:
                    best_gain = gain
                    best_feat = f
                    best_thr = 0.5 * (xs_sorted[i] + xs_sorted[i + 1])
        if best_feat < 0:
            continue
        # in-place partition of the segment
        i = lo
        j = hi - 1
        while i <= j:
            if x[idx[i], best_feat] <= best_thr:
                i += 1
            else:
                tmp = idx[i]
                idx[i] = idx[j]
                idx[j] = tmp
                j -= 1
        feature[node] = best_feat
        threshold[node] = best_thr
        lnode = n_nodes
        rnode = n_nodes + 1
        n_nodes += 2
        left[node] = lnode
        right[node] = rnode
        stack[top, 0] = lnode
        stack[top, 1] = lo
        stack[top, 2] = i
        stack[top, 3] = depth + 1
        top += 1
        stack[top, 0] = rnode
        stack[top, 1] = i
        stack[top, 2] = hi
        stack[top, 3] = depth + 1
        top += 1
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        value[:n_nodes].copy(),
    )


@numba.njit(cache=True)
def _predict_tree(x, feature, threshold, left, right, value):
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        node = 0
        while feature[node] >= 0:
            if x[i, feature[node]] <= threshold[node]:
                node = left[node]
            else:
                node = right[node]
        out[i] = value[node]
    return out


@dataclass(frozen=True)
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, x):
        return _predict_tree(
            x, self.feature, self.threshold, self.left, self.right, self.value
        )

    @property
    def n_leaves(self):
        return int(np.count_nonzero(self.feature < 0))


@dataclass(frozen=True)
class RegressionForest:
    trees: tuple
    n_trees: int
    min_leaf: int
    max_depth: int
    seed: int

    def predict(self, x):
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
        acc = np.zeros(x.shape[0])
        for tree in self.trees:
            acc += tree.predict(x)
        return acc / len(self.trees)


def fit_regression_forest(x, y, opts=ForestOptions(), bootstrap_indices=None):
    """Bag ``opts.n_trees`` CART trees on bootstrap samples of ``(x, y)``.

    ``bootstrap_indices`` (``n_trees x n`` integer array) overrides the
    internally drawn bootstrap samples.
    """
    x = np.ascontiguousarray(np.asarray(x, dtype=float))
    y = np.ascontiguousarray(np.asarray(y, dtype=float).reshape(-1))
    if x.ndim != 2 or x.shape[0] != y.size:
        raise InputError(f"x of shape {x.shape} does not match {y.size} responses")
    n, p = x.shape
    if n < 2 * opts.min_leaf:
        raise InputError(f"need at least {2 * opts.min_leaf} rows, got {n}")
    mtry = opts.max_features or max(1, round(math.sqrt(p)))
    mtry = min(mtry, p)
    rng = np.random.default_rng(opts.seed)
    if bootstrap_indices is None:
        bootstrap_indices = rng.integers(0, n, size=(opts.n_trees, n))
    tree_seeds = rng.integers(0, 2**31 - 1, size=opts.n_trees)
    trees = []
    for t in range(opts.n_trees):
        rows = np.ascontiguousarray(bootstrap_indices[t], dtype=np.int64)
        arrays = _grow(x, y, rows, opts.min_leaf, opts.max_depth, mtry, int(tree_seeds[t]))
        trees.append(Tree(*arrays))
    return RegressionForest(tuple(trees), opts.n_trees, opts.min_leaf, opts.max_depth, opts.seed)


def _arm_rows(frame, min_leaf):
    treated = frame.d == 1
    for arm, mask in ((1, treated), (0, ~treated)):
        if mask.sum() < 2 * min_leaf:
            raise InputError(
                f"arm {arm} has {int(mask.sum())} rows; forests need {2 * min_leaf}"
            )
    return treated


def _sub(opts, offset):
    return ForestOptions(opts.n_trees, opts.min_leaf, opts.max_depth, opts.max_features,
                         opts.seed * 7919 + offset)


def t_learner_cate(frame, opts=ForestOptions()):
    """tau(x) = f1(x) - f0(x) with separate forests per arm."""
    treated = _arm_rows(frame, opts.min_leaf)
    f1 = fit_regression_forest(frame.x[treated], frame.y[treated], _sub(opts, 1))
    f0 = fit_regression_forest(frame.x[~treated], frame.y[~treated], _sub(opts, 2))

    def predict(x):
        return f1.predict(x) - f0.predict(x)

    return predict


def x_learner_cate(frame, pfit, opts=ForestOptions(), clip=None):
    """X-learner: cross-arm imputed effects, second-stage forests, propensity weights.

    tau(x) = pi(x) tau0(x) + (1 - pi(x)) tau1(x).
    """
    treated = _arm_rows(frame, opts.min_leaf)
    x1, y1 = frame.x[treated], frame.y[treated]
    x0, y0 = frame.x[~treated], frame.y[~treated]
    mu1 = fit_regression_forest(x1, y1, _sub(opts, 1))
    mu0 = fit_regression_forest(x0, y0, _sub(opts, 2))
    imputed1 = y1 - mu0.predict(x1)
    imputed0 = mu1.predict(x0) - y0
    tau1 = fit_regression_forest(x1, imputed1, _sub(opts, 3))
    tau0 = fit_regression_forest(x0, imputed0, _sub(opts, 4))

    def predict(x):
        prob = np.atleast_1d(predict_propensity(pfit, np.atleast_2d(x), clip=clip))
        return x_learner_combine(prob, tau0.predict(x), tau1.predict(x))

    return predict


def x_learner_combine(prob, tau0, tau1):
    return prob * tau0 + (1.0 - prob) * tau1
