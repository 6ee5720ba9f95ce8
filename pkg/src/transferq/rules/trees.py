"""Regression trees grown to pure leaves, and bootstrap forests of them."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import DomainSample, pool
from .base import as_features, encode, fmt_reals, parse_reals

LEAF = -1


@dataclass(frozen=True, eq=False)
class Tree:
    """Array-encoded binary tree; ``feature == LEAF`` marks a leaf.

    Rows go left when ``x[feature] <= threshold``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = self.feature[node] != LEAF
        while active.any():
            idx = rows[active]
            cur = node[idx]
            go_left = X[idx, self.feature[cur]] <= self.threshold[cur]
            node[idx] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] != LEAF
        return self.value[node]

    def to_field(self) -> str:
        return ";".join(
            [
                fmt_reals(self.feature),
                fmt_reals(self.threshold),
                fmt_reals(self.left),
                fmt_reals(self.right),
                fmt_reals(self.value),
            ]
        )

    @classmethod
    def from_field(cls, text: str) -> "Tree":
        f, t, l, r, v = (parse_reals(part) for part in text.split(";"))
        return cls(f.astype(np.int64), t, l.astype(np.int64), r.astype(np.int64), v)


def best_split(X: np.ndarray, y: np.ndarray, min_leaf: int = 1):
    """Exhaustive SSE-minimizing split over all features and midpoints.

    Returns ``(feature, threshold, sse)`` or ``None`` when no split satisfies
    ``min_leaf``.  Ties go to the lower feature index, then the smaller threshold.
    """
    n = len(y)
    best = None
    for j in range(X.shape[1]):
        order = np.argsort(X[:, j], kind="stable")
        xs, ys = X[order, j], y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        k = np.arange(1, n)  # left sizes
        valid = (xs[1:] > xs[:-1]) & (k >= min_leaf) & (n - k >= min_leaf)
        if not valid.any():
            continue
        left_sse = csq[:-1] - csum[:-1] ** 2 / k
        right_sum = csum[-1] - csum[:-1]
        right_sse = (csq[-1] - csq[:-1]) - right_sum**2 / (n - k)
        sse = np.where(valid, left_sse + right_sse, np.inf)
        i = int(np.argmin(sse))
        if best is None or sse[i] < best[2]:
            lo, hi = xs[i], xs[i + 1]
            mid = lo + (hi - lo) / 2.0
            if not lo <= mid < hi:
                mid = lo
            best = (j, float(mid), float(sse[i]))
    return best


def grow_tree(X, y, max_depth: int | None = None, min_leaf: int = 1) -> Tree:
    """Grow a regression tree until leaves are pure or unsplittable."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(float(np.mean(y[rows])))
        return len(feature) - 1

    root = new_node(np.arange(len(y)))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, rows, depth = stack.pop()
        ys = y[rows]
        if ys.max() == ys.min() or (max_depth is not None and depth >= max_depth):
            continue
        split = best_split(X[rows], ys, min_leaf)
        if split is None:
            continue
        j, thr, _ = split
        go_left = X[rows, j] <= thr
        lrows, rrows = rows[go_left], rows[~go_left]
        feature[node], threshold[node] = j, thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=float),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=float),
    )


@dataclass(frozen=True)
class ForestConfig:
    """Random-forest settings.

    Tree ``t`` draws its bootstrap from ``SeedSequence([seed, t])``, so each
    tree is reproducible on its own and trees can be grown in any order.
    """

    n_trees: int = 100
    bootstrap: bool = True
    max_depth: int | None = None
    min_leaf: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")


@dataclass(frozen=True, eq=False)
class ForestRule:
    trees: tuple[Tree, ...]
    kind = "forest"

    def predict(self, X) -> np.ndarray:
        return forest_predict(self.trees, as_features(X))

    def to_text(self) -> str:
        fields = {"n_trees": str(len(self.trees))}
        fields.update({f"t{i}": tree.to_field() for i, tree in enumerate(self.trees)})
        return encode(self.kind, fields)

    @classmethod
    def from_fields(cls, fields: dict[str, str]) -> "ForestRule":
        n = int(fields["n_trees"])
        return cls(tuple(Tree.from_field(fields[f"t{i}"]) for i in range(n)))


def _seed_words(seed: int) -> int:
    return int(seed) & 0xFFFFFFFFFFFFFFFF


def grow_forest(X, y, cfg: ForestConfig = ForestConfig()) -> tuple[Tree, ...]:
    """Grow ``cfg.n_trees`` trees on bootstrap resamples (or the full data) of ``(X, y)``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n == 0:
        raise ValueError("no training observations")
    trees = []
    for t in range(cfg.n_trees):
        if cfg.bootstrap:
            rng = np.random.default_rng(np.random.SeedSequence([_seed_words(cfg.seed), t]))
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n)
        trees.append(grow_tree(X[rows], y[rows], cfg.max_depth, cfg.min_leaf))
    return tuple(trees)


def forest_predict(trees: tuple[Tree, ...], X: np.ndarray) -> np.ndarray:
    total = np.zeros(X.shape[0])
    for tree in trees:
        total += tree.predict(X)
    return total / len(trees)


def fit_random_forest(train: list[DomainSample], cfg: ForestConfig = ForestConfig()) -> ForestRule:
    """Average of ``cfg.n_trees`` pure-leaf trees on bootstrap resamples of the pooled data."""
    data = pool(list(train))
    return ForestRule(grow_forest(data.X, data.y, cfg))
