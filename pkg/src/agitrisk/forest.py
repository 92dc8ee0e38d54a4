"""Random forest of Gini decision trees over flattened samples."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAF = -1


@dataclass
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = None  # None -> floor(sqrt(d))
    min_samples_split: int = 2
    max_depth: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("a forest needs at least one tree")
        if self.max_features is not None and self.max_features < 1:
            raise ValueError("max_features must be >= 1")

    def features_for(self, n_features: int) -> int:
        k = self.max_features if self.max_features is not None else int(np.floor(np.sqrt(n_features)))
        if not 1 <= k <= n_features:
            raise ValueError(f"max_features must lie in [1, {n_features}], got {k}")
        return k


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise ValueError("gini impurity of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


@dataclass
class Tree:
    """Array-backed binary tree; ``feature[i] == LEAF`` marks leaves."""

    feature: list = field(default_factory=list)
    threshold: list = field(default_factory=list)
    left: list = field(default_factory=list)
    right: list = field(default_factory=list)
    counts: list = field(default_factory=list)

    def add(self, counts) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.counts.append(np.asarray(counts, dtype=np.int64))
        return len(self.feature) - 1

    def freeze(self):
        self.feature = np.asarray(self.feature, dtype=np.int64)
        self.threshold = np.asarray(self.threshold, dtype=np.float64)
        self.left = np.asarray(self.left, dtype=np.int64)
        self.right = np.asarray(self.right, dtype=np.int64)
        self.counts = np.vstack(self.counts)
        return self

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of ``X``."""
        X = np.atleast_2d(X)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.nonzero(active)[0]
            n = node[idx]
            go_left = X[idx, self.feature[n]] <= self.threshold[n]
            node[idx] = np.where(go_left, self.left[n], self.right[n])
            active[idx] = self.feature[node[idx]] != LEAF
        return node

    def predict(self, X) -> np.ndarray:
        leaf_counts = self.counts[self.apply(X)]
        # ties between class counts go to class 0
        return (leaf_counts[:, 1] > leaf_counts[:, 0]).astype(int)


def _best_split(Xn: np.ndarray, yn: np.ndarray, features: np.ndarray):
    """Lowest weighted Gini split over ``features``; ``None`` if none is valid.

    Thresholds are midpoints between consecutive distinct values.
    """
    n = len(yn)
    vals = Xn[:, features]
    order = np.argsort(vals, axis=0, kind="stable")
    sv = np.take_along_axis(vals, order, axis=0)
    sy = yn[order]
    pos_left = np.cumsum(sy, axis=0)[:-1]  # split after row k-1, k = 1..n-1
    n_left = np.arange(1, n)[:, None]
    n_right = n - n_left
    pos_right = sy.sum(axis=0) - pos_left
    p_l = pos_left / n_left
    p_r = pos_right / n_right
    impurity = (n_left * 2 * p_l * (1 - p_l) + n_right * 2 * p_r * (1 - p_r)) / n
    valid = sv[1:] > sv[:-1]
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    # column-major argmin: first feature in draw order, then lowest threshold
    flat = np.argmin(impurity.T)
    j, k = divmod(int(flat), n - 1)
    return int(features[j]), 0.5 * (sv[k, j] + sv[k + 1, j]), float(impurity[k, j])


def fit_tree(X: np.ndarray, y: np.ndarray, config: ForestConfig, rng: np.random.Generator) -> Tree:
    n_features = X.shape[1]
    k = config.features_for(n_features)
    tree = Tree()
    root = tree.add(np.bincount(y, minlength=2))
    stack = [(root, np.arange(len(y)), 0)]
    while stack:
        node, idx, depth = stack.pop()
        yn = y[idx]
        counts = tree.counts[node]
        if counts.min() == 0 or len(idx) < config.min_samples_split:
            continue
        if config.max_depth is not None and depth >= config.max_depth:
            continue
        Xn = X[idx]
        perm = rng.permutation(n_features)
        split = None
        # keep drawing features until some split is possible
        for start in range(0, n_features, k):
            split = _best_split(Xn, yn, perm[start:start + k])
            if split is not None:
                break
        if split is None:
            continue
        feat, thr, _ = split
        go_left = Xn[:, feat] <= thr
        li, ri = idx[go_left], idx[~go_left]
        tree.feature[node] = feat
        tree.threshold[node] = thr
        tree.left[node] = tree.add(np.bincount(y[li], minlength=2))
        tree.right[node] = tree.add(np.bincount(y[ri], minlength=2))
        stack.append((tree.right[node], ri, depth + 1))
        stack.append((tree.left[node], li, depth + 1))
    return tree.freeze()


@dataclass
class Forest:
    trees: list[Tree]
    config: ForestConfig
    bootstrap_indices: list[np.ndarray]


def fit_forest(X, y, config: ForestConfig) -> Forest:
    """Bootstrap-aggregated trees; tree ``i`` draws from seed ``(config.seed, i)``."""
    X = np.asarray(X, dtype=np.float64)
    X = X.reshape(len(X), -1)
    y = np.asarray(y, dtype=int)
    if len(np.unique(y)) < 2:
        raise ValueError("random forest needs both classes in the training data")
    trees, boots = [], []
    for i in range(config.n_trees):
        rng = np.random.default_rng([config.seed, i])
        boot = rng.integers(0, len(y), size=len(y))
        trees.append(fit_tree(X[boot], y[boot], config, rng))
        boots.append(boot)
    return Forest(trees, config, boots)


def predict_forest(forest: Forest, X) -> tuple[np.ndarray, np.ndarray]:
    """Majority vote (ties -> no agitation) and share of trees voting agitation."""
    X = np.asarray(X, dtype=np.float64)
    X = X.reshape(len(X), -1) if X.ndim > 1 else X[None]
    votes = np.zeros(len(X))
    for tree in forest.trees:
        votes += tree.predict(X)
    n = len(forest.trees)
    return (2 * votes > n).astype(int), votes / n
