"""Random-forest regression with impurity-decrease feature importances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: float = 0.0


class RegressionTree:
    """CART regression tree; splits minimise weighted within-child variance.

    Ties between equally good splits are broken at random (as if features
    were visited in a random order), so bootstrap replicas explore them.
    """

    def __init__(self, max_depth: int | None = None, min_samples_split: int = 2,
                 rng: np.random.Generator | None = None):
        self.max_depth = max_depth
        self.min_samples_split = min_samples_split
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def fit(self, X, y, sample_weight=None) -> "RegressionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        w = np.ones(len(y)) if sample_weight is None else np.asarray(sample_weight, float)
        self.n_features_ = X.shape[1]
        self._importance = np.zeros(self.n_features_)
        keep = w > 0
        self.root_ = self._grow(X[keep], y[keep], w[keep], 0)
        total = self._importance.sum()
        self.feature_importances_ = self._importance / total if total > 0 else self._importance
        return self

    @staticmethod
    def _impurity(y, w) -> float:
        mu = np.average(y, weights=w)
        return float(np.average((y - mu) ** 2, weights=w))

    def _grow(self, X, y, w, depth) -> _Node:
        node = _Node(value=float(np.average(y, weights=w)))
        wsum = w.sum()
        impurity = self._impurity(y, w)
        if (impurity <= 1e-12 or wsum < self.min_samples_split
                or (self.max_depth is not None and depth >= self.max_depth)):
            return node
        best, best_gain = [], 0.0
        for f in range(X.shape[1]):
            values = np.unique(X[:, f])
            for lo, hi in zip(values[:-1], values[1:]):
                thr = 0.5 * (lo + hi)
                mask = X[:, f] <= thr
                wl, wr = w[mask].sum(), w[~mask].sum()
                child = wl * self._impurity(y[mask], w[mask]) + wr * self._impurity(y[~mask], w[~mask])
                gain = wsum * impurity - child
                if gain > best_gain + 1e-12:
                    best, best_gain = [(f, thr)], gain
                elif abs(gain - best_gain) <= 1e-12 and gain > 0:
                    best.append((f, thr))
        if not best:
            return node
        f, thr = best[int(self.rng.integers(len(best)))] if len(best) > 1 else best[0]
        self._importance[f] += best_gain
        mask = X[:, f] <= thr
        node.feature, node.threshold = f, thr
        node.left = self._grow(X[mask], y[mask], w[mask], depth + 1)
        node.right = self._grow(X[~mask], y[~mask], w[~mask], depth + 1)
        return node

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(len(X))
        for i, row in enumerate(X):
            node = self.root_
            while node.left is not None:
                node = node.left if row[node.feature] <= node.threshold else node.right
            out[i] = node.value
        return out


class RandomForestRegressor:
    """Bagged regression trees; every feature is considered at every split."""

    def __init__(self, n_trees: int = 200, max_depth: int | None = None,
                 bootstrap: bool = True, seed: int = 0):
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.bootstrap = bootstrap
        self.seed = seed

    def fit(self, X, y) -> "RandomForestRegressor":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n = len(y)
        rng = np.random.default_rng(self.seed)
        self.trees_ = []
        imp = np.zeros(X.shape[1])
        for _ in range(self.n_trees):
            if self.bootstrap:
                weight = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
            else:
                weight = np.ones(n)
            tree = RegressionTree(self.max_depth, rng=np.random.default_rng(rng.integers(2**63)))
            tree.fit(X, y, weight)
            self.trees_.append(tree)
            imp += tree.feature_importances_
        total = imp.sum()
        self.feature_importances_ = imp / total if total > 0 else imp
        return self

    def predict(self, X) -> np.ndarray:
        return np.mean([t.predict(X) for t in self.trees_], axis=0)
