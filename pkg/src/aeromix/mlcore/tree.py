"""Least-squares regression trees with exhaustive midpoint split search.

Split candidates are the midpoints between adjacent distinct sorted values
of each feature; rows with ``x <= threshold`` go left.  Among equally good
splits the lowest feature index wins, then the lowest threshold.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Tree stored as preorder node arrays; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def depth(self):
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max())

    def apply(self, X):
        """Leaf index reached by every row of ``X``."""
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.feature[node] >= 0
        while active.any():
            r, n = rows[active], node[active]
            go_left = X[r, self.feature[n]] <= self.threshold[n]
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.feature[node] >= 0
        return node

    def predict(self, X):
        return self.value[self.apply(X)]


def best_split(X, target, rows, min_samples_leaf=1, features=None):
    """Best ``(feature, threshold)`` for ``target`` over ``rows``, or ``None``.

    Minimizes the summed squared error of the two children.  Returns
    ``None`` when no admissible split reduces the error.
    """
    m = len(rows)
    if m < max(2, 2 * min_samples_leaf):
        return None
    if features is None:
        features = np.arange(X.shape[1])
    xs = X[np.ix_(rows, features)]
    t = target[rows]
    t = t - t.mean()
    order = np.argsort(xs, axis=0, kind="stable")
    xs = np.take_along_axis(xs, order, axis=0)
    csum = np.cumsum(t[order], axis=0)
    n_left = np.arange(1, m, dtype=np.float64)[:, None]
    s_left = csum[:-1]
    s_right = csum[-1] - s_left
    gain = s_left**2 / n_left + s_right**2 / (m - n_left)
    admissible = (xs[:-1] < xs[1:]) & (n_left >= min_samples_leaf) & (m - n_left >= min_samples_leaf)
    gain = np.where(admissible, gain, -np.inf).T
    best = int(np.argmax(gain))
    j, pos = divmod(best, m - 1)
    if not gain[j, pos] > 0:
        return None
    lo, hi = xs[pos, j], xs[pos + 1, j]
    threshold = (lo + hi) / 2
    if not lo <= threshold < hi:
        threshold = lo
    return int(features[j]), float(threshold)


def build_tree(X, target, rows, max_depth=None, min_samples_leaf=1, max_features=None, rng=None):
    """Grow a tree on ``target[rows]``.

    ``rows`` must be sorted; duplicates (bootstrap draws) are allowed.
    ``max_features`` draws that many candidate features per node from ``rng``.
    """
    n_features = X.shape[1]
    feature, threshold, left, right, value, n_samples = [], [], [], [], [], []
    stack = [(np.asarray(rows), 0, -1, False)]
    while stack:
        node_rows, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(np.mean(target[node_rows])))
        n_samples.append(len(node_rows))
        if max_depth is not None and depth >= max_depth:
            continue
        candidates = None
        if max_features is not None and max_features < n_features:
            candidates = np.sort(rng.choice(n_features, size=max_features, replace=False))
        split = best_split(X, target, node_rows, min_samples_leaf, candidates)
        if split is None:
            continue
        f, thr = split
        go_left = X[node_rows, f] <= thr
        feature[node] = f
        threshold[node] = thr
        stack.append((node_rows[~go_left], depth + 1, node, False))
        stack.append((node_rows[go_left], depth + 1, node, True))
    return RegressionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
        np.array(n_samples, dtype=np.int64),
    )
