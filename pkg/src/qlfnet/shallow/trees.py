"""CART trees grown with exhaustive midpoint threshold search.

Trees are stored as flat node arrays so prediction is a vectorized walk.
Classification trees split on Gini impurity and keep class proportions in
their leaves; regression trees split on squared error and keep the mean
(callers may overwrite leaf values afterwards, as boosting does).
"""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

_TABLES: OrderedDict = OrderedDict()  # rank tables of recent inputs, by content


@dataclass
class Tree:
    feature: np.ndarray    # -1 marks a leaf
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray      # (n_nodes, k) for classifiers, (n_nodes,) for regressors
    depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        for _ in range(self.depth):
            feat = self.feature[node]
            inner = feat >= 0
            if not inner.any():
                break
            go_left = X[rows, np.where(inner, feat, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)
        return node

    def predict_value(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_index(X)]


def _split_scores(stats: np.ndarray, total: np.ndarray, n: int) -> np.ndarray:
    """Split gain proxy for every prefix of the sorted rows.

    ``stats`` holds cumulative per-target sums over the sorted order, shape
    (n, m, t). The score is sum(S_left^2)/n_left + sum(S_right^2)/n_right,
    which Gini (one-hot targets) and squared error (residuals) both maximize.
    """
    n_left = np.arange(1, n, dtype=np.float64)[:, None]
    left = stats[:-1]
    right = total - left
    return (left ** 2).sum(axis=2) / n_left + (right ** 2).sum(axis=2) / (n - n_left)


def best_split(X: np.ndarray, targets: np.ndarray, features: np.ndarray, rows=None):
    """Best (feature, threshold, score) among ``features`` or None.

    Only ``rows`` of ``X`` take part (all rows by default); ``targets`` is
    aligned with those rows. Ties go to the earlier feature in ``features``
    and then to the smaller threshold. A threshold is the midpoint of two
    consecutive distinct values.
    """
    cols = X[:, features] if rows is None else X[np.ix_(rows, features)]
    n = len(cols)
    if n < 2:
        return None
    order = np.argsort(cols, axis=0, kind="stable")
    vals = np.take_along_axis(cols, order, axis=0)
    stats = np.cumsum(targets[order], axis=0)
    scores = _split_scores(stats, stats[-1], n)
    valid = vals[:-1] < vals[1:]
    if not valid.any():
        return None
    scores = np.where(valid, scores, -np.inf).T  # feature-major for the tie order
    f, j = np.unravel_index(int(np.argmax(scores)), scores.shape)
    lo, hi = vals[j, f], vals[j + 1, f]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:  # adjacent floats
        thr = lo
    return int(features[f]), float(thr), float(scores[f, j])


def rank_table(X: np.ndarray):
    """Dense per-feature ranks of ``X`` and the sorted distinct values.

    Returns (ranks, values) with ``values[ranks[i, f], f] == X[i, f]``;
    splitting on ranks is equivalent to splitting on values.
    """
    key = (X.shape, hashlib.blake2b(np.ascontiguousarray(X).tobytes(), digest_size=16).digest())
    if key in _TABLES:
        _TABLES.move_to_end(key)
        return _TABLES[key]
    n, d = X.shape
    order = np.argsort(X, axis=0, kind="stable")
    srt = np.take_along_axis(X, order, axis=0)
    dense = np.zeros((n, d), dtype=np.int64)
    dense[1:] = np.cumsum(srt[1:] != srt[:-1], axis=0)
    ranks = np.empty((n, d), dtype=np.int64)
    np.put_along_axis(ranks, order, dense, axis=0)
    values = np.zeros((n, d))
    np.put_along_axis(values, dense, srt, axis=0)
    if n < 2 ** 16:
        ranks = ranks.astype(np.uint16)
    _TABLES[key] = (ranks, values)
    while len(_TABLES) > 4:
        _TABLES.popitem(last=False)
    return ranks, values


def grow_tree(X: np.ndarray, targets: np.ndarray, max_depth: int, n_features: int | None,
              rng: np.random.Generator | None, leaf_value, rows=None, table=None) -> Tree:
    """Grow a tree over ``rows`` of ``X`` (all rows by default; repeats allowed).

    ``targets`` is aligned with ``X``, shape (n, t): one-hot labels for
    classification or a single residual column for regression.
    ``leaf_value(rows)`` gives the stored value for a node holding those row
    indices. With ``n_features`` set, each split draws that many candidate
    features; if none of them separates the rows, the remaining features are
    tried in random order until one does.

    The tree grows one depth level at a time: the candidate columns of every
    open node are gathered, sorted and scanned together. ``table`` is an
    optional precomputed ``rank_table(X)``.
    """
    d = X.shape[1]
    ranks, values = table if table is not None else rank_table(X)
    span = int(ranks.max()) + 1 if ranks.size else 1
    m = d if n_features is None else min(n_features, d)
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(r):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(leaf_value(r))
        return len(feature) - 1

    def splittable(r):
        t = targets[r]
        return len(r) >= 2 and not np.all(t == t[0])

    rows = np.arange(len(X)) if rows is None else np.asarray(rows, dtype=np.int64)
    frontier = [(new_node(rows), rows)]
    depth = 0
    while depth < max_depth:
        frontier = [(i, r) for i, r in frontier if splittable(r)]
        if not frontier:
            break
        feats = np.stack([rng.choice(d, m, replace=False) if m < d else np.arange(d) for _ in frontier])
        sizes = np.array([len(r) for _, r in frontier])
        ends = np.cumsum(sizes)
        starts = ends - sizes
        group = np.repeat(np.arange(len(frontier)), sizes)
        all_rows = np.concatenate([r for _, r in frontier])

        cand = feats[group]
        key = ranks[all_rows[:, None], cand].T.astype(np.int64) + group * span
        if len(frontier) * span < 2 ** 16:
            key = key.astype(np.uint16)  # stable sort of 16-bit keys is a radix sort
        # rows stay inside their node block; within a block they are by value
        order = np.argsort(key, axis=1, kind="stable")
        vals = np.take_along_axis(key, order, axis=1).T
        order = order.T
        cum = np.cumsum(targets[all_rows][order], axis=0)
        before = np.where(starts > 0, starts - 1, 0)
        offset = np.where((starts > 0)[:, None, None], cum[before], 0.0)
        cum = cum - offset[group]
        total = cum[ends - 1][group]
        n_left = (np.arange(len(all_rows)) - starts[group] + 1).astype(np.float64)[:, None]
        n_right = sizes[group][:, None] - n_left
        with np.errstate(divide="ignore", invalid="ignore"):
            score = (cum ** 2).sum(axis=2) / n_left + ((total - cum) ** 2).sum(axis=2) / n_right
        step = np.zeros_like(score, dtype=bool)
        step[:-1] = vals[:-1] < vals[1:]
        step[ends - 1] = False  # the last row of a block cannot split it
        score = np.where(step, score, -np.inf)

        nxt = []
        for g, (idx, r) in enumerate(frontier):
            block = score[starts[g]:ends[g]].T  # feature-major tie order
            if np.isfinite(block).any():
                f, j = np.unravel_index(int(np.argmax(block)), block.shape)
                lo_rank = int(vals[starts[g] + j, f]) - g * span
                hi_rank = int(vals[starts[g] + j + 1, f]) - g * span
                f = int(feats[g, f])
                lo, hi = values[lo_rank, f], values[hi_rank, f]
                thr = 0.5 * (lo + hi)
                if not lo <= thr < hi:  # adjacent floats
                    thr = lo
            else:
                split = None
                if m < d:
                    rest = np.setdiff1d(np.arange(d), feats[g])
                    rest = rest[rng.permutation(len(rest))]
                    for i in range(0, len(rest), m):
                        split = best_split(X, targets[r], rest[i:i + m], r)
                        if split is not None:
                            break
                if split is None:
                    continue
                f, thr, _ = split
            go_left = X[r, f] <= thr
            feature[idx], threshold[idx] = f, float(thr)
            left[idx] = new_node(r[go_left])
            right[idx] = new_node(r[~go_left])
            nxt += [(left[idx], r[go_left]), (right[idx], r[~go_left])]
        if not nxt:
            break
        frontier = nxt
        depth += 1
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value), depth)


def n_split_features(d: int) -> int:
    return max(1, int(np.sqrt(d)))


def fit_forest(X, y, n_classes, n_trees, max_depth, seed):
    """Random forest: a bootstrap sample and sqrt(d) split candidates per tree."""
    onehot = np.eye(n_classes)[y]
    m = n_split_features(X.shape[1])
    table = rank_table(X)
    trees, samples = [], []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        rows = rng.integers(0, len(X), size=len(X))
        tree = grow_tree(X, onehot, max_depth, m, rng, lambda r: onehot[r].mean(axis=0), rows, table)
        trees.append(tree)
        samples.append(rows)
    return trees, samples


def fit_boosting(X, t, n_trees, max_depth, shrinkage, seed):
    """Binary logistic gradient boosting; ``t`` holds 0/1 targets.

    Each round fits a squared-error tree to the residuals t - p and sets each
    leaf to the one-step Newton value sum(r) / sum(p(1-p)).
    """
    pos = float(np.clip(t.mean(), 1e-12, 1 - 1e-12))
    base = np.log(pos / (1 - pos))
    score = np.full(len(X), base)
    m = n_split_features(X.shape[1])
    table = rank_table(X)
    trees = []
    for i in range(n_trees):
        rng = np.random.default_rng([seed, i])
        p = 1.0 / (1.0 + np.exp(-score))
        r = t - p
        h = p * (1 - p)

        def newton(rows, r=r, h=h):
            return r[rows].sum() / max(h[rows].sum(), 1e-12)

        tree = grow_tree(X, r[:, None], max_depth, m, rng, newton, table=table)
        trees.append(tree)
        score += shrinkage * tree.predict_value(X)
    return base, trees
