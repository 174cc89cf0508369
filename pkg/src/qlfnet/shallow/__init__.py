"""Seven baseline classifiers behind one fit / predict interface.

LR, both SVMs and GBC are binary learners; on more than two classes ``fit``
wraps them one-vs-all. GNB, KNC and RFC are natively multiclass. ``ova_fit``
forces the one-vs-all construction for any kind.

Labels are integer class indices. Every prediction breaks ties toward the
smallest class index.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from ..errors import RangeError, ShapeError
from .linear import fit_logistic
from .svm import kernel, smo, sq_distances
from .trees import fit_boosting, fit_forest


class ModelKind(str, Enum):
    LR = "LR"
    SVMC_K = "SVMC_K"
    SVMC_L = "SVMC_L"
    GNB = "GNB"
    GBC = "GBC"
    KNC = "KNC"
    RFC = "RFC"

    @classmethod
    def parse(cls, text) -> "ModelKind":
        if isinstance(text, cls):
            return text
        try:
            return cls(str(text).upper())
        except ValueError:
            raise ValueError(f"unknown model kind {text!r}; expected one of {[k.value for k in cls]}") from None


BINARY_KINDS = (ModelKind.LR, ModelKind.SVMC_K, ModelKind.SVMC_L, ModelKind.GBC)

HYPER_KEYS = {
    ModelKind.LR: ("C",),
    ModelKind.SVMC_L: ("C",),
    ModelKind.SVMC_K: ("C", "gamma"),
    ModelKind.GNB: ("var_smoothing",),
    ModelKind.KNC: ("k",),
    ModelKind.RFC: ("trees", "depth"),
    ModelKind.GBC: ("trees", "depth", "shrinkage"),
}

_C = [0.01, 0.1, 1.0, 10.0, 100.0]
DEFAULT_GRIDS = {
    ModelKind.LR: {"C": _C},
    ModelKind.SVMC_L: {"C": _C},
    ModelKind.SVMC_K: {"C": _C, "gamma": [1e-4, 1e-3, 1e-2, 1e-1]},
    ModelKind.GNB: {"var_smoothing": [1e-9]},
    ModelKind.KNC: {"k": [1, 3, 5, 11]},
    ModelKind.RFC: {"trees": [50, 200], "depth": [2, 4, 8]},
    ModelKind.GBC: {"trees": [50, 200], "depth": [2, 4, 8], "shrinkage": [0.05, 0.1]},
}


def expand_grid(grid: dict) -> list[dict]:
    """Cartesian product in declaration order (last key varies fastest)."""
    keys = list(grid)
    if not keys:
        return [{}]
    return [dict(zip(keys, combo)) for combo in itertools.product(*(grid[k] for k in keys))]


def check_hyperparams(kind: ModelKind, hp: dict) -> dict:
    kind = ModelKind.parse(kind)
    want = HYPER_KEYS[kind]
    missing = [k for k in want if k not in hp]
    extra = [k for k in hp if k not in want]
    if missing or extra:
        raise ValueError(f"{kind.value} takes hyperparameters {want}; missing {missing}, unexpected {extra}")
    out = {}
    for k in want:
        v = hp[k]
        if k in ("k", "trees", "depth"):
            if int(v) != v or v < 1:
                raise ValueError(f"{k} must be a positive integer, got {v!r}")
            v = int(v)
        elif not v > 0:
            raise ValueError(f"{k} must be positive, got {v!r}")
        out[k] = float(v) if k not in ("k", "trees", "depth") else v
    return out


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    if X.ndim != 2 or y.ndim != 1 or len(X) != len(y):
        raise ShapeError(f"expected X (n, d) and y (n,), got {X.shape} and {y.shape}")
    if not np.all(np.isfinite(X)):
        raise RangeError("features must be finite")
    if y.size and (np.any(y < 0) or np.any(y != np.round(y))):
        raise ValueError("labels must be non-negative integers")
    y = y.astype(np.int64)
    if len(np.unique(y)) < 2:
        raise ValueError("need at least two classes in the training labels")
    return X, y


def _argmax_first(scores: np.ndarray) -> np.ndarray:
    return np.argmax(scores, axis=1)  # first maximum, i.e. smallest index


@dataclass
class FittedModel:
    """A trained classifier. ``scores`` gives one column per class in
    ``classes``; ``predict`` is their argmax."""

    kind: ModelKind
    hp: dict
    classes: np.ndarray
    n_features: int
    state: dict = field(default_factory=dict, repr=False)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def _check(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"model expects (n, {self.n_features}) features, got {X.shape}")
        return X

    def scores(self, X) -> np.ndarray:
        X = self._check(X)
        if "members" in self.state:  # one-vs-all
            return np.column_stack([m.binary_score(X) for m in self.state["members"]])
        return _SCORERS[self.kind](self, X)

    def binary_score(self, X) -> np.ndarray:
        """Signed score for the second class of a two-class model."""
        X = self._check(X)
        if self.kind in _BINARY_SCORERS and "members" not in self.state:
            return _BINARY_SCORERS[self.kind](self, X)
        s = self.scores(X)
        return s[:, 1] - s[:, 0]

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        if len(X) == 0:
            return np.zeros(0, dtype=np.int64)
        if self.kind in _BINARY_SCORERS and "members" not in self.state:
            # a direct binary model: class 1 only on a strictly positive score
            return self.classes[(_BINARY_SCORERS[self.kind](self, X) > 0).astype(np.int64)]
        return self.classes[_argmax_first(self.scores(X))]


# --------------------------------------------------------------------------
# binary learners (targets t in {-1, +1}, positive = classes[1])

def _fit_lr(X, t, hp, seed):
    w, b, iters, converged = fit_logistic(X, t, hp["C"])
    return {"w": w, "b": b, "iterations": iters, "converged": converged}


def _fit_svm(gamma_key):
    def fit(X, t, hp, seed):
        gamma = hp["gamma"] if gamma_key else None
        alpha, rho, history, converged = smo(kernel(X, X, gamma), t, hp["C"])
        sv = alpha > 0
        return {"sv": X[sv], "coef": (alpha * t)[sv], "rho": rho, "gamma": gamma,
                "dual_history": history, "converged": converged, "alpha": alpha}
    return fit


def _fit_gbc(X, t, hp, seed):
    base, trees = fit_boosting(X, (t > 0).astype(np.float64), hp["trees"], hp["depth"], hp["shrinkage"], seed)
    return {"base": base, "trees": trees}


def _lr_score(model, X):
    s = model.state
    return X @ s["w"] + s["b"]


def _svm_score(model, X):
    s = model.state
    if len(s["coef"]) == 0:
        return np.full(len(X), -s["rho"])
    return kernel(X, s["sv"], s["gamma"]) @ s["coef"] - s["rho"]


def _gbc_score(model, X, n_trees=None):
    s = model.state
    out = np.full(len(X), s["base"])
    for tree in s["trees"][:n_trees]:
        out += model.hp["shrinkage"] * tree.predict_value(X)
    return out


_BINARY_FITTERS = {
    ModelKind.LR: _fit_lr,
    ModelKind.SVMC_L: _fit_svm(False),
    ModelKind.SVMC_K: _fit_svm(True),
    ModelKind.GBC: _fit_gbc,
}
_BINARY_SCORERS = {
    ModelKind.LR: _lr_score,
    ModelKind.SVMC_L: _svm_score,
    ModelKind.SVMC_K: _svm_score,
    ModelKind.GBC: _gbc_score,
}


# --------------------------------------------------------------------------
# native multiclass learners (labels are positions into ``classes``)

def _fit_gnb(X, yi, k, hp, seed):
    floor = hp["var_smoothing"] * (X.var(axis=0).max() + 1e-12)
    means = np.stack([X[yi == c].mean(axis=0) for c in range(k)])
    var = np.stack([X[yi == c].var(axis=0) for c in range(k)]) + floor
    prior = np.bincount(yi, minlength=k) / len(yi)
    return {"mean": means, "var": var, "log_prior": np.log(prior), "floor": floor}


def _gnb_score(model, X):
    s = model.state
    out = np.empty((len(X), len(s["mean"])))
    for c, (mu, var) in enumerate(zip(s["mean"], s["var"])):
        out[:, c] = s["log_prior"][c] - 0.5 * np.log(2 * np.pi * var).sum() - 0.5 * (((X - mu) ** 2) / var).sum(axis=1)
    return out


def gnb_posterior(model: FittedModel, X) -> np.ndarray:
    """Class posteriors of a Gaussian naive Bayes model."""
    s = model.scores(X)
    s = np.exp(s - s.max(axis=1, keepdims=True))
    return s / s.sum(axis=1, keepdims=True)


def _fit_knc(X, yi, k, hp, seed):
    return {"X": X.copy(), "y": yi.copy(), "k": min(hp["k"], len(X))}


def knc_neighbours(model: FittedModel, X) -> np.ndarray:
    """Indices of the k nearest training rows, ordered by distance then index."""
    s = model.state
    d = sq_distances(model._check(X), s["X"])
    idx = np.broadcast_to(np.arange(d.shape[1]), d.shape)
    order = np.lexsort((idx, d), axis=1)
    return order[:, :s["k"]]


def _knc_score(model, X):
    """Votes per class, plus a fractional bonus that ranks tied classes by
    how early their first member appears in the neighbour order."""
    s = model.state
    nb = knc_neighbours(model, X)
    labels = s["y"][nb]
    k = model.n_classes
    votes = np.stack([(labels == c).sum(axis=1) for c in range(k)], axis=1).astype(np.float64)
    first = np.full((len(X), k), s["k"], dtype=np.float64)
    for c in range(k):
        hit = labels == c
        first[:, c] = np.where(hit.any(axis=1), hit.argmax(axis=1), s["k"])
    return votes + (s["k"] - first) / (s["k"] + 1)


def _fit_rfc(X, yi, k, hp, seed):
    trees, samples = fit_forest(X, yi, k, hp["trees"], hp["depth"], seed)
    return {"trees": trees, "bootstrap": samples}


def _rfc_score(model, X, n_trees=None):
    trees = model.state["trees"][:n_trees]
    return sum(t.predict_value(X) for t in trees) / len(trees)


_NATIVE_FITTERS = {ModelKind.GNB: _fit_gnb, ModelKind.KNC: _fit_knc, ModelKind.RFC: _fit_rfc}
_SCORERS = {ModelKind.GNB: _gnb_score, ModelKind.KNC: _knc_score, ModelKind.RFC: _rfc_score}


# --------------------------------------------------------------------------
# public interface

def _fit_binary(kind, X, y, classes, hp, seed):
    t = np.where(y == classes[1], 1.0, -1.0)
    state = _BINARY_FITTERS[kind](X, t, hp, seed)
    return FittedModel(kind, hp, classes, X.shape[1], state)


def fit(kind, X, y, hp: dict, seed: int = 0) -> FittedModel:
    """Train one model. Binary kinds go one-vs-all on more than two classes."""
    kind = ModelKind.parse(kind)
    hp = check_hyperparams(kind, hp)
    X, y = _check_xy(X, y)
    classes = np.unique(y)
    if kind in BINARY_KINDS:
        if len(classes) == 2:
            return _fit_binary(kind, X, y, classes, hp, seed)
        return ova_fit(kind, X, y, hp, seed)
    yi = np.searchsorted(classes, y)
    state = _NATIVE_FITTERS[kind](X, yi, len(classes), hp, seed)
    return FittedModel(kind, hp, classes, X.shape[1], state)


def ova_fit(kind, X, y, hp: dict, seed: int = 0, n_classes: int | None = None) -> FittedModel:
    """One binary scorer per class (that class positive); predict is the
    argmax of the scores. With ``n_classes`` every class 0..n-1 must occur.

    All members share ``seed``: flipping a binary problem then flips every
    member exactly, so two-class OvA decides like the direct model."""
    kind = ModelKind.parse(kind)
    hp = check_hyperparams(kind, hp)
    X, y = _check_xy(X, y)
    classes = np.unique(y)
    if n_classes is not None:
        absent = sorted(set(range(n_classes)) - set(classes.tolist()))
        if absent:
            raise ValueError(f"classes {absent} do not occur in the training labels")
    members = []
    for i, c in enumerate(classes):
        pos = (y == c).astype(np.int64)
        sub = np.array([0, 1])
        if kind in BINARY_KINDS:
            members.append(_fit_binary(kind, X, pos, sub, hp, seed))
        else:
            m = fit(kind, X, pos, hp, seed)
            members.append(m)
    return FittedModel(kind, hp, classes, X.shape[1], {"members": members})


def predict(model: FittedModel, X) -> np.ndarray:
    return model.predict(X)


def truncate_trees(model: FittedModel, n_trees: int) -> FittedModel:
    """The first ``n_trees`` trees of an RFC or GBC model.

    Tree t of a forest or boosting run depends only on the seed and the
    trees before it, so this equals a fresh fit with ``trees=n_trees``.
    """
    if model.kind not in (ModelKind.RFC, ModelKind.GBC):
        raise ValueError(f"{model.kind.value} has no trees")
    if not 1 <= n_trees <= model.hp["trees"]:
        raise ValueError(f"can keep 1..{model.hp['trees']} trees, asked for {n_trees}")
    hp = {**model.hp, "trees": int(n_trees)}
    if "members" in model.state:
        state = {"members": [truncate_trees(m, n_trees) for m in model.state["members"]]}
    else:
        state = {k: (v[:n_trees] if k in ("trees", "bootstrap") else v) for k, v in model.state.items()}
    return FittedModel(model.kind, hp, model.classes, model.n_features, state)


__all__ = [
    "BINARY_KINDS", "DEFAULT_GRIDS", "FittedModel", "HYPER_KEYS", "ModelKind", "check_hyperparams",
    "expand_grid", "fit", "gnb_posterior", "knc_neighbours", "ova_fit", "predict", "truncate_trees",
]
