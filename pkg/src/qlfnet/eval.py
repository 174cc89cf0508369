"""Evaluation protocol: stratified shuffled splits, grid search on a
validation slice, ten-shuffle macro-F1 aggregation and the channel ablation.

Every (model, composition, shuffle) cell is a pure function of the dataset,
the plan and the seeds derived from the plan's base seed, so cells can run in
any order or in parallel and are merged in a fixed order afterwards.
"""

from __future__ import annotations

import hashlib
import multiprocessing as mp
from dataclasses import dataclass, field, replace

import numpy as np

from . import cnn
from .errors import ShapeError
from .metrics import f1_macro
from .shallow import DEFAULT_GRIDS, ModelKind, check_hyperparams, expand_grid, fit, truncate_trees
from .tensor import ABLATION_MASKS, ChannelMask, channel_select

N_SHUFFLES = 10
FRACTIONS = (0.8, 0.1, 0.1)
CNN = "CNN"
MODEL_ORDER = tuple(k.value for k in ModelKind) + (CNN,)
TREE_KINDS = (ModelKind.RFC, ModelKind.GBC)


def derive_seed(*parts) -> int:
    """A 32-bit seed hashed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def parse_model(name) -> str:
    if str(name).upper() == CNN:
        return CNN
    return ModelKind.parse(name).value


# --------------------------------------------------------------------------
# splits

@dataclass(frozen=True, eq=False)
class SplitPlan:
    shuffle_index: int
    seed: int
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.train_idx, self.val_idx, self.test_idx):
            h.update(np.asarray(part, dtype="<i8").tobytes())
            h.update(b"|")
        return h.hexdigest()

    def to_dict(self) -> dict:
        return {"shuffle_index": self.shuffle_index, "seed": self.seed, "train_idx": self.train_idx.tolist(),
                "val_idx": self.val_idx.tolist(), "test_idx": self.test_idx.tolist()}

    @classmethod
    def from_dict(cls, d) -> "SplitPlan":
        return cls(int(d["shuffle_index"]), int(d["seed"]),
                   *(np.asarray(d[k], dtype=np.int64) for k in ("train_idx", "val_idx", "test_idx")))


def _largest_remainder(n, fractions):
    raw = np.asarray(fractions) * n
    counts = np.floor(raw).astype(np.int64)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:n - counts.sum()]] += 1
    return counts


def _stratified_counts(class_sizes, fractions) -> np.ndarray:
    """Integer (class, part) table with exact row sums, column sums equal to
    the rounded part sizes, and every cell within 1 of its exact share.

    Cells start at the floor of their share; the missing units go to the
    largest remainders first and an augmenting-path pass places any unit
    the greedy order could not.
    """
    class_sizes = np.asarray(class_sizes, dtype=np.int64)
    raw = class_sizes[:, None] * np.asarray(fractions)[None, :]
    table = np.floor(raw + 1e-9).astype(np.int64)
    rem = raw - table
    row_need = class_sizes - table.sum(axis=1)
    col_need = _largest_remainder(int(class_sizes.sum()), fractions) - table.sum(axis=0)
    extra = np.zeros(table.shape, dtype=bool)
    k, p = table.shape
    for flat in np.lexsort((np.arange(k * p), -rem.ravel())):
        c, j = divmod(int(flat), p)
        if row_need[c] > 0 and col_need[j] > 0:
            extra[c, j] = True
            row_need[c] -= 1
            col_need[j] -= 1
    while row_need.sum() > 0:
        # breadth-first search: class -> unused cell -> part -> used cell -> class
        start = int(np.flatnonzero(row_need > 0)[0])
        prev_class = {start: None}
        prev_part = {}
        queue, end = [start], None
        while queue and end is None:
            c = queue.pop(0)
            for j in range(p):
                if extra[c, j] or j in prev_part:
                    continue
                prev_part[j] = c
                if col_need[j] > 0:
                    end = j
                    break
                for c2 in np.flatnonzero(extra[:, j]):
                    if int(c2) not in prev_class:
                        prev_class[int(c2)] = j
                        queue.append(int(c2))
        if end is None:
            raise RuntimeError("no stratified allocation exists")
        j = end
        col_need[j] -= 1
        while True:
            c = prev_part[j]
            extra[c, j] = True
            back = prev_class[c]
            if back is None:
                row_need[c] -= 1
                break
            extra[c, back] = False
            j = back
    return table + extra


def stratified_shuffle_split(labels, fractions=FRACTIONS, seed: int = 0, shuffle_index: int = 0) -> SplitPlan:
    """Random train / validation / test partition preserving class shares.

    Part sizes are the largest-remainder rounding of ``fractions``; each
    class contributes to each part within one sample of its exact share.
    """
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise ShapeError(f"labels must be a non-empty vector, got shape {labels.shape}")
    fractions = np.asarray(fractions, dtype=np.float64)
    if fractions.shape != (3,) or np.any(fractions <= 0) or abs(fractions.sum() - 1) > 1e-9:
        raise ValueError(f"fractions must be three positive shares summing to 1, got {fractions.tolist()}")
    classes, inverse, sizes = np.unique(labels, return_inverse=True, return_counts=True)
    if sizes.min() < 3:
        small = classes[sizes < 3].tolist()
        raise ValueError(f"every class needs at least 3 samples; classes {small} have fewer")
    table = _stratified_counts(sizes, fractions)
    rng = np.random.default_rng(seed)
    parts = [[], [], []]
    for c in range(len(classes)):
        idx = rng.permutation(np.flatnonzero(inverse == c))
        bounds = np.cumsum(table[c])
        for j, chunk in enumerate(np.split(idx, bounds[:-1])):
            parts[j].append(chunk)
    train, val, test = (np.sort(np.concatenate(p)).astype(np.int64) for p in parts)
    return SplitPlan(int(shuffle_index), int(seed), train, val, test)


def make_splits(labels, seed: int, n_shuffles: int = N_SHUFFLES, fractions=FRACTIONS) -> list:
    return [stratified_shuffle_split(labels, fractions, derive_seed(seed, 0x5B117, i), i) for i in range(n_shuffles)]


# --------------------------------------------------------------------------
# plans

EVAL_CNN_ARCH = cnn.ArchSpec(stem_maps=8, blocks=((8, True), (16, True), (16, True), (16, True)), dense_hidden=32)
# plaque level does not change when a view is mirrored, so training flips images
EVAL_CNN_TRAIN = cnn.TrainConfig(learning_rate=0.01, momentum=0.9, epochs=20, batch_size=16, l2=1e-4,
                                 dtype="float32", flips=True)


@dataclass
class CnnSettings:
    """CNN used inside experiments. The input size and class count of
    ``arch`` are replaced by the data's; ``crop`` is (height, width) of a
    centred crop, or None for the largest size the pooling steps divide."""

    arch: cnn.ArchSpec = EVAL_CNN_ARCH
    train: cnn.TrainConfig = EVAL_CNN_TRAIN
    crop: tuple | None = None

    def crop_box(self, height, width) -> tuple:
        step = 2 ** self.arch.pools
        h, w = self.crop if self.crop is not None else (height - height % step, width - width % step)
        if not (0 < h <= height and 0 < w <= width):
            raise ShapeError(f"crop {h}x{w} does not fit images of {height}x{width}")
        top, left = (height - h) // 2, (width - w) // 2
        return top, left, h, w


@dataclass
class TrialPlan:
    splits: list
    compositions: tuple = ABLATION_MASKS
    models: tuple = MODEL_ORDER
    grids: dict = field(default_factory=dict)
    cnn: CnnSettings = field(default_factory=CnnSettings)
    seed: int = 0

    def __post_init__(self):
        if len(self.splits) != N_SHUFFLES:
            raise ValueError(f"a trial plan holds exactly {N_SHUFFLES} shuffles, got {len(self.splits)}")
        self.compositions = tuple(c if isinstance(c, ChannelMask) else ChannelMask.parse(c)
                                  for c in self.compositions)
        self.models = tuple(parse_model(m) for m in self.models)
        if not self.models or not self.compositions:
            raise ValueError("a trial plan needs at least one model and one composition")
        if len(set(self.models)) != len(self.models) or len(set(self.compositions)) != len(self.compositions):
            raise ValueError("models and compositions must not repeat")
        grids = {parse_model(k): v for k, v in self.grids.items()}
        for name in grids:
            if name == CNN:
                raise ValueError("the CNN is selected by validation epoch, not by a grid")
        for name in self.models:
            if name != CNN:
                grids.setdefault(name, DEFAULT_GRIDS[ModelKind(name)])
                points = expand_grid(grids[name])
                if not points or not all(len(v) for v in grids[name].values()):
                    raise ValueError(f"grid for {name} is empty")
                for hp in points:
                    check_hyperparams(name, hp)
        self.grids = grids

    def digests(self) -> list:
        return [s.digest() for s in self.splits]


def make_trial_plan(labels, seed: int = 0, models=MODEL_ORDER, compositions=ABLATION_MASKS, grids=None,
                    cnn_settings: CnnSettings | None = None) -> TrialPlan:
    return TrialPlan(make_splits(labels, seed), tuple(compositions), tuple(models), dict(grids or {}),
                     cnn_settings or CnnSettings(), seed)


# --------------------------------------------------------------------------
# grid search

@dataclass
class GridResult:
    best_hp: dict
    val_score: float
    records: list      # (hp, val score, error message or None) per grid point, in grid order
    model: object      # the best point's model, trained on the training slice


def grid_search(kind, grid: dict, split: SplitPlan, X, y, base_seed: int = 0, model_index: int = 0) -> GridResult:
    """Train on ``split.train_idx`` at every grid point, score macro-F1 on
    ``split.val_idx`` and keep the first maximizer in grid order.

    A point whose training fails scores -1. Each point is seeded from
    (base_seed, model_index, grid_index, shuffle_index), where grid_index
    ignores the tree count: a 50-tree RFC or GBC is the first 50 trees of
    the 200-tree fit with the same seed, so larger tree counts are grown once
    and truncated.
    """
    kind = ModelKind.parse(kind)
    points = expand_grid(grid)
    if not grid or not points:
        raise ValueError("grid search needs a non-empty grid")
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y)
    tr, va = split.train_idx, split.val_idx
    shared = kind in TREE_KINDS and "trees" in grid
    groups = {}
    for hp in points:
        key = tuple((k, v) for k, v in hp.items() if not (shared and k == "trees"))
        groups.setdefault(key, len(groups))
    grown = {}

    def train_point(hp):
        key = tuple((k, v) for k, v in hp.items() if not (shared and k == "trees"))
        gi = groups[key]
        seed = derive_seed(base_seed, model_index, gi, split.shuffle_index)
        if not shared:
            return fit(kind, X[tr], y[tr], hp, seed)
        if key not in grown:
            most = max(p["trees"] for p in points if tuple((k, v) for k, v in p.items() if k != "trees") == key)
            try:
                grown[key] = fit(kind, X[tr], y[tr], {**hp, "trees": most}, seed)
            except Exception as exc:  # noqa: BLE001 - recorded per point
                grown[key] = exc
        if isinstance(grown[key], Exception):
            raise grown[key]
        return truncate_trees(grown[key], int(hp["trees"]))

    records, best, best_model = [], None, None
    for hp in points:
        try:
            model = train_point(hp)
            score = f1_macro(y[va], model.predict(X[va]))
            error = None
        except Exception as exc:  # noqa: BLE001 - a failing point is scored, not fatal
            model, score, error = None, -1.0, f"{type(exc).__name__}: {exc}"
        records.append((hp, score, error))
        if best is None or score > records[best][1]:
            best, best_model = len(records) - 1, model
    if best_model is None:
        raise RuntimeError(f"every grid point of {kind.value} failed; first error: {records[0][2]}")
    return GridResult(records[best][0], records[best][1], records, best_model)


# --------------------------------------------------------------------------
# report

@dataclass
class CellResult:
    model: str
    composition: str
    train_scores: list
    test_scores: list
    val_scores: list
    chosen: list          # selected hyperparameters per shuffle
    plan_digests: list    # digest of the split each shuffle used
    failures: list = field(default_factory=list)  # (shuffle, hp, error) of failed grid points

    @property
    def train_mean(self):
        return float(np.mean(self.train_scores))

    @property
    def train_std(self):
        return float(np.std(self.train_scores, ddof=1))

    @property
    def test_mean(self):
        return float(np.mean(self.test_scores))

    @property
    def test_std(self):
        return float(np.std(self.test_scores, ddof=1))

    def to_dict(self) -> dict:
        return {"model": self.model, "composition": self.composition,
                "train_mean": self.train_mean, "train_std": self.train_std,
                "test_mean": self.test_mean, "test_std": self.test_std,
                "train_scores": list(self.train_scores), "test_scores": list(self.test_scores),
                "val_scores": list(self.val_scores), "chosen": list(self.chosen),
                "plan_digests": list(self.plan_digests), "failures": [list(f) for f in self.failures]}

    @classmethod
    def from_dict(cls, d) -> "CellResult":
        return cls(d["model"], d["composition"], list(d["train_scores"]), list(d["test_scores"]),
                   list(d["val_scores"]), list(d["chosen"]), list(d["plan_digests"]),
                   [tuple(f) for f in d.get("failures", [])])


@dataclass
class EvalReport:
    cells: list
    plan_seeds: list
    plan_digests: list
    base_seed: int = 0
    scheme: str = ""

    def __post_init__(self):
        for c in self.cells:
            if len(c.train_scores) != N_SHUFFLES or len(c.test_scores) != N_SHUFFLES:
                raise ValueError(f"cell {c.model}/{c.composition} does not hold {N_SHUFFLES} scores")
            if c.plan_digests != self.plan_digests:
                raise ValueError(f"cell {c.model}/{c.composition} used different splits than the plan")

    def cell(self, model, composition) -> CellResult:
        model = parse_model(model)
        name = composition.name if isinstance(composition, ChannelMask) else ChannelMask.parse(composition).name
        for c in self.cells:
            if c.model == model and c.composition == name:
                return c
        raise KeyError(f"no cell {model}/{name}")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "base_seed": self.base_seed, "plan_seeds": list(self.plan_seeds),
                "plan_digests": list(self.plan_digests), "cells": [c.to_dict() for c in self.cells]}

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls([CellResult.from_dict(c) for c in d["cells"]], list(d["plan_seeds"]),
                   list(d["plan_digests"]), int(d.get("base_seed", 0)), d.get("scheme", ""))


# --------------------------------------------------------------------------
# experiment

_WORK = {}  # dataset and plan shared with forked workers


def cnn_cell(plan, images, labels, n_classes, split, mask, seed, keep_model=None):
    """Train the CNN on one split; returns (train F1, test F1, val F1,
    {"best_epoch": e}, []). ``keep_model`` is an optional checkpoint path."""
    top, left, h, w = plan.cnn.crop_box(*images.shape[2:])
    x = channel_select(images, mask)[:, :, top:top + h, left:left + w]
    arch = plan.cnn.arch.with_input(len(mask), h, w, n_classes)
    model = cnn.build_model(arch, seed)
    cfg = replace(plan.cnn.train, seed=seed)
    tr, va, te = split.train_idx, split.val_idx, split.test_idx
    model, hist = cnn.train(model, (x[tr], labels[tr]), (x[va], labels[va]), cfg)
    if keep_model is not None:
        cnn.save_model(model, keep_model)
    model = model.astype(np.dtype(cfg.dtype))
    train_f1 = f1_macro(labels[tr], cnn.predict(model, x[tr]))
    test_f1 = f1_macro(labels[te], cnn.predict(model, x[te]))
    return train_f1, test_f1, hist["val_f1"][hist["best_epoch"]], {"best_epoch": hist["best_epoch"]}, []


def shallow_cell(plan, images, labels, split, mask, name, model_index):
    """Grid search one shallow model on one split; returns (train F1,
    test F1, val F1, chosen hyperparameters, failed grid points)."""
    X = channel_select(images, mask).reshape(len(images), -1)
    res = grid_search(name, plan.grids[name], split, X, labels, plan.seed, model_index)
    model = res.model
    train_f1 = f1_macro(labels[split.train_idx], model.predict(X[split.train_idx]))
    test_f1 = f1_macro(labels[split.test_idx], model.predict(X[split.test_idx]))
    failures = [(split.shuffle_index, hp, err) for hp, _, err in res.records if err is not None]
    return train_f1, test_f1, res.val_score, res.best_hp, failures


def cnn_seed(plan, split) -> int:
    return derive_seed(plan.seed, MODEL_ORDER.index(CNN), 0, split.shuffle_index)


def _run_task(task):
    mi, ci, si = task
    plan, images, labels, n_classes = _WORK["plan"], _WORK["images"], _WORK["labels"], _WORK["n_classes"]
    name, mask, split = plan.models[mi], plan.compositions[ci], plan.splits[si]
    model_index = MODEL_ORDER.index(name)
    if name == CNN:
        seed = cnn_seed(plan, split)
        out = cnn_cell(plan, images, labels, n_classes, split, mask, seed)
    else:
        out = shallow_cell(plan, images, labels, split, mask, name, model_index)
    return task, out + (split.digest(),)


def run_experiment(plan: TrialPlan, dataset, jobs: int = 1, progress=None) -> EvalReport:
    """Evaluate every (model, composition) cell of ``plan`` over its shuffles.

    Shallow models go through ``grid_search`` and the best point's model,
    trained on the training slice, is scored on train and test. The CNN
    trains on the training slice and keeps its best validation epoch.
    ``jobs`` worker processes share the work; results do not depend on it.
    ``progress(done, total)`` is called after each finished cell shuffle.
    """
    images = np.asarray(dataset.images, dtype=np.float64)
    labels = np.asarray(dataset.labels, dtype=np.int64)
    if images.ndim != 4 or images.shape[1] != 3:
        raise ShapeError(f"experiments need 3-channel images (N, 3, H, W), got {images.shape}")
    n = len(labels)
    if len(images) != n:
        raise ShapeError(f"{len(images)} images but {n} labels")
    for s in plan.splits:
        parts = np.concatenate([s.train_idx, s.val_idx, s.test_idx])
        if len(parts) != n or not np.array_equal(np.sort(parts), np.arange(n)):
            raise ValueError(f"split {s.shuffle_index} does not partition the {n} samples")
    if jobs < 1:
        raise ValueError(f"jobs must be >= 1, got {jobs}")
    n_classes = dataset.scheme.n_classes if hasattr(dataset, "scheme") else int(labels.max()) + 1

    tasks = [(mi, ci, si) for mi in range(len(plan.models)) for ci in range(len(plan.compositions))
             for si in range(len(plan.splits))]
    # the long CNN cells first so the pool drains evenly
    tasks.sort(key=lambda t: (plan.models[t[0]] != CNN, t))
    _WORK.update(plan=plan, images=images, labels=labels, n_classes=n_classes)
    results = {}
    try:
        if jobs == 1:
            for i, task in enumerate(tasks):
                key, out = _run_task(task)
                results[key] = out
                if progress:
                    progress(i + 1, len(tasks))
        else:
            with mp.get_context("fork").Pool(min(jobs, len(tasks))) as pool:
                for i, (key, out) in enumerate(pool.imap_unordered(_run_task, tasks)):
                    results[key] = out
                    if progress:
                        progress(i + 1, len(tasks))
    finally:
        _WORK.clear()

    cells = []
    for mi, name in enumerate(plan.models):
        for ci, mask in enumerate(plan.compositions):
            outs = [results[(mi, ci, si)] for si in range(len(plan.splits))]
            cells.append(CellResult(
                name, mask.name,
                [float(o[0]) for o in outs], [float(o[1]) for o in outs], [float(o[2]) for o in outs],
                [o[3] for o in outs], [o[5] for o in outs], [f for o in outs for f in o[4]]))
    scheme = dataset.scheme.name if hasattr(dataset, "scheme") else ""
    return EvalReport(cells, [s.seed for s in plan.splits], plan.digests(), plan.seed, scheme)


def run_ablation(dataset, base_plan: TrialPlan, jobs: int = 1, progress=None) -> EvalReport:
    """``run_experiment`` over the R, RG and RGB compositions."""
    shape = np.shape(dataset.images)
    if len(shape) != 4 or shape[1] != 3:
        raise ShapeError(f"channel ablation needs 3-channel images, got shape {shape}")
    plan = replace(base_plan, compositions=ABLATION_MASKS)
    return run_experiment(plan, dataset, jobs, progress)
