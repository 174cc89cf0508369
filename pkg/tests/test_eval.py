import json

import numpy as np
import pytest

from qlfnet import eval as ev
from qlfnet.cnn import ArchSpec, TrainConfig
from qlfnet.datagen import Dataset, LabelScheme
from qlfnet.eval import (
    CnnSettings, EvalReport, SplitPlan, derive_seed, grid_search, make_splits, make_trial_plan,
    run_ablation, run_experiment, stratified_shuffle_split,
)
from qlfnet.errors import ShapeError
from qlfnet.metrics import f1_macro
from qlfnet.shallow import fit
from qlfnet.tensor import MASK_R, MASK_RG

TINY_CNN = CnnSettings(ArchSpec(stem_maps=2, blocks=((2, True), (2, True)), dense_hidden=4),
                       TrainConfig(learning_rate=0.05, epochs=2, batch_size=8), None)
SMALL_GRIDS = {"LR": {"C": [1.0]}, "SVMC_K": {"C": [1.0], "gamma": [0.01]}, "SVMC_L": {"C": [1.0]},
               "GBC": {"trees": [2, 3], "depth": [2], "shrinkage": [0.1]}, "KNC": {"k": [1, 3]},
               "RFC": {"trees": [2, 4], "depth": [2]}}


def check_split(plan, labels):
    n = len(labels)
    parts = [plan.train_idx, plan.val_idx, plan.test_idx]
    both = np.concatenate(parts)
    assert len(both) == n and np.array_equal(np.sort(both), np.arange(n))
    classes, counts = np.unique(labels, return_counts=True)
    for part, frac in zip(parts, ev.FRACTIONS):
        assert abs(len(part) - frac * n) <= 1
        got = np.array([(labels[part] == c).sum() for c in classes])
        assert np.all(np.abs(got - frac * counts) < 1 + 1e-9)


def test_split_example_counts():
    labels = np.repeat([0, 1, 2], [30, 30, 40])
    plan = stratified_shuffle_split(labels, seed=1)
    assert len(plan.test_idx) == 10
    assert np.bincount(labels[plan.test_idx]).tolist() == [3, 3, 4]
    check_split(plan, labels)


def test_split_is_deterministic_per_seed():
    labels = np.random.default_rng(0).integers(0, 4, 97)
    a, b = stratified_shuffle_split(labels, seed=5), stratified_shuffle_split(labels, seed=5)
    assert a.digest() == b.digest()
    assert stratified_shuffle_split(labels, seed=6).digest() != a.digest()


def test_split_rejects_tiny_class():
    with pytest.raises(ValueError):
        stratified_shuffle_split(np.array([0, 0, 0, 1, 1]), seed=0)


def test_split_invariants_on_random_label_vectors():
    rng = np.random.default_rng(1)
    for i in range(1000):
        k = int(rng.integers(2, 6))
        n = int(rng.integers(3 * k, 300))
        labels = rng.integers(0, k, n)
        while np.bincount(labels, minlength=k).min() < 3:
            labels = rng.integers(0, k, n)
        check_split(stratified_shuffle_split(labels, seed=i), labels)


def test_split_roundtrip_dict():
    plan = make_splits(np.repeat([0, 1], 10), 3)[2]
    back = SplitPlan.from_dict(json.loads(json.dumps(plan.to_dict())))
    assert back.digest() == plan.digest() and back.shuffle_index == 2


def test_trial_plan_needs_ten_shuffles():
    labels = np.repeat([0, 1, 2], 10)
    with pytest.raises(ValueError):
        ev.TrialPlan(make_splits(labels, 0, n_shuffles=9))
    with pytest.raises(ValueError):
        make_trial_plan(labels, models=["KNC", "KNC"])
    with pytest.raises(ValueError):
        make_trial_plan(labels, models=["KNC"], grids={"KNC": {"k": []}})


# --------------------------------------------------------------------------
# grid search

def planted_knc_problem():
    """Each validation point has a same-class twin right next to it and two
    opposite-class points slightly further away, so only k = 1 is right."""
    X, y, val = [], [], []
    for i in range(8):
        c = i % 2
        centre = 10.0 * i
        X += [[centre + 0.1], [centre - 0.5], [centre + 0.6]]
        y += [c, 1 - c, 1 - c]
    for i in range(8):
        val.append(len(X))
        X.append([10.0 * i])
        y.append(i % 2)
    X, y = np.array(X), np.array(y)
    val = np.array(val)
    split = SplitPlan(0, 0, np.arange(24), val, val)
    return X, y, split


def test_grid_search_picks_the_perfect_point():
    X, y, split = planted_knc_problem()
    res = grid_search("KNC", {"k": [3, 5, 1, 11]}, split, X, y)
    assert res.best_hp == {"k": 1} and res.val_score == 1.0
    assert [r[1] < 1.0 for r in res.records] == [True, True, False, True]


def test_grid_search_singleton_and_ties():
    X, y, split = planted_knc_problem()
    assert grid_search("KNC", {"k": [5]}, split, X, y).best_hp == {"k": 5}
    res = grid_search("GNB", {"var_smoothing": [1e-3, 1e-9]}, split, X, y)
    assert res.records[0][1] == res.records[1][1]
    assert res.best_hp == {"var_smoothing": 1e-3}


def test_grid_search_records_failures(monkeypatch):
    X, y, split = planted_knc_problem()
    real_fit = ev.fit

    def flaky(kind, X, y, hp, seed=0):
        if hp["k"] == 1:
            raise FloatingPointError("boom")
        return real_fit(kind, X, y, hp, seed)

    monkeypatch.setattr(ev, "fit", flaky)
    res = grid_search("KNC", {"k": [1, 3]}, split, X, y)
    assert res.records[0][1] == -1.0 and "boom" in res.records[0][2]
    assert res.best_hp == {"k": 3}
    with pytest.raises(ValueError):
        grid_search("KNC", {}, split, X, y)


def test_grid_search_tree_prefix_matches_separate_fits():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(60, 4))
    y = (X[:, 0] + rng.normal(0, 1, 60) > 0).astype(int) + (X[:, 1] > 1)
    split = make_splits(y, 0)[3]
    grid = {"trees": [2, 5], "depth": [1, 3]}
    res = grid_search("RFC", grid, split, X, y, base_seed=7, model_index=6)
    for hp, score, err in res.records:
        group = [1, 3].index(hp["depth"])
        m = fit("RFC", X[split.train_idx], y[split.train_idx], hp, derive_seed(7, 6, group, split.shuffle_index))
        assert err is None and score == f1_macro(y[split.val_idx], m.predict(X[split.val_idx]))


# --------------------------------------------------------------------------
# experiments

def toy_dataset(n_per_class=10, size=16, seed=0, signal_channel=None, identical=False):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(3), n_per_class)
    if identical:
        images = np.full((len(labels), 3, size, size), 0.5)
    else:
        images = rng.uniform(0.3, 0.7, (len(labels), 3, size, size))
        if signal_channel is not None:
            images[:, signal_channel] += 0.15 * (labels[:, None, None] - 1)
    return Dataset(np.clip(images, 0, 1), labels, LabelScheme.RFPP3, np.zeros(len(labels)))


def test_one_cell_report_shape():
    ds = toy_dataset()
    plan = make_trial_plan(ds.labels, 0, models=["KNC"], compositions=[MASK_R], grids=SMALL_GRIDS)
    rep = run_experiment(plan, ds)
    assert len(rep.cells) == 1
    cell = rep.cells[0]
    assert len(cell.train_scores) == len(cell.test_scores) == 10 and len(cell.chosen) == 10
    assert cell.test_std == pytest.approx(np.std(cell.test_scores, ddof=1))
    assert all(0.0 <= s <= 1.0 for s in cell.train_scores + cell.test_scores)


def test_memorizing_model_scores_perfect_train():
    ds = toy_dataset()
    plan = make_trial_plan(ds.labels, 0, models=["KNC"], compositions=[MASK_R], grids={"KNC": {"k": [1]}})
    cell = run_experiment(plan, ds).cells[0]
    assert cell.train_mean == 1.0 and cell.train_std == 0.0


def test_reruns_and_job_counts_agree():
    ds = toy_dataset(seed=3)
    plan = make_trial_plan(ds.labels, 4, models=["KNC", "RFC", "GNB"], compositions=[MASK_R, MASK_RG],
                           grids=SMALL_GRIDS)
    a = json.dumps(run_experiment(plan, ds).to_dict())
    assert json.dumps(run_experiment(plan, ds).to_dict()) == a
    assert json.dumps(run_experiment(plan, ds, jobs=3).to_dict()) == a


def test_all_cells_share_the_plan():
    ds = toy_dataset(seed=2)
    plan = make_trial_plan(ds.labels, 1, models=["KNC", "GNB"], grids=SMALL_GRIDS)
    rep = run_experiment(plan, ds)
    assert all(c.plan_digests == rep.plan_digests for c in rep.cells)
    assert len(set(rep.plan_digests)) == 10
    back = EvalReport.from_dict(json.loads(json.dumps(rep.to_dict())))
    assert back.to_dict() == rep.to_dict()


def test_ablation_matrix_covers_models_and_compositions():
    ds = toy_dataset(n_per_class=6, seed=4)
    plan = make_trial_plan(ds.labels, 0, grids=SMALL_GRIDS, cnn_settings=TINY_CNN)
    rep = run_ablation(ds, plan)
    assert len(rep.cells) == 24
    assert {(c.model, c.composition) for c in rep.cells} == {
        (m, comp) for m in ev.MODEL_ORDER for comp in ("R", "RG", "RGB")}
    assert all(c.chosen[0].keys() == {"best_epoch"} for c in rep.cells if c.model == "CNN")


def test_ablation_needs_three_channels():
    ds = toy_dataset()
    ds.images = ds.images[:, :1]
    plan = make_trial_plan(ds.labels, 0, models=["KNC"])
    with pytest.raises(ShapeError):
        run_ablation(ds, plan)


def test_green_signal_is_found_only_with_green():
    ds = toy_dataset(n_per_class=20, seed=5, signal_channel=1)
    cnn = CnnSettings(ArchSpec(stem_maps=4, blocks=((4, True), (4, True)), dense_hidden=8),
                      TrainConfig(learning_rate=0.05, epochs=8, batch_size=8), None)
    plan = make_trial_plan(ds.labels, 0, compositions=[MASK_R, MASK_RG], grids=SMALL_GRIDS, cnn_settings=cnn)
    rep = run_experiment(plan, ds)
    for model in ev.MODEL_ORDER:
        assert rep.cell(model, "rg").test_mean > rep.cell(model, "r").test_mean, model


def test_identical_images_give_the_majority_baseline():
    ds = toy_dataset(identical=True)
    plan = make_trial_plan(ds.labels, 0, grids=SMALL_GRIDS, cnn_settings=TINY_CNN)
    rep = run_ablation(ds, plan)
    # constant predictions on balanced parts: one class scores 2p/(1+p), p = 1/3, the rest 0
    p = 1 / 3
    baseline = (2 * p / (1 + p)) / 3
    for cell in rep.cells:
        assert np.allclose(cell.test_scores, baseline, atol=1e-12), cell.model
        assert np.allclose(cell.train_scores, baseline, atol=1e-12), cell.model
