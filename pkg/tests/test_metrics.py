import numpy as np
import pytest

from qlfnet.errors import ShapeError
from qlfnet.metrics import confusion_matrix, f1_macro, f1_per_class, f1_score

from oracles import f1_bruteforce


def test_perfect_prediction():
    assert f1_macro([0, 1, 2, 2], [0, 1, 2, 2]) == 1.0


def test_total_confusion():
    assert f1_macro([0, 0, 1, 1], [1, 1, 0, 0]) == 0.0


def test_hand_enumerated_case():
    y, p = [0, 0, 1, 1], [0, 1, 1, 1]
    assert f1_per_class(y, p, 0) == pytest.approx(2 / 3, abs=1e-15)
    assert f1_per_class(y, p, 1) == pytest.approx(0.8, abs=1e-15)
    assert f1_macro(y, p) == pytest.approx(0.7333333333333333, abs=1e-15)


def test_length_mismatch():
    with pytest.raises(ShapeError):
        f1_macro([0, 1], [0])
    with pytest.raises(ShapeError):
        f1_macro([], [])


def test_never_predicted_class_counts_zero():
    # class 1 is never predicted: its F1 is 0, not excluded
    assert f1_macro([0, 1], [0, 0]) == pytest.approx((2 / 3 + 0.0) / 2)


def test_absent_true_class_is_excluded():
    # class 2 only appears in predictions: it does not enter the mean
    assert f1_macro([0, 0, 1], [0, 2, 1]) == pytest.approx((2 / 3 + 1.0) / 2)


def test_micro_and_weighted():
    y, p = [0, 0, 0, 1], [0, 0, 1, 1]
    assert f1_score(y, p, "micro") == pytest.approx(0.75)
    per = [f1_per_class(y, p, 0), f1_per_class(y, p, 1)]
    assert f1_score(y, p, "weighted") == pytest.approx((3 * per[0] + per[1]) / 4)
    with pytest.raises(ValueError):
        f1_score(y, p, "harmonic")


def test_confusion_matrix_layout():
    cm = confusion_matrix([0, 1, 1], [1, 1, 0])
    assert cm.tolist() == [[0, 1], [1, 1]]


def test_matches_bruteforce_on_random_vectors():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        k = int(rng.integers(1, 6))
        n = int(rng.integers(1, 60))
        y = rng.integers(0, k, n)
        p = rng.integers(0, k, n)
        assert abs(f1_macro(y, p) - f1_bruteforce(y, p)) <= 1e-12
